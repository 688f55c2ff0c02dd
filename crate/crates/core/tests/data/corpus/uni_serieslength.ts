@problemName DeclaredLength
@univariate true
@equalLength true
@seriesLength 6
@classLabel true n0 n1 n2
@data
0,1,2,3,4,5:n0
5,4,3,2,1,0:n1
1,3,5,2,4,6:n2
2,2,2,3,3,3:n0
-1,-2,-3,-4,-5,-6:n1
0.1,0.2,0.3,0.4,0.5,0.6:n2
