@problemName VarLen
@univariate true
@equalLength false
@classLabel true x y
@data
1,2,3:x
1,2,3,4,5,6,7:y
0,1:x
5,5,5,5:y
