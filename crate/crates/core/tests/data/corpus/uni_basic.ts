@problemName UniBasic
@univariate true
@equalLength true
@seriesLength 5
@classLabel true a b
@data
1,2,3,4,5:a
5,4,3,2,1:b
2,2,3,3,4:a
0.5,-0.5,1.5,-1.5,2.5:b
