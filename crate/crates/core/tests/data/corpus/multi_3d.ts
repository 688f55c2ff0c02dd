@problemName ThreeDim
@dimensions 3
@equalLength true
@seriesLength 4
@classLabel true 0 1 2
@data
1,2,3,4:0,0,1,1:9,8,7,6:0
2,3,4,5:1,1,0,0:6,7,8,9:1
3,4,5,6:0,1,0,1:5,5,5,5:2
4,5,6,7:1,0,1,0:4,4,5,5:0
