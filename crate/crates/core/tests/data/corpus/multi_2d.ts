@problemName MultiTwoDim
@dimensions 2
@equalLength true
@seriesLength 4
@classLabel true up down
@data
1,2,3,4:10,20,30,40:up
4,3,2,1:40,30,20,10:down
1,1,2,2:11,12,13,14:up
