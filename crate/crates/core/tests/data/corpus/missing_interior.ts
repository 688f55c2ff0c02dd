@problemName MissingInterior
@univariate true
@missing true
@classLabel true a b
@data
1,?,3,4:a
2,4,?,8:b
0,?,?,3:a
