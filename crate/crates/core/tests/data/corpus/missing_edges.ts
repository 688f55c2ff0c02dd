@problemName MissingEdges
@univariate true
@missing true
@classLabel true a b
@data
?,2,3,4:a
1,2,3,?:b
?,?,3,4:a
