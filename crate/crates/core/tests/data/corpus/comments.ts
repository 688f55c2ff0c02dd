% this corpus file interleaves comments and blank lines
@problemName Comments

% header continues after a comment
@univariate true
@classLabel true p q
% data follows
@data

1,2,3:p
% a comment between records
3,2,1:q

2,2,2.5:p
