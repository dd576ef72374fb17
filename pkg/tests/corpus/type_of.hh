% first-order type inference; bound variables of abstractions are
% represented by constants, which lets a shadowed name pick up the
% outer type
type_of(1, int).
type_of(plus, arrow(int, arrow(int, int))).
type_of(app(E1, E2), T1) :- type_of(E1, arrow(T2, T1)), type_of(E2, T2).
type_of(abst(X, E), arrow(T1, T2)) :- type_of(X, T1) => type_of(E, T2).
