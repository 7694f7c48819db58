"""The expectation matrix that links joint moments to overlaps, and its null space.

For two outputs G_i, G_j the odd joint moments E[G_i^(2m-1) G_j] equal
p . T where T depends only on the weights of G_i and p only on the overlap
matrix P = V_i V_j^T and the weights of G_j. With one hidden unit T is
invertible; with two or more, Gaussian integration by parts makes some rows
dependent, whatever the weights.

    python demos/02_ce_matrix.py
"""
from fractions import Fraction

from polymom import exactla
from polymom.ce import build_ce_matrix, generic_condition_check

one = build_ce_matrix([1], 3)
print("r=1 basis:", one.basis.exponents)
print("r=1 matrix:", [[str(x) for x in row] for row in one.exact])
print(generic_condition_check(1, 3).certificate())

lam = [Fraction(2), Fraction(7)]
two = build_ce_matrix(lam, 3)
print("\nr=2 basis:", two.basis.exponents)
print("r=2 rank:", exactla.rank(two.exact), "of", two.K)

# -lam_1/lam_2 on w1^2 w2 plus 1 on w1 w2^2 is annihilated by every column
null = [0, 0, -lam[0] / lam[1], 1, 0, 0]
print("null vector times T:", [str(sum(null[a] * two.exact[a][m] for a in range(6)))
                               for m in range(6)])

for r, p in [(2, 3), (3, 3), (2, 5)]:
    print(generic_condition_check(r, p, trials=3).certificate())
