"""Small exact linear-algebra helpers over Fractions / integers."""
from __future__ import annotations

from fractions import Fraction


def bareiss_det(rows) -> Fraction:
    """Determinant by fraction-free elimination.

    Integer input stays in integers throughout; rational input is scaled to
    a common denominator first.
    """
    a = [list(r) for r in rows]
    n = len(a)
    if n == 0:
        return Fraction(1)
    denom = 1
    if any(isinstance(x, Fraction) and x.denominator != 1 for r in a for x in r):
        import math
        for i, row in enumerate(a):
            lcm = 1
            for x in row:
                lcm = lcm * Fraction(x).denominator // math.gcd(lcm, Fraction(x).denominator)
            a[i] = [int(Fraction(x) * lcm) for x in row]
            denom *= lcm
    else:
        a = [[int(x) for x in r] for r in a]
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return Fraction(0)
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        akk = a[k][k]
        for i in range(k + 1, n):
            aik = a[i][k]
            row_i, row_k = a[i], a[k]
            for j in range(k + 1, n):
                row_i[j] = (row_i[j] * akk - aik * row_k[j]) // prev
        prev = akk
    return Fraction(sign * a[n - 1][n - 1], denom)


def rref(rows):
    """Reduced row echelon form; returns (matrix, pivot column list)."""
    m = [[Fraction(x) for x in r] for r in rows]
    nrows = len(m)
    ncols = len(m[0]) if m else 0
    pivots = []
    row = 0
    for col in range(ncols):
        if row >= nrows:
            break
        piv = next((i for i in range(row, nrows) if m[i][col] != 0), None)
        if piv is None:
            continue
        m[row], m[piv] = m[piv], m[row]
        inv = 1 / m[row][col]
        m[row] = [x * inv for x in m[row]]
        for i in range(nrows):
            if i != row and m[i][col] != 0:
                f = m[i][col]
                m[i] = [a - f * b for a, b in zip(m[i], m[row])]
        pivots.append(col)
        row += 1
    return m, pivots


def rank(rows) -> int:
    return len(rref(rows)[1])


def nullspace(rows) -> list:
    """Basis of {x : A x = 0}, each vector with a 1 on its own free column."""
    m, pivots = rref(rows)
    ncols = len(rows[0])
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for f in free:
        v = [Fraction(0)] * ncols
        v[f] = Fraction(1)
        for i, pc in enumerate(pivots):
            v[pc] = -m[i][f]
        basis.append(v)
    return basis


def solve_least_squares_exact(rows, rhs):
    """Exact solution of the normal equations restricted to pivot columns.

    For a consistent system this is an exact solution with free variables
    fixed to zero; otherwise it is the exact least-squares solution on the
    pivot columns.
    """
    _, pivots = rref(rows)
    sub = [[Fraction(r[c]) for c in pivots] for r in rows]
    b = [Fraction(x) for x in rhs]
    k = len(pivots)
    ata = [[sum(sub[i][a] * sub[i][c] for i in range(len(sub))) for c in range(k)]
           for a in range(k)]
    atb = [sum(sub[i][a] * b[i] for i in range(len(sub))) for a in range(k)]
    aug = [ata[i] + [atb[i]] for i in range(k)]
    red, _ = rref(aug)
    sol = [Fraction(0)] * len(rows[0])
    for i, c in enumerate(pivots):
        sol[c] = red[i][k]
    return sol, pivots
