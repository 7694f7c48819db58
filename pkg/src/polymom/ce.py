"""Odd-monomial basis and the expectation matrix T_ij = E[P_i * Q**(2j-1)].

Here Q = sum_t lam_t w_t**p and P_1..P_K are the odd-degree monomials of
degree <= p in r variables. Layout is degree-major, highest degree first;
inside a degree monomials are grouped by support size, then exponent
pattern, then the variable sequence (variables listed by exponent, largest
first). For p = 3 this gives

    w1^3..wr^3, w1^2 w2, w1^2 w3, ..., wr^2 w(r-1), w1 w2 w3, ..., w1..wr

which is the positional layout the p-vector decoder in ``recovery`` uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import exactla
from .exact import (DEFAULT_TERM_CAP, ExactPoly, _to_fraction, double_factorial,
                    expectation_times, poly_mul)


def basis_size(r: int, p: int) -> int:
    return sum(math.comb(r + 2 * i - 2, 2 * i - 1) for i in range(1, (p + 1) // 2 + 1))


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _order_key(exps: Sequence[int]):
    support = [(e, v) for v, e in enumerate(exps) if e]
    pattern = tuple(sorted((e for e, _ in support), reverse=True))
    varseq = tuple(v for e, v in sorted(support, key=lambda ev: (-ev[0], ev[1])))
    return (len(support), tuple(-e for e in pattern), varseq)


@dataclass(frozen=True)
class OddBasis:
    r: int
    p: int
    monomials: tuple
    exponents: tuple  # dense exponent tuples, same order

    def __len__(self):
        return len(self.monomials)

    def index(self, exps: Sequence[int]) -> int:
        return self.exponents.index(tuple(exps))

    def degree_slices(self) -> dict:
        """{degree: (start, stop)} of each degree block."""
        out = {}
        for i, e in enumerate(self.exponents):
            deg = sum(e)
            start, _ = out.get(deg, (i, i))
            out[deg] = (start, i + 1)
        return out

    def multinomials(self) -> np.ndarray:
        """deg! / prod(e_v!) for each basis monomial."""
        return np.array([math.factorial(sum(e)) // math.prod(math.factorial(x) for x in e)
                         for e in self.exponents], dtype=float)


def enumerate_basis(r: int, p: int) -> OddBasis:
    if r < 1:
        raise ValueError("r must be >= 1")
    if p < 1 or p % 2 == 0:
        raise ValueError("activation degree p must be odd and positive")
    dense = []
    for deg in range(p, 0, -2):
        block = sorted(_compositions(deg, r), key=_order_key)
        dense.extend(block)
    monos = tuple(tuple((v, e) for v, e in enumerate(ex) if e) for ex in dense)
    basis = OddBasis(r, p, monos, tuple(tuple(x) for x in dense))
    assert len(basis) == basis_size(r, p)
    return basis


@dataclass
class CEMatrix:
    """Exact K x K expectation matrix with a float mirror."""

    exact: list
    alpha: tuple
    r: int
    p: int
    basis: OddBasis
    values: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.values is None:
            self.values = np.array([[float(x) for x in row] for row in self.exact])

    @property
    def K(self) -> int:
        return len(self.basis)

    def to_json(self) -> dict:
        return {
            "r": self.r, "p": self.p,
            "alpha": [f"{a.numerator}/{a.denominator}" for a in self.alpha],
            "basis": [list(e) for e in self.basis.exponents],
            "entries": [[f"{x.numerator}/{x.denominator}" for x in row] for row in self.exact],
        }

    def to_csv(self) -> str:
        return "\n".join(",".join(repr(float(x)) for x in row) for row in self.values) + "\n"


def build_ce_matrix(alpha: Sequence, p: int = 3, *, term_cap: int = DEFAULT_TERM_CAP) -> CEMatrix:
    """CE matrix at weights ``alpha``.

    Floats are converted to their exact binary rationals, so entries are
    exact for the weights as given.
    """
    lam = tuple(_to_fraction(a) for a in alpha)
    if not lam:
        raise ValueError("alpha must be nonempty")
    r = len(lam)
    basis = enumerate_basis(r, p)
    K = len(basis)
    q = ExactPoly.power_sum(lam, p)
    q2 = poly_mul(q, q, term_cap)
    cur = q
    cols = []
    for j in range(K):
        cols.append([expectation_times(cur, m) for m in basis.monomials])
        if j + 1 < K:
            cur = poly_mul(cur, q2, term_cap)
    exact = [[cols[j][i] for j in range(K)] for i in range(K)]
    return CEMatrix(exact=exact, alpha=lam, r=r, p=p, basis=basis)


def pvector(beta: Sequence, P, basis: OddBasis) -> list:
    """Coefficients of sum_j beta_j (P_j . w + Q_j w')^p on the odd basis.

    The auxiliary Gaussian w' (orthogonal residual of each column, with
    Q_j^2 = 1 - |P_j|^2) is integrated out, leaving for each basis monomial
    m of degree p - 2s the coefficient
    C(p, 2s) (2s-1)!! multinom(m) sum_j beta_j Q_j^(2s) prod_x P_xj^m_x.

    Works on Fractions (exact) or floats, whatever ``beta`` and ``P`` hold.
    """
    p = basis.p
    r = basis.r
    cols = range(len(beta))
    rows = [[P[a][j] for j in cols] for a in range(r)]
    qsq = [1 - sum(rows[a][j] * rows[a][j] for a in range(r)) for j in cols]
    out = []
    for exps in basis.exponents:
        deg = sum(exps)
        m = p - deg
        lead = math.comb(p, m) * (1 if m == 0 else double_factorial(m - 1))
        lead *= math.factorial(deg) // math.prod(math.factorial(e) for e in exps)
        total = 0
        for j in cols:
            term = beta[j] * qsq[j] ** (m // 2)
            for a, e in enumerate(exps):
                if e:
                    term = term * rows[a][j] ** e
            total = total + term
        out.append(lead * total)
    return out


@dataclass
class GenericCheck:
    holds: bool
    status: str  # "holds" or "unknown"
    witness: tuple | None
    determinant: Fraction | None
    trials: int
    rank: int | None = None
    size: int | None = None

    def certificate(self) -> str:
        if self.holds:
            lam = ",".join(str(x) for x in self.witness)
            return (f"holds: det(CE[{lam}]) = {self.determinant.numerator}"
                    + ("" if self.determinant.denominator == 1
                       else f"/{self.determinant.denominator}"))
        return (f"unknown: determinant vanished at all {self.trials} witness points "
                f"(exact rank {self.rank} of {self.size})")


def generic_condition_check(r: int, p: int = 3, trials: int = 8, seed: int = 0,
                            *, term_cap: int = DEFAULT_TERM_CAP) -> GenericCheck:
    """Evaluate det(CE[lam]) exactly at small integer points.

    The first point is lam = (1, 2, ..., r); later ones are distinct random
    integers. One nonzero value certifies the determinant polynomial is not
    identically zero.
    """
    rng = np.random.default_rng(seed)
    last_rank = None
    size = basis_size(r, p)
    for t in range(trials):
        if t == 0:
            lam = tuple(range(1, r + 1))
        else:
            lam = tuple(int(x) for x in rng.choice(np.arange(1, 10 * r + 10), size=r, replace=False))
        ce = build_ce_matrix(lam, p, term_cap=term_cap)
        det = exactla.bareiss_det(ce.exact)
        if det != 0:
            return GenericCheck(True, "holds", lam, det, t + 1, size, size)
        last_rank = exactla.rank(ce.exact)
    return GenericCheck(False, "unknown", None, None, trials, last_rank, size)


@lru_cache(maxsize=None)
def _ce_structure(r: int, p: int):
    # T_ij = sum over compositions k of 2j-1 of
    #   multinom(k) * prod_t lam_t^k_t * prod_t E[w^(p k_t + e_it)]
    basis = enumerate_basis(r, p)
    K = len(basis)
    blocks = []
    for j in range(1, K + 1):
        n = 2 * j - 1
        comps = list(_compositions(n, r))
        powers = np.array(comps, dtype=float)
        coeff = np.zeros((K, len(comps)))
        for c, k in enumerate(comps):
            mult = math.factorial(n) // math.prod(math.factorial(x) for x in k)
            for i, e in enumerate(basis.exponents):
                val = mult
                for kt, et in zip(k, e):
                    m = p * kt + et
                    if m % 2:
                        val = 0
                        break
                    val *= double_factorial(m - 1) if m else 1
                coeff[i, c] = float(val)
        blocks.append((powers, coeff))
    return basis, blocks


def ce_matrix_float(alpha: Sequence, p: int = 3) -> np.ndarray:
    """Float CE matrix by direct multinomial expansion of Q^(2j-1).

    Much faster than :func:`build_ce_matrix` and accurate to rounding, which
    suits fitting loops that rebuild T at many trial weights.
    """
    lam = np.asarray(alpha, dtype=float)
    basis, blocks = _ce_structure(len(lam), p)
    out = np.empty((len(basis), len(basis)))
    for j, (powers, coeff) in enumerate(blocks):
        out[:, j] = coeff @ np.prod(lam[None, :] ** powers, axis=1)
    return out
