"""Independent reference computations the library is checked against.

None of these share code paths with the package: expectations are expanded
with sympy and Isserlis moments, symmetric sums by brute force over index
tuples, and Monte-Carlo estimates by direct evaluation.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import sympy as sp


def gaussian_moment(k: int) -> int:
    """E[w**k] for standard normal w, from the closed form (k-1)!! or 0."""
    if k % 2:
        return 0
    return math.prod(range(k - 1, 0, -2)) if k > 0 else 1


def sympy_expectation(expr, symbols) -> Fraction:
    """E[expr(w)] by full expansion, one Gaussian moment per variable."""
    poly = sp.Poly(sp.expand(expr), *symbols)
    total = sp.Integer(0)
    for exps, coeff in poly.terms():
        total += coeff * math.prod(gaussian_moment(e) for e in exps)
    total = sp.Rational(total)
    return Fraction(int(total.p), int(total.q))


def mc_expectation(terms, nvars: int, n: int, seed: int = 0):
    """Monte-Carlo mean and stderr of sum c * prod w_v**e_v.

    ``terms`` is a list of (coeff, {var: exp}).
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, max(nvars, 1)))
    vals = np.zeros(n)
    for coeff, exps in terms:
        t = np.full(n, float(coeff))
        for v, e in exps.items():
            t *= w[:, v] ** e
        vals += t
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def distinct_index_sum(parts, y) -> Fraction:
    """sum over distinct index tuples (i_1..i_t) of prod y_{i_k}**parts[k]."""
    total = Fraction(0)
    for idx in itertools.permutations(range(len(y)), len(parts)):
        total += math.prod(Fraction(y[i]) ** a for i, a in zip(idx, parts))
    return total


def moment_of_power_sum(alpha, p: int, order: int) -> Fraction:
    """E[(sum_i alpha_i w_i**p)**order] by sympy expansion."""
    w = sp.symbols(f"w0:{len(alpha)}")
    expr = sum(sp.Rational(Fraction(a).numerator, Fraction(a).denominator) * wi**p
               for a, wi in zip(alpha, w)) ** order
    return sympy_expectation(expr, w)


def ce_entry(lam, p: int, exps, j: int) -> Fraction:
    """E[w**exps * Q**(2j-1)] with Q = sum lam_t w_t**p, by sympy."""
    w = sp.symbols(f"w0:{len(lam)}")
    q = sum(sp.Rational(Fraction(a).numerator, Fraction(a).denominator) * wi**p
            for a, wi in zip(lam, w))
    mono = math.prod(wi**e for wi, e in zip(w, exps))
    return sympy_expectation(mono * q ** (2 * j - 1), w)


def joint_moment_mc(alpha_i, V_i, alpha_j, V_j, p, order, n, seed=0):
    """Monte-Carlo E[G_i**order G_j] for two single-output generators."""
    rng = np.random.default_rng(seed)
    d = V_i.shape[1]
    w = rng.standard_normal((n, d))
    gi = ((w @ V_i.T) ** p) @ alpha_i
    gj = ((w @ V_j.T) ** p) @ alpha_j
    vals = gi**order * gj
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))
