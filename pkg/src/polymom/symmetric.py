"""Intra-component moments, power sums and weight recovery.

For one output coordinate G_k = sum_i a_i (v_i . w)**p with orthonormal v_i,
the even moments M^{2n} = E[G_k**(2n)] are polynomials in the power sums
F[m] = sum_i y_i**m of y_i = a_i**2. Inverting that triangular system order
by order gives F[1..r]; Newton's identities and a monic root solve then give
the weights.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DegenerateCoefficientError, RootFindingError
from .exact import double_factorial

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerSums:
    """F[1..r]; index with the power, ``F[1]`` is the plain sum."""

    values: tuple

    def __getitem__(self, n: int):
        if n < 1:
            raise IndexError("power sums are 1-based")
        return self.values[n - 1]

    def __len__(self):
        return len(self.values)

    @classmethod
    def of(cls, y: Sequence) -> "PowerSums":
        return cls(tuple(sum(v**n for v in y) for n in range(1, len(y) + 1)))


@dataclass(frozen=True)
class PartitionCoeff:
    partition: tuple
    multiplier: Fraction


def integer_partitions(n: int, max_parts: int | None = None, min_part: int = 1):
    """Weakly increasing partitions of n, optionally capped in length."""
    if max_parts is None:
        max_parts = n
    if n == 0:
        yield ()
        return
    if max_parts == 0:
        return
    for first in range(min_part, n + 1):
        for rest in integer_partitions(n - first, max_parts - 1, first):
            yield (first,) + rest


def set_partitions(items: Sequence):
    """All set partitions of ``items`` (as lists of blocks)."""
    items = list(items)
    if not items:
        yield []
        return
    head, tail = items[0], items[1:]
    for part in set_partitions(tail):
        yield [[head]] + part
        for i in range(len(part)):
            yield part[:i] + [[head] + part[i]] + part[i + 1:]


def _multiplicity_factor(partition: Sequence[int]) -> int:
    out = 1
    for v in set(partition):
        out *= math.factorial(partition.count(v))
    return out


def partition_multiplier(partition: Sequence[int], p: int) -> Fraction:
    n = sum(partition)
    num = Fraction(math.factorial(2 * n))
    for a in partition:
        num *= Fraction(double_factorial(2 * p * a - 1), math.factorial(2 * a))
    return num / _multiplicity_factor(partition)


@lru_cache(maxsize=None)
def moment_expansion_coeffs(n: int, r: int, p: int = 3) -> tuple:
    """Coefficients of M^{2n} on the distinct-index sums F[a_1..a_j].

    One entry per partition of n into at most r parts.
    """
    if not 1 <= n:
        raise ValueError("n must be >= 1")
    return tuple(PartitionCoeff(part, partition_multiplier(part, p))
                 for part in integer_partitions(n, max_parts=r))


def f_value(partition: Sequence[int], F, *, drop_full_block: bool = False):
    """F[a_1, ..., a_t] from plain power sums via the signed set-partition formula.

    With ``drop_full_block`` the single-block term (-1)^(t-1) (t-1)! F[sum a]
    is left out, which is the part that only involves lower power sums.
    """
    if not isinstance(F, PowerSums):
        F = PowerSums(tuple(F))
    t = len(partition)
    total = 0
    for blocks in set_partitions(range(t)):
        k = len(blocks)
        if drop_full_block and k == 1:
            continue
        coeff = (-1) ** (t - k)
        for block in blocks:
            coeff *= math.factorial(len(block) - 1)
        term = coeff
        for block in blocks:
            term = term * F[sum(partition[i] for i in block)]
        total = total + term
    return total


def dominance_terms(n: int, p: int = 3) -> list:
    """T_1..T_n with S_n / (2n)! = sum_j T_j, grouped by number of parts."""
    terms = [Fraction(0)] * n
    for part in integer_partitions(n):
        j = len(part)
        c = partition_multiplier(part, p) / math.factorial(2 * n)
        terms[j - 1] += (-1) ** (j - 1) * math.factorial(j - 1) * c
    return terms


@lru_cache(maxsize=None)
def s_coefficient(n: int, p: int = 3) -> Fraction:
    """Leading coefficient of F[n] in M^{2n}."""
    total = Fraction(0)
    for part in integer_partitions(n):
        j = len(part)
        total += (-1) ** (j - 1) * math.factorial(j - 1) * partition_multiplier(part, p)
    return total


def moments_to_power_sums(moments: Sequence, r: int, p: int = 3) -> PowerSums:
    """Solve F[1..r] from M^2, M^4, ..., M^{2r}.

    Exact inputs (Fractions) stay exact; floats propagate as floats.
    """
    if len(moments) != r:
        raise ValueError(f"expected {r} moments, got {len(moments)}")
    F: list = []
    for n in range(1, r + 1):
        s_n = s_coefficient(n, p)
        if s_n == 0:
            raise DegenerateCoefficientError(
                f"S_{n} vanishes for activation degree {p}; order {n} is not invertible")
        known = PowerSums(tuple(F) + (0,))  # F[n] slot unused by the H-part
        lower = 0
        for pc in moment_expansion_coeffs(n, r, p):
            if len(pc.partition) == 1:
                continue
            lower = lower + pc.multiplier * f_value(pc.partition, known, drop_full_block=True)
        # the full-block terms of every partition add up to S_n F[n]
        F.append((moments[n - 1] - lower) / s_n)
    return PowerSums(tuple(F))


def elementary_symmetric(F: PowerSums) -> list:
    """e_1..e_r from power sums by Newton's identities."""
    r = len(F)
    e = [1]
    for k in range(1, r + 1):
        acc = 0
        for i in range(1, k + 1):
            acc = acc + (-1) ** (i - 1) * e[k - i] * F[i]
        e.append(acc / k)
    return e[1:]


def _monic_coeffs(e: Sequence) -> list:
    # t^r - e1 t^(r-1) + e2 t^(r-2) - ...
    return [1.0] + [(-1) ** (k + 1) * float(ek) for k, ek in enumerate(e)]


def power_sums_to_weights(F: PowerSums, *, complex_tol: float = 1e-6,
                          negative_tol: float = 1e-6) -> np.ndarray:
    """Weights a_i = sqrt(y_i) sorted ascending, y_i the roots fixed by F."""
    e = elementary_symmetric(F)
    coeffs = _monic_coeffs(e)
    r = len(e)
    if r == 1:
        roots = np.array([coeffs[1] * -1.0], dtype=complex)
    else:
        companion = np.zeros((r, r))
        companion[0, :] = -np.asarray(coeffs[1:])
        companion[1:, :-1] = np.eye(r - 1)
        roots = np.linalg.eigvals(companion)
    scale = max(1.0, max(abs(float(v)) for v in e))
    if np.max(np.abs(roots.imag)) > complex_tol * scale:
        raise RootFindingError(
            f"power sums give complex roots (max imag {np.max(np.abs(roots.imag)):.3g}); "
            "moments too noisy")
    y = np.sort(roots.real)
    poly = np.poly1d(coeffs)
    deriv = poly.deriv()
    for i, t in enumerate(y):
        dv = deriv(t)
        if abs(dv) > 1e-8 * scale:
            y[i] = t - poly(t) / dv
    y = np.sort(y)
    neg_scale = negative_tol * max(1.0, float(np.max(np.abs(y))))
    if y[0] < -neg_scale:
        raise RootFindingError(f"negative squared weight {y[0]:.3g}")
    if y[0] < 0:
        # with an infinite tolerance the caller only wants a starting point
        level = logging.WARNING if math.isfinite(negative_tol) else logging.DEBUG
        log.log(level, "clamping squared weight %.3g to 0", y[0])
        y = np.maximum(y, 0.0)
    return np.sqrt(y)
