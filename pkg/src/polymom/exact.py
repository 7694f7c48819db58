"""Exact polynomial arithmetic over independent standard Gaussians.

Polynomials are sparse maps from monomials to :class:`fractions.Fraction`
coefficients. A monomial is a tuple of ``(variable, exponent)`` pairs sorted
by variable index with no zero exponents, e.g. ``((0, 2), (1, 4))`` is
``w0**2 * w1**4``.

Expectations use E[w**(2k)] = (2k-1)!! and E[w**(2k+1)] = 0 for each
coordinate independently, so every value here is an exact rational.
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from numbers import Rational
from typing import Iterable, Mapping

from .errors import TermCapError

Monomial = tuple  # tuple[tuple[int, int], ...]

DEFAULT_TERM_CAP = 5_000_000

ONE: Monomial = ()


@lru_cache(maxsize=None)
def double_factorial(n: int) -> int:
    """n!! for n >= 0 (0!! = 1)."""
    if n < 0:
        raise ValueError(f"double_factorial needs n >= 0, got {n}")
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def monomial(exponents: Mapping[int, int] | Iterable[tuple[int, int]]) -> Monomial:
    """Canonical monomial key from a ``{var: exp}`` map or pair list."""
    items = exponents.items() if isinstance(exponents, Mapping) else exponents
    acc: dict[int, int] = {}
    for var, exp in items:
        if exp < 0:
            raise ValueError("negative exponent")
        if exp:
            acc[var] = acc.get(var, 0) + exp
    return tuple(sorted(acc.items()))


def monomial_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


def monomial_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    acc = dict(a)
    for var, exp in b:
        acc[var] = acc.get(var, 0) + exp
    return tuple(sorted(acc.items()))


def gaussian_monomial_expectation(m: Monomial) -> Fraction:
    """E[m(w)] for w ~ N(0, I); zero as soon as one exponent is odd."""
    out = 1
    for _, exp in m:
        if exp % 2:
            return Fraction(0)
        out *= double_factorial(exp - 1)
    return Fraction(out)


def _grlex_key(m: Monomial):
    # Ascending total degree, then descending exponents variable by variable.
    nvars = (m[-1][0] + 1) if m else 0
    dense = [0] * nvars
    for var, exp in m:
        dense[var] = exp
    return (monomial_degree(m), tuple(-e for e in dense))


def _to_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, Rational)):
        return Fraction(c)
    if isinstance(c, float):
        return Fraction(c)  # exact binary value of the double
    if isinstance(c, str):
        return Fraction(c)
    # numpy scalars and the like
    return Fraction(float(c))


class ExactPoly:
    """Sparse multivariate polynomial with exact rational coefficients.

    Zero coefficients are never stored and iteration follows graded
    lexicographic order, so equality and serialization are canonical.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Monomial, object] | None = None):
        clean: dict[Monomial, Fraction] = {}
        if terms:
            for mono, coeff in terms.items():
                key = monomial(mono)
                c = _to_fraction(coeff)
                if c:
                    clean[key] = clean.get(key, Fraction(0)) + c
                    if not clean[key]:
                        del clean[key]
        self._terms = clean

    @classmethod
    def _raw(cls, terms: dict) -> "ExactPoly":
        obj = cls.__new__(cls)
        obj._terms = terms
        return obj

    @classmethod
    def constant(cls, c) -> "ExactPoly":
        return cls({ONE: c})

    @classmethod
    def variable(cls, var: int, coeff=1, power: int = 1) -> "ExactPoly":
        return cls({((var, power),): coeff})

    @classmethod
    def power_sum(cls, coeffs, p: int) -> "ExactPoly":
        """sum_t coeffs[t] * w_t**p."""
        return cls({((t, p),): c for t, c in enumerate(coeffs)})

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return sorted(self._terms.items(), key=lambda kv: _grlex_key(kv[0]))

    def __len__(self):
        return len(self._terms)

    def __eq__(self, other):
        if isinstance(other, ExactPoly):
            return self._terms == other._terms
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def __repr__(self):
        if not self._terms:
            return "ExactPoly(0)"
        parts = []
        for mono, c in self.items():
            m = "*".join(f"w{v}^{e}" if e > 1 else f"w{v}" for v, e in mono) or "1"
            parts.append(f"{c}*{m}")
        return "ExactPoly(" + " + ".join(parts) + ")"

    def degree(self) -> int:
        return max((monomial_degree(m) for m in self._terms), default=0)

    def __add__(self, other: "ExactPoly") -> "ExactPoly":
        out = dict(self._terms)
        for mono, c in other._terms.items():
            v = out.get(mono, 0) + c
            if v:
                out[mono] = v
            else:
                out.pop(mono, None)
        return ExactPoly._raw(out)

    def __neg__(self):
        return ExactPoly._raw({m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c) -> "ExactPoly":
        c = _to_fraction(c)
        if not c:
            return ExactPoly()
        return ExactPoly._raw({m: c * v for m, v in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, ExactPoly):
            return poly_mul(self, other)
        return self.scale(other)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        return poly_pow(self, k)

    def to_json(self) -> list:
        return [
            {"exponents": [[v, e] for v, e in mono],
             "coeff": f"{c.numerator}/{c.denominator}"}
            for mono, c in self.items()
        ]

    @classmethod
    def from_json(cls, data: list) -> "ExactPoly":
        return cls({tuple(tuple(pair) for pair in t["exponents"]): Fraction(t["coeff"])
                    for t in data})


def poly_mul(a: ExactPoly, b: ExactPoly, term_cap: int = DEFAULT_TERM_CAP) -> ExactPoly:
    out: dict[Monomial, Fraction] = {}
    for ma, ca in a._terms.items():
        for mb, cb in b._terms.items():
            key = monomial_mul(ma, mb)
            out[key] = out.get(key, 0) + ca * cb
        if len(out) > term_cap:
            raise TermCapError(f"product exceeds term cap {term_cap}")
    return ExactPoly._raw({m: c for m, c in out.items() if c})


def poly_pow(a: ExactPoly, k: int, term_cap: int = DEFAULT_TERM_CAP) -> ExactPoly:
    """a**k by binary exponentiation; raises TermCapError past ``term_cap`` terms."""
    if k < 1:
        raise ValueError("poly_pow needs k >= 1")
    result = None
    base = a
    while k:
        if k & 1:
            result = base if result is None else poly_mul(result, base, term_cap)
        k >>= 1
        if k:
            base = poly_mul(base, base, term_cap)
    return result


def gaussian_expectation(p: ExactPoly) -> Fraction:
    return sum((c * gaussian_monomial_expectation(m) for m, c in p._terms.items()),
               Fraction(0))


def expectation_times(p: ExactPoly, m: Monomial) -> Fraction:
    """E[m(w) * p(w)] without materializing the product polynomial."""
    total = Fraction(0)
    for mono, c in p._terms.items():
        total += c * gaussian_monomial_expectation(monomial_mul(mono, m))
    return total
