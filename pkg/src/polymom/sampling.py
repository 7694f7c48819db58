"""Target synthesis, generator evaluation and moment tables."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .ce import basis_size, build_ce_matrix, enumerate_basis, pvector
from .errors import PolymomError, SynthesisError
from .exact import DEFAULT_TERM_CAP
from .symmetric import PowerSums, f_value, moment_expansion_coeffs

ORTHO_TOL = 1e-10


@dataclass
class GeneratorSpec:
    """G_k(w) = sum_i alpha[k, i] * (V[k, i] . w)**p for k < D.

    ``alpha`` is D x r, ``V`` is D x r x d with orthonormal rows per block.
    """

    D: int
    d: int
    r: int
    p: int
    alpha: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(self.D, self.r)
        self.V = np.asarray(self.V, dtype=float).reshape(self.D, self.r, self.d)
        self.validate()

    def validate(self, tol: float = ORTHO_TOL):
        if self.p < 1 or self.p % 2 == 0:
            raise ValueError("activation degree p must be odd")
        if self.r > self.d:
            raise ValueError(f"r={self.r} exceeds latent dimension d={self.d}")
        for k in range(self.D):
            gram = self.V[k] @ self.V[k].T
            if np.abs(gram - np.eye(self.r)).max() > tol:
                raise ValueError(f"direction block {k} is not orthonormal")

    def is_robust(self, tau: float, A: float) -> bool:
        return all(_robust(row, tau, A) for row in self.alpha)

    def overlap(self, k: int, l: int) -> np.ndarray:
        """P with P[a, b] = v_k^(a) . v_l^(b)."""
        return self.V[k] @ self.V[l].T

    def overlap_truth(self) -> "OverlapTruth":
        mats = {(k, l): self.overlap(k, l)
                for k in range(self.D) for l in range(self.D) if k != l}
        return OverlapTruth(mats)

    def stack(self) -> np.ndarray:
        """All Dr direction rows, component-major."""
        return self.V.reshape(self.D * self.r, self.d)

    def weighted_stack(self) -> np.ndarray:
        """Rows alpha^(1/p) v; K K^T is the rotation-invariant parameter Gram."""
        root = np.sign(self.alpha) * np.abs(self.alpha) ** (1.0 / self.p)
        return root.reshape(-1, 1) * self.stack()

    def gram(self) -> np.ndarray:
        s = self.stack()
        return s @ s.T

    def to_json(self) -> dict:
        return {"D": self.D, "d": self.d, "r": self.r, "p": self.p,
                "alpha": self.alpha.tolist(), "V": self.V.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorSpec":
        try:
            return cls(int(obj["D"]), int(obj["d"]), int(obj["r"]), int(obj["p"]),
                       np.asarray(obj["alpha"], dtype=float), np.asarray(obj["V"], dtype=float))
        except KeyError as exc:
            raise PolymomError(f"generator JSON is missing field {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def _robust(row, tau, A) -> bool:
    row = np.sort(np.asarray(row))
    if np.any(row <= tau) or np.any(row >= A):
        return False
    return bool(np.all(np.diff(row) > tau))


@dataclass
class OverlapTruth:
    P: dict

    def residuals(self, pair) -> np.ndarray:
        """Q_b with Q_b^2 = 1 - sum_a P_ab^2, clamped at 0."""
        m = self.P[pair]
        return np.sqrt(np.maximum(0.0, 1.0 - (m**2).sum(axis=0)))


def haar_orthogonal_block(d: int, r: int, seed=None) -> np.ndarray:
    """First r rows of a Haar-random d x d orthogonal matrix."""
    if r > d:
        raise ValueError("r must not exceed d")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal((d, d))
    q, rr = np.linalg.qr(z)
    q = q * np.sign(np.diag(rr))  # unique factorization with positive diag(R)
    return q[:, :r].T.copy()


def synthesize_target(D: int, d: int, r: int, p: int = 3, M: float = 3.0, sigma: float = 1.0,
                      tau: float = 0.1, A: float = 10.0, seed=None,
                      max_rejections: int = 10_000) -> GeneratorSpec:
    """Weights i.i.d. N(M, sigma^2) redrawn per component until (tau, A)-robust,
    directions Haar. Weights are stored ascending within each component."""
    if r > d:
        raise ValueError("r must not exceed d")
    if not tau < A:
        raise ValueError("need tau < A")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    alpha = np.empty((D, r))
    V = np.empty((D, r, d))
    for k in range(D):
        for _ in range(max_rejections):
            w = rng.normal(M, sigma, size=r)
            if _robust(w, tau, A):
                break
        else:
            raise SynthesisError(
                f"no ({tau}, {A})-robust weights in {max_rejections} draws for component {k}")
        order = np.argsort(w)
        alpha[k] = w[order]
        V[k] = haar_orthogonal_block(d, r, rng)
    return GeneratorSpec(D, d, r, p, alpha, V)


def evaluate(G: GeneratorSpec, omega) -> np.ndarray:
    """G(omega) for one latent vector (d,) or a batch (N, d)."""
    omega = np.asarray(omega, dtype=float)
    proj = np.einsum("kid,...d->...ki", G.V, omega)
    return np.einsum("ki,...ki->...k", G.alpha, proj**G.p)


@dataclass
class MomentTable:
    """Even intra moments per component and odd joint moments per ordered pair.

    ``intra[k][n-1]`` is E[G_k^(2n)], n = 1..r; ``inter[(i, j)][m-1]`` is
    E[G_i^(2m-1) G_j], m = 1..K. Exact tables hold Fractions.
    """

    D: int
    r: int
    p: int
    intra: list
    inter: dict
    source: str = "exact"
    N: int | None = None
    seed: int | None = None
    intra_stderr: list | None = None
    inter_stderr: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return basis_size(self.r, self.p)

    @property
    def exact(self) -> bool:
        return self.source == "exact"

    def pairs(self):
        return [(i, j) for i in range(self.D) for j in range(self.D) if i != j]

    def validate(self):
        if len(self.intra) != self.D:
            raise PolymomError(f"table has {len(self.intra)} intra rows, expected D={self.D}")
        for k, row in enumerate(self.intra):
            if len(row) != self.r:
                raise PolymomError(f"intra moments of component {k}: {len(row)} orders, need {self.r}")
        for pair in self.pairs():
            if pair not in self.inter:
                raise PolymomError(f"joint moments missing for pair {pair}")
            if len(self.inter[pair]) != self.K:
                raise PolymomError(
                    f"joint moments of pair {pair}: {len(self.inter[pair])} orders, need {self.K}")

    # serialization ----------------------------------------------------

    def _rows(self):
        for k, row in enumerate(self.intra):
            for n, v in enumerate(row, start=1):
                se = None if self.intra_stderr is None else self.intra_stderr[k][n - 1]
                yield {"kind": "intra", "k": k, "i": k, "j": "", "order": 2 * n,
                       "value": v, "stderr": se}
        for (i, j) in sorted(self.inter):
            for m, v in enumerate(self.inter[(i, j)], start=1):
                se = None if self.inter_stderr is None else self.inter_stderr[(i, j)][m - 1]
                yield {"kind": "inter", "k": "", "i": i, "j": j, "order": 2 * m - 1,
                       "value": v, "stderr": se}

    def to_json(self) -> dict:
        def enc(v):
            if isinstance(v, Fraction):
                return {"value": float(v), "exact": f"{v.numerator}/{v.denominator}"}
            return {"value": float(v)}

        intra = []
        inter = []
        for row in self._rows():
            item = {"order": row["order"], **enc(row["value"])}
            if row["stderr"] is not None:
                item["stderr"] = float(row["stderr"])
            if row["kind"] == "intra":
                intra.append({"k": row["k"], **item})
            else:
                inter.append({"pair": [row["i"], row["j"]], **item})
        return {"source": self.source, "N": self.N, "seed": self.seed,
                "D": self.D, "r": self.r, "p": self.p, "K": self.K,
                "meta": self.meta, "intra": intra, "inter": inter}

    @classmethod
    def from_json(cls, obj: dict) -> "MomentTable":
        try:
            D, r, p = int(obj["D"]), int(obj["r"]), int(obj["p"])
        except KeyError as exc:
            raise PolymomError(f"moment table JSON is missing field {exc}") from None
        K = basis_size(r, p)

        def dec(item):
            return Fraction(item["exact"]) if "exact" in item else float(item["value"])

        has_se = any("stderr" in it for it in obj.get("intra", []) + obj.get("inter", []))
        intra = [[None] * r for _ in range(D)]
        intra_se = [[math.nan] * r for _ in range(D)] if has_se else None
        inter, inter_se = {}, ({} if has_se else None)
        for it in obj.get("intra", []):
            k, n = int(it["k"]), int(it["order"]) // 2
            if not (0 <= k < D and 1 <= n <= r):
                raise PolymomError(f"intra entry out of range: k={k}, order={it['order']}")
            intra[k][n - 1] = dec(it)
            if has_se:
                intra_se[k][n - 1] = float(it.get("stderr", math.nan))
        for it in obj.get("inter", []):
            pair = (int(it["pair"][0]), int(it["pair"][1]))
            m = (int(it["order"]) + 1) // 2
            inter.setdefault(pair, [None] * K)
            if not 1 <= m <= K:
                raise PolymomError(f"joint entry out of range: pair={pair}, order={it['order']}")
            inter[pair][m - 1] = dec(it)
            if has_se:
                inter_se.setdefault(pair, [math.nan] * K)[m - 1] = float(it.get("stderr", math.nan))
        for k, row in enumerate(intra):
            if any(v is None for v in row):
                raise PolymomError(f"intra moments of component {k} are incomplete")
        for pair, row in inter.items():
            if any(v is None for v in row):
                raise PolymomError(f"joint moments of pair {pair} are incomplete")
        table = cls(D, r, p, intra, inter, obj.get("source", "exact"), obj.get("N"),
                    obj.get("seed"), intra_se, inter_se, obj.get("meta") or {})
        table.validate()
        return table

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "k", "i", "j", "order", "value", "stderr", "exact"])
        for row in self._rows():
            v = row["value"]
            exact = f"{v.numerator}/{v.denominator}" if isinstance(v, Fraction) else ""
            se = "" if row["stderr"] is None else repr(float(row["stderr"]))
            w.writerow([row["kind"], row["k"], row["i"], row["j"], row["order"],
                        repr(float(v)), se, exact])
        return buf.getvalue()


class _Accumulator:
    """Chan-style merge of per-chunk (count, mean, M2) for many quantities."""

    def __init__(self, width: int):
        self.n = 0
        self.mean = np.zeros(width)
        self.m2 = np.zeros(width)

    def add_chunk(self, x: np.ndarray):
        nb = x.shape[0]
        mb = x.mean(axis=0)
        m2b = ((x - mb) ** 2).sum(axis=0)
        self.merge(nb, mb, m2b)

    def merge(self, nb, mb, m2b):
        na = self.n
        n = na + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / n)
        self.m2 = self.m2 + m2b + delta**2 * (na * nb / n)
        self.n = n

    def stderr(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def empirical_moment_table(G: GeneratorSpec, N: int, seed=0, *, r: int | None = None,
                           p: int | None = None, chunk: int = 65536) -> MomentTable:
    """Sample means of every moment the recovery consumes, in one pass.

    Chunk c draws its latents from child c of ``SeedSequence(seed)``, so the
    result depends only on (G, N, seed, chunk).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    r = G.r if r is None else r
    p = G.p if p is None else p
    K = basis_size(r, p)
    D = G.D
    pairs = [(i, j) for i in range(D) for j in range(D) if i != j]
    width = D * r + len(pairs) * K
    acc = _Accumulator(width)
    n_chunks = -(-N // chunk)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    for c in range(n_chunks):
        n = min(chunk, N - c * chunk)
        omega = np.random.default_rng(children[c]).standard_normal((n, G.d))
        out = evaluate(G, omega)
        cols = np.empty((n, width))
        sq = out * out
        col = 0
        for k in range(D):
            pw = sq[:, k].copy()
            for _ in range(r):
                cols[:, col] = pw
                pw *= sq[:, k]
                col += 1
        for i, j in pairs:
            pw = out[:, i] * out[:, j]
            for _ in range(K):
                cols[:, col] = pw
                pw = pw * sq[:, i]
                col += 1
        acc.add_chunk(cols)
    se = acc.stderr()
    mean = acc.mean
    intra = [list(mean[k * r:(k + 1) * r]) for k in range(D)]
    intra_se = [list(se[k * r:(k + 1) * r]) for k in range(D)]
    inter, inter_se = {}, {}
    base = D * r
    for t, pair in enumerate(pairs):
        inter[pair] = list(mean[base + t * K: base + (t + 1) * K])
        inter_se[pair] = list(se[base + t * K: base + (t + 1) * K])
    return MomentTable(D, r, p, intra, inter, "empirical", int(N),
                       None if seed is None else int(seed), intra_se, inter_se)


def exact_intra_moments(alpha, p: int = 3) -> list:
    """[E G^2, ..., E G^(2r)] exactly, for weights given as floats or Fractions."""
    y = [Fraction(a) ** 2 for a in alpha]
    r = len(y)
    F = PowerSums.of(y)
    out = []
    for n in range(1, r + 1):
        total = Fraction(0)
        for pc in moment_expansion_coeffs(n, r, p):
            total += pc.multiplier * f_value(pc.partition, F)
        out.append(total)
    return out


def exact_joint_moments(alpha_i, alpha_j, P, p: int = 3, *,
                        term_cap: int = DEFAULT_TERM_CAP) -> list:
    """[E G_i^(2m-1) G_j]_{m=1..K} exactly for the given weights and overlap P."""
    ce = build_ce_matrix(alpha_i, p, term_cap=term_cap)
    P = np.asarray(P, dtype=float)
    Pf = [[Fraction(float(x)) for x in row] for row in P]
    pv = pvector([Fraction(float(b)) for b in alpha_j], Pf, ce.basis)
    K = ce.K
    return [sum(pv[a] * ce.exact[a][m] for a in range(K)) for m in range(K)]


def exact_moment_table(G: GeneratorSpec, *, term_cap: int = DEFAULT_TERM_CAP) -> MomentTable:
    """Infinite-sample table, exact for the float parameters of ``G``."""
    intra = [exact_intra_moments(G.alpha[k], G.p) for k in range(G.D)]
    inter = {}
    ce_cache = {}
    basis = enumerate_basis(G.r, G.p)
    for i in range(G.D):
        for j in range(G.D):
            if i == j:
                continue
            if i not in ce_cache:
                ce_cache[i] = build_ce_matrix(G.alpha[i], G.p, term_cap=term_cap)
            ce = ce_cache[i]
            P = G.overlap(i, j)
            Pf = [[Fraction(float(x)) for x in row] for row in P]
            pv = pvector([Fraction(float(b)) for b in G.alpha[j]], Pf, basis)
            inter[(i, j)] = [sum(pv[a] * ce.exact[a][m] for a in range(ce.K))
                             for m in range(ce.K)]
    return MomentTable(G.D, G.r, G.p, intra, inter, "exact")
