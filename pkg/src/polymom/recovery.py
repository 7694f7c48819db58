"""Parameter recovery from a moment table.

Weights come from the intra-component moments of each output coordinate.
Each ordered pair (i, j) then yields the overlap P = V_i V_j^T from the joint
moments s = p(beta, P) T(alpha_i), where T is the CE matrix and p the
p-vector of the overlap. The overlaps are stacked into the global Gram
matrix of all direction rows, which is factored back into directions.

T is singular for r >= 2 (see ``ce_nullspace``), so p is only determined
modulo the left null space of T. The overlap solve therefore works on the
identifiable part: a Jennrich decomposition of the min-norm p-vector seeds
a bounded least-squares fit of P itself.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import least_squares

from . import exactla
from .ce import CEMatrix, OddBasis, build_ce_matrix, enumerate_basis, pvector
from .errors import (DecompositionError, NumericalError, PolymomError, RootFindingError,
                     StageError)
from .sampling import GeneratorSpec, MomentTable, evaluate
from .seeds import stage_rng
from .symmetric import (PowerSums, f_value, moment_expansion_coeffs, moments_to_power_sums,
                        power_sums_to_weights)
from .tensor import SymTensor3, jennrich

log = logging.getLogger(__name__)

ZERO_TOL = 1e-12
TIE_TOL = 1e-9


# ---------------------------------------------------------------------------
# weights


def recover_weights(table: MomentTable, k: int, *, fallback: bool | None = None,
                    **root_opts) -> np.ndarray:
    """Ascending weights of component ``k`` from its even moments.

    For empirical tables (``fallback`` defaults to True there) a complex or
    negative root pair is not fatal: the real parts seed a least-squares fit
    of the weights to the moments, weighted by their standard errors.
    """
    if fallback is None:
        fallback = not table.exact
    try:
        F = moments_to_power_sums(table.intra[k], table.r, table.p)
    except NumericalError as exc:
        raise StageError("weights", k, exc) from exc
    try:
        return power_sums_to_weights(F, **root_opts)
    except RootFindingError as exc:
        if not fallback:
            raise StageError("weights", k, exc) from exc
        log.info("component %d: %s; fitting weights to moments instead", k, exc)
    init = power_sums_to_weights(F, complex_tol=math.inf, negative_tol=math.inf)
    return fit_weights_to_moments(table, k, init)


def intra_moments_float(alpha, p: int) -> np.ndarray:
    """[E G^2, ..., E G^(2r)] in floating point."""
    y = np.asarray(alpha, dtype=float) ** 2
    F = PowerSums.of(list(y))
    r = len(y)
    return np.array([sum(float(pc.multiplier) * f_value(pc.partition, F)
                         for pc in moment_expansion_coeffs(n, r, p)) for n in range(1, r + 1)])


def fit_weights_to_moments(table: MomentTable, k: int, init) -> np.ndarray:
    data = np.array([float(x) for x in table.intra[k]])
    se = (np.asarray(table.intra_stderr[k], dtype=float) if table.intra_stderr
          else np.maximum(np.abs(data), 1.0))
    w = 1.0 / np.maximum(se, 1e-300)
    x0 = np.maximum(np.asarray(init, dtype=float), 1e-6)
    res = least_squares(lambda a: (intra_moments_float(a, table.p) - data) * w, x0,
                        bounds=(0.0, np.inf), method="trf")
    return np.sort(res.x)


def weight_root_residual(table: MomentTable, k: int, alpha) -> float:
    """Relative mismatch between the moments of ``alpha`` and the table."""
    from .sampling import exact_intra_moments

    model = [float(x) for x in exact_intra_moments([float(a) for a in alpha], table.p)]
    data = [float(x) for x in table.intra[k]]
    return float(max(abs(m - d) / max(abs(d), 1.0) for m, d in zip(model, data)))


# ---------------------------------------------------------------------------
# p-vectors


class _PVectorMap:
    """Vectorized float p-vector map P -> p(beta, P) for one basis."""

    def __init__(self, basis: OddBasis):
        self.basis = basis
        p = basis.p
        self.exps = np.array(basis.exponents, dtype=float)  # K x r
        deg = self.exps.sum(axis=1).astype(int)
        self.half = (p - deg) // 2
        lead = [math.comb(p, p - g) * (1 if p == g else _dfact(p - g - 1)) for g in deg]
        self.lead = np.array(lead, dtype=float) * basis.multinomials()

    def __call__(self, beta, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        qsq = 1.0 - (P * P).sum(axis=0)
        mono = np.prod(P[None, :, :] ** self.exps[:, :, None], axis=1)  # K x r
        return self.lead * (mono * np.asarray(beta) * qsq[None, :] ** self.half[:, None]).sum(axis=1)


def _dfact(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


@dataclass
class PVector:
    """p-vector on the odd basis with its p = 3 style decoding.

    ``tensor`` holds entries sum_j beta_j P_xj P_yj P_zj (degree-3 block with
    its leading constant and multiplicities divided out); ``vector`` is the
    linear block divided by its leading constant, sum_j beta_j Q_j^(p-1) P_j
    up to the binomial factor.
    """

    values: np.ndarray
    basis: OddBasis

    @property
    def tensor(self) -> SymTensor3:
        r, p = self.basis.r, self.basis.p
        lead = math.comb(p, p - 3) * (1 if p == 3 else _dfact(p - 4))
        mult = self.basis.multinomials()
        data = np.zeros((r, r, r))
        for idx, exps in enumerate(self.basis.exponents):
            if sum(exps) != 3:
                continue
            axes = [a for a, e in enumerate(exps) for _ in range(e)]
            val = self.values[idx] / (lead * mult[idx])
            for perm in set(itertools.permutations(axes)):
                data[perm] = val
        return SymTensor3(data, symmetrize=False)

    @property
    def vector(self) -> np.ndarray:
        r, p = self.basis.r, self.basis.p
        lead = math.comb(p, p - 1) * _dfact(p - 2)
        out = np.zeros(r)
        for idx, exps in enumerate(self.basis.exponents):
            if sum(exps) == 1:
                out[exps.index(1)] = self.values[idx] / lead
        return out

    def linear_sum(self) -> np.ndarray:
        """sum_j beta_j P_j for p = 3: Vector/3 + sum_t Tensor[:, t, t]."""
        if self.basis.p != 3:
            raise ValueError("the linear reduction is only closed-form for p = 3")
        t = self.tensor.data
        return self.vector + np.einsum("xtt->x", t)


# ---------------------------------------------------------------------------
# overlaps


@dataclass
class CESystem:
    """CE matrix with its exact left null space and a float projector."""

    ce: CEMatrix
    null: list  # exact null vectors n with n^T T = 0
    projector: np.ndarray  # onto the orthogonal complement of the null space
    cond: float

    @property
    def rank(self) -> int:
        return self.ce.K - len(self.null)


def ce_nullspace(ce: CEMatrix) -> list:
    """Exact basis of {n : n^T T = 0}.

    Non-empty for every r >= 2: with the Gaussian integration by parts
    E[w_x f] = E[d f / d w_x], the vector with entries -lam_x / lam_y on
    w_x^2 w_y and 1 on w_x w_y^2 annihilates T for p = 3.
    """
    rows_t = [[ce.exact[i][j] for i in range(ce.K)] for j in range(ce.K)]
    return exactla.nullspace(rows_t)


def prepare_ce(alpha, p: int) -> CESystem:
    ce = build_ce_matrix([float(a) for a in alpha], p)
    null = ce_nullspace(ce)
    K = ce.K
    if null:
        z, _ = np.linalg.qr(np.array([[float(x) for x in v] for v in null]).T)
        proj = np.eye(K) - z @ z.T
    else:
        proj = np.eye(K)
    vals = ce.values
    # column-equilibrated condition number; raw entries span ~30 decades
    scaled = vals / np.abs(vals).max(axis=0, keepdims=True)
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(scaled))
    return CESystem(ce, null, proj, cond if np.isfinite(cond) else math.inf)


@dataclass
class OverlapResult:
    P: np.ndarray
    diagnostics: dict


def _identifiable_pvector(system: CESystem, s) -> np.ndarray:
    """Min-norm solution of p T = s over the identifiable subspace (exact)."""
    ce = system.ce
    K = ce.K
    rows = [[ce.exact[i][m] for i in range(K)] for m in range(K)]
    sol, _ = exactla.solve_least_squares_exact(rows, [Fraction(x) for x in s])
    return system.projector @ np.array([float(x) for x in sol])


def _jennrich_seed(pv: PVector, beta, seed) -> tuple:
    """Initial P from Jennrich on Tensor(p); returns (P or None, info)."""
    info = {}
    r = pv.basis.r
    try:
        dec = jennrich(pv.tensor, r, seed=seed)
    except (DecompositionError, NumericalError) as exc:
        info["jennrich_error"] = str(exc)
        return None, info
    info["jennrich_residual"] = float(dec.residual)
    q = pv.linear_sum()
    b = np.asarray(beta, dtype=float)
    scores = []
    for perm in itertools.permutations(range(r)):
        # column m of the decomposition is assigned to beta index perm[m]
        pred = sum(b[perm[m]] ** (2.0 / 3.0) * dec.vectors[:, m] for m in range(r))
        scores.append((float(np.linalg.norm(pred - q)), perm))
    scores.sort(key=lambda t: t[0])
    best, perm = scores[0]
    scale = max(float(np.linalg.norm(q)), 1e-300)
    margin = (scores[1][0] - best) / scale if len(scores) > 1 else math.inf
    info["assignment_margin"] = margin
    P = np.zeros((r, r))
    for m in range(r):
        P[:, perm[m]] = dec.vectors[:, m] / np.cbrt(b[perm[m]])
    return np.clip(P, -1.0, 1.0), info


def _random_start(rng, r) -> np.ndarray:
    P = rng.standard_normal((r, r))
    norms = np.linalg.norm(P, axis=0)
    radii = rng.uniform(0.0, 1.0, size=r) ** (1.0 / r)
    return P / norms * radii


def _to_ball(x: np.ndarray) -> np.ndarray:
    """Map each column of x into the open unit ball."""
    return x / np.sqrt(1.0 + (x * x).sum(axis=0, keepdims=True))


def _from_ball(P: np.ndarray, rmax: float = 0.999) -> np.ndarray:
    norms = np.linalg.norm(P, axis=0, keepdims=True)
    P = P * np.minimum(1.0, rmax / np.maximum(norms, 1e-300))
    return P / np.sqrt(1.0 - (P * P).sum(axis=0, keepdims=True))


def _weights_for(table: MomentTable, pair, sv):
    se = table.inter_stderr.get(pair) if table.inter_stderr else None
    if se is None:
        return 1.0 / np.maximum(np.abs(sv), 1.0)
    return 1.0 / np.maximum(np.asarray(se, dtype=float), 1e-300)


def recover_overlaps(table: MomentTable, alpha_i, alpha_j, pair, *, seed: int = 0,
                     starts: int = 12, max_starts: int = 200, accept_tol: float | None = None,
                     zero_tol: float = ZERO_TOL, tie_tol: float = TIE_TOL,
                     system: CESystem | None = None, reverse_system: CESystem | None = None,
                     joint: bool | None = None, hints=()) -> OverlapResult:
    """Overlap matrix P^(i,j) = V_i V_j^T from the joint moments of ``pair``.

    Exact tables fit P to the identifiable part of the p-vector. Empirical
    tables fit P to the joint moments themselves, weighted by their standard
    errors; with ``joint`` (the default when the table has the reverse pair)
    the moments of (j, i) enter too, through P^(j,i) = P^T, and each column
    is kept inside the unit ball.

    Candidates come from Jennrich on Tensor(p) (p = 3), any ``hints`` and
    random starts. For exact tables random starts keep coming, up to
    ``max_starts``, while the best residual stays above ``accept_tol``
    (default 1e-9); for empirical tables the residual is only reported
    against a chi-square bound. The lead of the best fit over the nearest
    distinct fit is reported as ``multistart_margin``.
    """
    i, j = pair
    r, p = table.r, table.p
    beta = np.asarray(alpha_j, dtype=float)
    if system is None:
        system = prepare_ce(alpha_i, p)
    basis = system.ce.basis
    pmap = _PVectorMap(basis)
    s = table.inter[(i, j)]
    diag = {"pair": [i, j], "ce_cond": system.cond, "ce_rank": system.rank, "ce_size": system.ce.K}

    if table.exact:
        p_hat = _identifiable_pvector(system, s)
        scale = max(float(np.abs(p_hat).max()), 1.0)
        if float(np.linalg.norm(p_hat)) < zero_tol * scale:
            diag.update(zero_tensor=True, fit_residual=0.0)
            return OverlapResult(np.zeros((r, r)), diag)
        proj = system.projector

        def model(x):
            return x.reshape(r, r)

        def residual(x):
            return proj @ (pmap(beta, x.reshape(r, r)) - p_hat) / scale
        n_eq = system.rank
    else:
        T = system.ce.values
        sv = np.array([float(x) for x in s])
        w = _weights_for(table, (i, j), sv)
        if joint is None:
            joint = (j, i) in table.inter
        parts = [(T, sv, w, beta, False)]
        if joint:
            if reverse_system is None:
                reverse_system = prepare_ce(alpha_j, p)
            sr = np.array([float(x) for x in table.inter[(j, i)]])
            # order-1 moment E[G_i G_j] is shared by both ordered pairs
            parts.append((reverse_system.ce.values[:, 1:], sr[1:],
                          _weights_for(table, (j, i), sr)[1:], np.asarray(alpha_i, float), True))
        diag["joint"] = bool(joint)

        def model(x):
            return _to_ball(x.reshape(r, r))

        def residual(x):
            P = model(x)
            return np.concatenate([(pmap(b, P.T if tr else P) @ Tm - y) * wm
                                   for Tm, y, wm, b, tr in parts])
        n_eq = sum(len(y) for _, y, _, _, _ in parts)
        # a truncated p-vector estimate gives Jennrich something to work on
        p_hat = np.linalg.lstsq((T * w[None, :]).T, sv * w, rcond=1e-10)[0]

    rng = stage_rng(seed, f"overlap-{i}-{j}")
    candidates = []
    if p == 3:
        P0, jinfo = _jennrich_seed(PVector(p_hat, basis), beta, rng)
        diag.update(jinfo)
        if P0 is not None:
            candidates.append(P0)
    candidates.extend(np.clip(np.asarray(h, dtype=float), -1.0, 1.0) for h in hints)
    candidates.append(np.zeros((r, r)) + 1e-3)
    candidates.extend(_random_start(rng, r) for _ in range(starts))
    if accept_tol is None:
        accept_tol = 1e-9 if table.exact else 3.0 * math.sqrt(max(n_eq - r * r, 1))

    def fit(P0):
        if table.exact:
            res = least_squares(residual, P0.ravel(), bounds=(-1.0, 1.0), method="trf",
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        else:
            # noisy fits sit in flat valleys; tight tolerances only burn evaluations
            res = least_squares(residual, _from_ball(P0).ravel(), method="trf",
                                xtol=1e-8, ftol=1e-10, gtol=1e-10, max_nfev=300)
        return 2 * float(res.cost), model(res.x)

    fits = [fit(x0) for x0 in candidates]
    # noisy tables rarely reach the chi-square bound, so only exact ones keep drawing
    while (table.exact and min(c for c, _ in fits) > accept_tol**2
           and len(fits) < max_starts):
        fits.append(fit(_random_start(rng, r)))
    fits.sort(key=lambda t: t[0])
    best_cost, P = fits[0]
    runner = next((c for c, x in fits[1:] if np.abs(x - P).max() > 1e-3), None)
    diag["fit_residual"] = math.sqrt(best_cost)
    diag["multistart_margin"] = (math.inf if runner is None
                                 else math.sqrt(runner) - math.sqrt(best_cost))
    diag["starts"] = len(fits)
    if not table.exact:
        diag["chi_bound"] = accept_tol
        diag["fit_within_bound"] = bool(math.sqrt(best_cost) <= accept_tol)
    colsq = (P * P).sum(axis=0)
    if np.any(colsq > 1.0):
        log.warning("pair %s: column norms above 1 (max %.3g); residual Q clamped to 0",
                    pair, float(colsq.max()))
        diag["q_clamped"] = int(np.sum(colsq > 1.0))
    if diag.get("assignment_margin", math.inf) < tie_tol:
        diag["ambiguous_assignment"] = True
    return OverlapResult(np.clip(P, -1.0, 1.0), diag)


# ---------------------------------------------------------------------------
# Gram assembly and factorization


@dataclass
class GramEstimate:
    matrix: np.ndarray
    D: int
    r: int
    symmetrization_residual: float = 0.0
    missing: list = field(default_factory=list)

    def block(self, k: int, l: int) -> np.ndarray:
        r = self.r
        return self.matrix[k * r:(k + 1) * r, l * r:(l + 1) * r]

    def psd_defect(self) -> float:
        """Magnitude of the most negative eigenvalue (0 when PSD)."""
        return float(max(0.0, -np.linalg.eigvalsh(self.matrix)[0]))


def assemble_gram(overlaps: dict, D: int, r: int) -> GramEstimate:
    """Stack overlaps into the Dr x Dr Gram matrix of all direction rows.

    ``overlaps`` maps ordered pairs to r x r matrices. When both (k, l) and
    (l, k) are present they are averaged as (P_kl + P_lk^T) / 2.
    """
    G = np.eye(D * r)
    resid = 0.0
    missing = []
    for k in range(D):
        for l in range(k + 1, D):
            a = overlaps.get((k, l))
            b = overlaps.get((l, k))
            if a is None and b is None:
                missing.append((k, l))
                block = np.zeros((r, r))
            elif a is None:
                block = np.asarray(b).T
            elif b is None:
                block = np.asarray(a)
            else:
                a = np.asarray(a)
                b = np.asarray(b)
                block = (a + b.T) / 2
                resid = max(resid, float(np.linalg.norm(a - b.T)))
            G[k * r:(k + 1) * r, l * r:(l + 1) * r] = block
            G[l * r:(l + 1) * r, k * r:(k + 1) * r] = block.T
    return GramEstimate(G, D, r, resid, missing)


def _polar(m: np.ndarray) -> np.ndarray:
    """Nearest matrix with orthonormal rows."""
    u, _, vt = np.linalg.svd(m, full_matrices=False)
    return u @ vt


@dataclass
class Factorization:
    stack: np.ndarray  # Dr x d, orthonormal within each r-row block
    raw_residual: float
    projected_residual: float
    clamped: float
    excess_rank: float


def factor_gram(gram: GramEstimate, d: int, *, rank_tol: float | None = None) -> Factorization:
    """Directions V (Dr x d) with V V^T ~ Gram, unique up to right rotation.

    Negative eigenvalues are clamped to 0; the top d eigenpairs give
    U sqrt(Lambda). Each component block is then replaced by its nearest
    orthonormal frame. With ``rank_tol`` set, an eigenvalue beyond the d-th
    above ``rank_tol * trace`` is treated as model misfit.
    """
    if d < gram.r:
        raise ValueError("need d >= r")
    from .tensor import sym_eig

    w, u = sym_eig(gram.matrix)
    n = len(w)
    clamped = float(max(0.0, -w[-1]))
    if clamped > 0:
        log.info("clamping Gram eigenvalues down to %.3g", -clamped)
    w = np.maximum(w, 0.0)
    excess = float(w[d]) if d < n else 0.0
    if rank_tol is not None and excess > rank_tol * max(float(np.trace(gram.matrix)), 1.0):
        raise NumericalError(f"Gram rank exceeds d={d}: eigenvalue {excess:.3g} beyond the d-th")
    keep = min(d, n)
    V = np.zeros((n, d))
    V[:, :keep] = u[:, :keep] * np.sqrt(w[:keep])
    raw = float(np.linalg.norm(V @ V.T - gram.matrix))
    r = gram.r
    for k in range(gram.D):
        V[k * r:(k + 1) * r] = _polar(V[k * r:(k + 1) * r])
    proj = float(np.linalg.norm(V @ V.T - gram.matrix))
    return Factorization(V, raw, proj, clamped, excess)


# ---------------------------------------------------------------------------
# metrics


def _check_shapes(G: GeneratorSpec, H: GeneratorSpec):
    if (G.D, G.r, G.p) != (H.D, H.r, H.p):
        raise PolymomError(f"shape mismatch: (D, r, p) = {(G.D, G.r, G.p)} vs {(H.D, H.r, H.p)}")


def _sorted(G: GeneratorSpec):
    order = np.argsort(G.alpha, axis=1, kind="stable")
    alpha = np.take_along_axis(G.alpha, order, axis=1)
    V = np.take_along_axis(G.V, order[:, :, None], axis=1)
    return alpha, V


def parameter_distance(G: GeneratorSpec, Gstar: GeneratorSpec) -> dict:
    """Weight error, weighted-stack Gram distance and aligned direction error.

    Rows of each component are put in ascending weight order first. The Gram
    distance is ||K K^T - K* K*^T||_F with rows alpha^(1/p) v; the direction
    error is min over orthogonal W of ||V W - V*||_F (orthogonal Procrustes,
    after zero-padding the latent dimensions to a common width).
    """
    _check_shapes(G, Gstar)
    a, V = _sorted(G)
    b, W = _sorted(Gstar)
    weight_error = float(max(np.linalg.norm(a[k] - b[k]) for k in range(G.D)))
    p = G.p
    K = (np.sign(a) * np.abs(a) ** (1.0 / p)).reshape(-1, 1) * V.reshape(-1, G.d)
    Ks = (np.sign(b) * np.abs(b) ** (1.0 / p)).reshape(-1, 1) * W.reshape(-1, Gstar.d)
    gram_distance = float(np.linalg.norm(K @ K.T - Ks @ Ks.T))
    S = V.reshape(-1, G.d)
    Ss = W.reshape(-1, Gstar.d)
    width = max(G.d, Gstar.d)
    S = np.pad(S, ((0, 0), (0, width - G.d)))
    Ss = np.pad(Ss, ((0, 0), (0, width - Gstar.d)))
    u, _, vt = np.linalg.svd(S.T @ Ss)
    direction_error = float(np.linalg.norm(S @ (u @ vt) - Ss))
    direction_gram = float(np.linalg.norm(S @ S.T - Ss @ Ss.T))
    return {"weight_error": weight_error, "gram_distance": gram_distance,
            "direction_error": direction_error, "direction_gram_distance": direction_gram}


@dataclass
class W1Estimate:
    value: float
    stderr: float


def sliced_w1(G: GeneratorSpec, Gstar: GeneratorSpec, N: int = 100_000, L: int = 64,
              seed: int = 0, seed_star: int | None = None) -> W1Estimate:
    """Mean 1-D W1 between outputs projected on L random unit directions.

    Latents for G come from ``seed`` and for Gstar from ``seed_star``
    (an independent stream when None). Each 1-D distance is the mean absolute
    difference of the sorted projected samples.
    """
    if N < 1 or L < 1:
        raise ValueError("N and L must be >= 1")
    if G.D != Gstar.D:
        raise PolymomError("generators have different output dimensions")
    za = stage_rng(seed, "w1-latent").standard_normal((N, G.d))
    zb_seed = seed_star if seed_star is not None else seed
    zb_stage = "w1-latent" if seed_star is not None else "w1-latent-star"
    zb = stage_rng(zb_seed, zb_stage).standard_normal((N, Gstar.d))
    xa = evaluate(G, za)
    xb = evaluate(Gstar, zb)
    dirs = stage_rng(seed, "w1-directions").standard_normal((L, G.D))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(xa @ dirs.T, axis=0)
    pb = np.sort(xb @ dirs.T, axis=0)
    per_dir = np.abs(pa - pb).mean(axis=0)
    se = float(per_dir.std(ddof=1) / math.sqrt(L)) if L > 1 else 0.0
    return W1Estimate(float(per_dir.mean()), se)


# ---------------------------------------------------------------------------
# end to end


@dataclass
class RecoveryReport:
    learner: GeneratorSpec | None
    alpha: np.ndarray
    overlaps: dict
    gram: np.ndarray | None
    diagnostics: dict
    metrics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "flags": list(self.flags),
            "failures": list(self.failures),
            "alpha": np.asarray(self.alpha).tolist(),
            "overlaps": [{"pair": list(k), "P": np.asarray(v).tolist()}
                         for k, v in sorted(self.overlaps.items())],
            "gram": None if self.gram is None else np.asarray(self.gram).tolist(),
            "learner": None if self.learner is None else self.learner.to_json(),
            "diagnostics": _jsonable(self.diagnostics),
            "metrics": _jsonable(self.metrics),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        keys = sorted(self.metrics)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys + ["failures"])
        w.writerow([repr(float(self.metrics[k])) for k in keys] + [len(self.failures)])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def recover_full(table: MomentTable, d: int, *, strict: bool = True, seed: int = 0,
                 starts: int = 12, max_starts: int = 200,
                 rank_tol: float | None = None) -> RecoveryReport:
    """Weights for every component, overlaps for every ordered pair, then the
    Gram matrix and a learner generator.

    In strict mode the first failing stage raises :class:`StageError`;
    otherwise failures are collected and the remaining stages still run.
    """
    table.validate()
    D, r, p = table.D, table.r, table.p
    if d < r:
        raise PolymomError(f"latent dimension d={d} is below r={r}")
    flags = []
    if d == r:
        flags.append("d_equals_r: residual directions Q_j are forced to 0")
    failures = []
    diag = {"weights": [], "overlaps": []}

    def fail(stage, index, exc):
        err = exc if isinstance(exc, StageError) else StageError(stage, index, exc)
        if strict:
            raise err
        failures.append({"stage": err.stage, "index": _jsonable(err.index), "error": str(err)})

    alpha = np.full((D, r), np.nan)
    for k in range(D):
        try:
            alpha[k] = recover_weights(table, k)
            diag["weights"].append({"k": k, "root_residual": weight_root_residual(table, k, alpha[k])})
        except StageError as exc:
            fail("weights", k, exc)

    overlaps = {}
    systems = {}

    def system(k):
        if k not in systems:
            systems[k] = prepare_ce(alpha[k], p)
        return systems[k]

    for (i, j) in table.pairs():
        if np.isnan(alpha[i]).any() or np.isnan(alpha[j]).any():
            continue
        joint = not table.exact
        if joint and i > j:
            continue  # already fitted together with (j, i)
        try:
            hints = [overlaps[(j, i)].T] if (j, i) in overlaps else []
            res = recover_overlaps(table, alpha[i], alpha[j], (i, j), seed=seed,
                                   starts=starts, max_starts=max_starts, system=system(i),
                                   reverse_system=system(j) if joint else None,
                                   joint=joint, hints=hints)
            overlaps[(i, j)] = res.P
            if joint:
                overlaps[(j, i)] = res.P.T
            diag["overlaps"].append(res.diagnostics)
            if res.diagnostics.get("ambiguous_assignment"):
                flags.append(f"ambiguous_assignment {i},{j}")
        except (NumericalError, PolymomError) as exc:
            fail("overlaps", [i, j], exc)

    if np.isnan(alpha).any():
        return RecoveryReport(None, alpha, overlaps, None, diag, failures=failures, flags=flags)

    if D == 1:
        flags.append("single_component: directions are unidentifiable, defaulted to e_1..e_r")
        V = np.eye(r, d)[None]
        learner = GeneratorSpec(D, d, r, p, alpha, V)
        return RecoveryReport(learner, alpha, overlaps, np.eye(r), diag,
                              failures=failures, flags=flags)

    gram = assemble_gram(overlaps, D, r)
    diag["gram"] = {"symmetrization_residual": gram.symmetrization_residual,
                    "psd_defect": gram.psd_defect(), "missing_blocks": gram.missing}
    try:
        fac = factor_gram(gram, d, rank_tol=rank_tol)
    except NumericalError as exc:
        fail("factor", 0, exc)
        return RecoveryReport(None, alpha, overlaps, gram.matrix, diag,
                              failures=failures, flags=flags)
    diag["gram"].update(raw_residual=fac.raw_residual, projected_residual=fac.projected_residual,
                        clamped_eigenvalue=fac.clamped, excess_eigenvalue=fac.excess_rank)
    learner = GeneratorSpec(D, d, r, p, alpha, fac.stack.reshape(D, r, d))
    return RecoveryReport(learner, alpha, overlaps, gram.matrix, diag,
                          failures=failures, flags=flags)


def evaluate_report(report: RecoveryReport, target: GeneratorSpec, *, w1_samples: int = 100_000,
                    w1_directions: int = 64, seed: int = 0) -> dict:
    """Fill ``report.metrics`` against a known target and return them."""
    if report.learner is None:
        return report.metrics
    m = parameter_distance(report.learner, target)
    m["overlap_gram_distance"] = float(np.linalg.norm(report.gram - target.gram()))
    w1 = sliced_w1(report.learner, target, w1_samples, w1_directions, seed=seed)
    m["sliced_w1"] = w1.value
    m["sliced_w1_stderr"] = w1.stderr
    report.metrics.update(m)
    return report.metrics
