"""Dense kernels for symmetric third-order tensors and Jennrich's algorithm."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DecompositionError, NumericalError


def sym_eig(a, *, tol: float = 1e-14, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns. Each eigenvector is signed so that its
    largest-magnitude entry is positive.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("sym_eig needs a square matrix")
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    a = (a + a.T) / 2
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * np.linalg.norm(a):
            break
        # skip rotations that are already negligible in this sweep
        thresh = 0.2 * off / n**2 if off > 1e-3 * scale else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= thresh or apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1)) if theta else 1.0
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                rot_p = a[:, p].copy()
                rot_q = a[:, q].copy()
                a[:, p] = c * rot_p - s * rot_q
                a[:, q] = s * rot_p + c * rot_q
                rot_p = a[p, :].copy()
                rot_q = a[q, :].copy()
                a[p, :] = c * rot_p - s * rot_q
                a[q, :] = s * rot_p + c * rot_q
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NumericalError(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    for j in range(n):
        k = np.argmax(np.abs(v[:, j]))
        if v[k, j] < 0:
            v[:, j] = -v[:, j]
    return w, v


class SymTensor3:
    """Symmetric r x r x r tensor, stored dense and symmetrized on entry."""

    __slots__ = ("data",)

    def __init__(self, data, *, symmetrize: bool = True):
        data = np.asarray(data, dtype=float)
        if data.ndim != 3 or len(set(data.shape)) != 1:
            raise ValueError("need an r x r x r array")
        if symmetrize:
            data = sum(np.transpose(data, perm) for perm in itertools.permutations(range(3))) / 6
        self.data = data

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, idx):
        return self.data[idx]

    @classmethod
    def zeros(cls, r: int) -> "SymTensor3":
        return cls(np.zeros((r, r, r)), symmetrize=False)

    @classmethod
    def from_components(cls, weights, vectors) -> "SymTensor3":
        """sum_i weights[i] * u_i^{(x)3} with u_i the columns of ``vectors``."""
        vectors = np.asarray(vectors, dtype=float)
        return cls(np.einsum("i,ai,bi,ci->abc", np.asarray(weights, dtype=float),
                             vectors, vectors, vectors), symmetrize=False)

    def unique_entries(self) -> np.ndarray:
        return np.array([self.data[i] for i in
                         itertools.combinations_with_replacement(range(self.dim), 3)])

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __add__(self, other):
        return SymTensor3(self.data + other.data, symmetrize=False)

    def __sub__(self, other):
        return SymTensor3(self.data - other.data, symmetrize=False)

    def __mul__(self, c):
        return SymTensor3(self.data * c, symmetrize=False)

    __rmul__ = __mul__

    def apply(self, x) -> float:
        """T(x, x, x)."""
        x = np.asarray(x, dtype=float)
        return float(np.einsum("abc,a,b,c->", self.data, x, x, x))

    def to_json(self) -> dict:
        return {"dim": self.dim, "data": self.data.ravel().tolist()}

    @classmethod
    def from_json(cls, obj) -> "SymTensor3":
        r = int(obj["dim"])
        return cls(np.asarray(obj["data"], dtype=float).reshape(r, r, r))


def slice_combine(t: SymTensor3, x) -> np.ndarray:
    """sum_i x_i T[i, :, :]."""
    x = np.asarray(x, dtype=float)
    if x.shape != (t.dim,):
        raise ValueError("slice vector has wrong length")
    m = np.einsum("i,ijk->jk", x, t.data)
    return (m + m.T) / 2


def contract(t: SymTensor3, g) -> SymTensor3:
    """T'_{ijk} = sum_xyz T_xyz G_ix G_jy G_kz."""
    g = np.asarray(g, dtype=float)
    if g.shape[1] != t.dim:
        raise ValueError("contraction matrix has wrong shape")
    return SymTensor3(np.einsum("xyz,ix,jy,kz->ijk", t.data, g, g, g), symmetrize=False)


def find_separating_vector(t: SymTensor3, max_tries: int = 200, seed=0, *,
                           pd_tol: float | None = None, candidates: int = 8):
    """Unit x making slice_combine(t, x) positive definite.

    Among the first ``candidates`` acceptable draws the best-conditioned one
    is returned, together with the eigen-decomposition of L_x.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r = t.dim
    if pd_tol is None:
        pd_tol = 1e-12 * max(t.norm(), 1e-300)
    best = None
    accepted = 0
    for _ in range(max_tries):
        x = rng.standard_normal(r)
        x /= np.linalg.norm(x)
        w, q = sym_eig(slice_combine(t, x))
        if w[-1] <= pd_tol:
            if w[0] < -pd_tol:
                # all eigenvalues negative: the flipped vector separates
                x = -x
                w, q = sym_eig(slice_combine(t, x))
            if w[-1] <= pd_tol:
                continue
        ratio = w[-1] / w[0]
        if best is None or ratio > best[0]:
            best = (ratio, x, w, q)
        accepted += 1
        if accepted >= candidates:
            break
    if best is None:
        best = _maximize_min_eig(t, rng, pd_tol)
    if best is None:
        raise DecompositionError(
            f"no separating vector in {max_tries} draws; tensor is not a positive "
            "combination of independent rank-one terms (or is too noisy)")
    return best[1], best[2], best[3]


def _maximize_min_eig(t: SymTensor3, rng, pd_tol):
    # lambda_min(L_x) is concave in x, so a local search over the unit ball
    # finds the separating cone whenever it exists, however narrow.
    from scipy.optimize import minimize

    r = t.dim

    def neg_min_eig(x):
        return -np.linalg.eigvalsh(slice_combine(t, x))[0]

    cons = {"type": "ineq", "fun": lambda x: 1.0 - x @ x}
    best = None
    for _ in range(4):
        x0 = rng.standard_normal(r)
        x0 /= np.linalg.norm(x0)
        res = minimize(neg_min_eig, x0, method="SLSQP", constraints=[cons],
                       options={"maxiter": 500, "ftol": 1e-14})
        x = res.x / max(np.linalg.norm(res.x), 1e-300)
        w, q = sym_eig(slice_combine(t, x))
        if w[-1] > pd_tol:
            ratio = w[-1] / w[0]
            if best is None or ratio > best[0]:
                best = (ratio, x, w, q)
    return best


@dataclass
class DecompResult:
    """Rank-one terms u_i^{(x)3}, sorted by weight ||u_i||^3 descending."""

    weights: np.ndarray
    vectors: np.ndarray  # columns u_i (weight already folded in)
    residual: float
    whitened_gram: np.ndarray | None = None
    eig_gap: float | None = None

    @property
    def units(self) -> np.ndarray:
        return self.vectors / np.linalg.norm(self.vectors, axis=0, keepdims=True)

    def reconstruct(self) -> SymTensor3:
        return SymTensor3.from_components(np.ones(len(self.weights)), self.vectors)

    def components(self):
        return list(zip(self.weights, self.vectors.T))


def jennrich(t: SymTensor3, r_target: int | None = None, seed=0, *,
             gap_tol: float = 1e-6, y_retries: int = 20,
             residual_tol: float | None = None) -> DecompResult:
    """Decompose T = sum_i u_i^{(x)3} with linearly independent u_i.

    Whitening by a positive-definite slice combination turns the problem
    into an orthogonal decomposition; a second random slice combination is
    then diagonalized and the result is mapped back.
    """
    rng = np.random.default_rng(seed)
    r = t.dim
    if r_target is None:
        r_target = r
    if r_target != r:
        raise DecompositionError("only full-rank decompositions (r_target == dim) are supported")
    x, d, q = find_separating_vector(t, seed=rng)
    g = q / np.sqrt(d)  # G = Q D^{-1/2}
    tw = contract(t, g.T)  # T[G, G, G]

    best = None
    for _ in range(y_retries):
        y = rng.standard_normal(r)
        y /= np.linalg.norm(y)
        ty = slice_combine(tw, y)
        dy, vy = sym_eig(ty)
        radius = max(np.abs(dy).max(), 1e-300)
        gap = np.min(np.diff(-dy)) / radius if r > 1 else 1.0
        if best is None or gap > best[0]:
            best = (gap, vy)
        if gap > gap_tol:
            break
    gap, vy = best
    if gap <= gap_tol:
        raise DecompositionError(f"eigenvalue collision in the orthogonal step (gap {gap:.3g})")

    twt = SymTensor3(tw.data, symmetrize=False)
    lam = np.array([twt.apply(vy[:, i]) for i in range(r)])
    # weights of the orthogonal problem are positive: fix each sign by them
    signs = np.where(lam < 0, -1.0, 1.0)
    vy = vy * signs
    lam = np.abs(lam)
    unwhiten = q * np.sqrt(d)  # Q D^{1/2}
    u = unwhiten @ vy * np.cbrt(lam)

    recon = SymTensor3.from_components(np.ones(r), u)
    resid = (recon - t).norm()
    weights = np.linalg.norm(u, axis=0) ** 3
    order = np.argsort(-weights, kind="stable")
    u = u[:, order]
    weights = weights[order]
    gu = g.T @ u
    result = DecompResult(weights, u, resid, gu.T @ gu, gap)
    if residual_tol is not None and resid > residual_tol * max(t.norm(), 1e-300):
        raise DecompositionError(f"reconstruction residual {resid:.3g} above tolerance")
    return result
