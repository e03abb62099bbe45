"""Dense complex linear algebra kernel.

Every routine here is written on top of plain numpy array arithmetic: LU with
partial pivoting, column-pivoted Gram-Schmidt, block power iteration,
cyclic Jacobi (two-sided for Hermitian eigenproblems, one-sided for singular
values) and scaling-and-squaring exponentials.  There is deliberately no
general non-Hermitian eigensolver.

LU and Jacobi accept stacks of matrices with leading batch axes, which is how
the contour quadratures evaluate many resolvents at once.
"""

from __future__ import annotations

import contextlib
import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NonFinite,
    NormTooLarge,
    NotHermitian,
    Singular,
)

ComplexMatrix = np.ndarray


@dataclass(frozen=True)
class NumericPolicy:
    """Tolerances used across the kernel.  Override through :func:`using_policy`."""

    singular_pivot: float = 1e-13
    rank_drop: float = 1e-10
    hermitian_tol: float = 1e-10
    subspace_tol: float = 1e-10
    power_rtol: float = 1e-10
    power_maxiter: int = 10_000
    power_residual: float = 1e-6
    exp_norm_cap: float = 50.0
    jacobi_max_sweeps: int = 60
    eigen_residual: float = 1e-10


_POLICY = NumericPolicy()


def get_policy() -> NumericPolicy:
    return _POLICY


def set_policy(policy: NumericPolicy) -> None:
    global _POLICY
    _POLICY = policy


@contextlib.contextmanager
def using_policy(**overrides: float) -> Iterator[NumericPolicy]:
    """Temporarily replace selected tolerances of the global policy."""
    old = _POLICY
    new = dataclasses.replace(old, **overrides)
    set_policy(new)
    try:
        yield new
    finally:
        set_policy(old)


def complex_matrix(data: object) -> ComplexMatrix:
    """Validate and convert ``data`` to a finite 2-D complex array."""
    a = np.array(data, dtype=np.complex128)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix has NaN or Inf entries")
    return a


def _as_square(a: object) -> ComplexMatrix:
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    return m


def identity(n: int) -> ComplexMatrix:
    return np.eye(n, dtype=np.complex128)


def adjoint(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


# ---------------------------------------------------------------------------
# LU with partial pivoting (batched)
# ---------------------------------------------------------------------------


_LU_BLOCK = 24


def _lu_batch(a: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Factor a stack ``a`` of shape (B, n, n); returns (lu, perm, ok).

    Right-looking blocked elimination: pivoted rank-1 steps inside a panel of
    ``_LU_BLOCK`` columns, then one matrix product for the trailing block.
    """
    nb, n, _ = a.shape
    lu = np.array(a, dtype=np.complex128, copy=True)
    perm = np.tile(np.arange(n), (nb, 1))
    scale = np.abs(lu).reshape(nb, -1).max(axis=1) if n else np.zeros(nb)
    ok = np.ones(nb, dtype=bool)
    bidx = np.arange(nb)
    for k0 in range(0, n, _LU_BLOCK):
        k1 = min(n, k0 + _LU_BLOCK)
        for k in range(k0, k1):
            p = k + np.argmax(np.abs(lu[:, k:, k]), axis=1)
            swap = p != k
            if swap.any():
                sb = bidx[swap]
                pk = p[swap]
                row = lu[sb, k, :].copy()
                lu[sb, k, :] = lu[sb, pk, :]
                lu[sb, pk, :] = row
                tmp = perm[sb, k].copy()
                perm[sb, k] = perm[sb, pk]
                perm[sb, pk] = tmp
            piv = lu[:, k, k]
            bad = np.abs(piv) <= tol * scale
            if bad.any():
                ok &= ~bad
                piv = np.where(bad, 1.0, piv)
                lu[:, k, k] = piv
            if k + 1 < n:
                lu[:, k + 1 :, k] /= piv[:, None]
                lu[:, k + 1 :, k + 1 : k1] -= lu[:, k + 1 :, k, None] * lu[:, None, k, k + 1 : k1]
        if k1 < n:
            # U12 = L11⁻¹ A12, then A22 -= L21 U12
            for k in range(k0, k1 - 1):
                lu[:, k + 1 : k1, k1:] -= lu[:, k + 1 : k1, k, None] * lu[:, None, k, k1:]
            lu[:, k1:, k1:] -= lu[:, k1:, k0:k1] @ lu[:, k0:k1, k1:]
    return lu, perm, ok


def _lu_apply(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve with a batched factorization; rhs has shape (B, n, r)."""
    n = lu.shape[1]
    x = np.take_along_axis(np.asarray(rhs, dtype=np.complex128), perm[:, :, None], axis=1).copy()
    for k0 in range(0, n, _LU_BLOCK):
        k1 = min(n, k0 + _LU_BLOCK)
        for k in range(k0, k1 - 1):
            x[:, k + 1 : k1, :] -= lu[:, k + 1 : k1, k, None] * x[:, None, k, :]
        if k1 < n:
            x[:, k1:, :] -= lu[:, k1:, k0:k1] @ x[:, k0:k1, :]
    starts = list(range(0, n, _LU_BLOCK))
    for k0 in reversed(starts):
        k1 = min(n, k0 + _LU_BLOCK)
        for k in range(k1 - 1, k0 - 1, -1):
            x[:, k, :] /= lu[:, k, k, None]
            if k > k0:
                x[:, k0:k, :] -= lu[:, k0:k, k, None] * x[:, None, k, :]
        if k0:
            x[:, :k0, :] -= lu[:, :k0, k0:k1] @ x[:, k0:k1, :]
    return x


@dataclass(frozen=True)
class LUFactorization:
    lu: np.ndarray
    perm: np.ndarray

    @property
    def order(self) -> int:
        return self.lu.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = np.asarray(rhs, dtype=np.complex128)
        vec = b.ndim == 1
        if b.shape[0] != self.order:
            raise DimensionMismatch("rhs row count does not match the factorization")
        b2 = b.reshape(self.order, -1)
        x = _lu_apply(self.lu[None], self.perm[None], b2[None])[0]
        return x[:, 0] if vec else x


def lu_factor(a: ComplexMatrix) -> LUFactorization:
    m = _as_square(a)
    lu, perm, ok = _lu_batch(m[None], get_policy().singular_pivot)
    if not ok[0]:
        raise Singular("pivot below threshold: matrix is numerically singular")
    return LUFactorization(lu[0], perm[0])


def lu_solve(a: ComplexMatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve ``a x = rhs`` by LU with partial pivoting."""
    return lu_factor(a).solve(rhs)


def inverse(a: ComplexMatrix) -> ComplexMatrix:
    m = _as_square(a)
    return lu_solve(m, identity(m.shape[0]))


def lu_solve_batch(stack: np.ndarray, rhs: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Solve a stack of systems at once.

    ``stack`` has shape (B, n, n); ``rhs`` is (B, n, r), (n, r) or ``None`` for
    the identity.  Returns ``(x, ok)`` where ``ok[b]`` is False for members
    whose pivots fell below the singularity threshold.
    """
    stack = np.asarray(stack, dtype=np.complex128)
    nb, n, _ = stack.shape
    if rhs is None:
        rhs = np.broadcast_to(identity(n), (nb, n, n))
    else:
        rhs = np.asarray(rhs, dtype=np.complex128)
        if rhs.ndim == 2:
            rhs = np.broadcast_to(rhs, (nb,) + rhs.shape)
    lu, perm, ok = _lu_batch(stack, get_policy().singular_pivot)
    return _lu_apply(lu, perm, rhs), ok


# ---------------------------------------------------------------------------
# Subspaces and column-pivoted Gram-Schmidt
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Subspace:
    """Orthonormal column frame of a subspace of C^ambient_dim.

    ``dropped`` counts input columns that were discarded as linearly dependent
    when the subspace was built by :func:`orthonormalize`.
    """

    frame: ComplexMatrix
    ambient_dim: int
    dropped: int = 0

    def __post_init__(self) -> None:
        f = np.asarray(self.frame, dtype=np.complex128)
        if f.ndim != 2 or f.shape[0] != self.ambient_dim:
            raise DimensionMismatch("frame rows must equal ambient_dim")
        if f.shape[1] > self.ambient_dim:
            raise DimensionMismatch("more columns than ambient dimension")
        if not np.all(np.isfinite(f)):
            raise NonFinite("frame has NaN or Inf entries")
        if f.shape[1]:
            gram = f.conj().T @ f
            err = max_abs(gram - np.eye(f.shape[1]))
            if err > get_policy().subspace_tol:
                raise DimensionMismatch(f"frame columns are not orthonormal (defect {err:.2e})")
        object.__setattr__(self, "frame", f)

    @property
    def dim(self) -> int:
        return self.frame.shape[1]

    def projector(self) -> ComplexMatrix:
        return self.frame @ self.frame.conj().T

    def contains(self, vectors: np.ndarray, tol: float = 1e-8) -> bool:
        v = np.asarray(vectors, dtype=np.complex128).reshape(self.ambient_dim, -1)
        resid = v - self.frame @ (self.frame.conj().T @ v)
        scale = max(1.0, max_abs(v))
        return max_abs(resid) <= tol * scale

    @classmethod
    def zero(cls, n: int) -> "Subspace":
        return cls(np.zeros((n, 0), dtype=np.complex128), n)

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(identity(n), n)


def _gram_schmidt(a: np.ndarray, tol: float, basis: np.ndarray | None = None) -> np.ndarray:
    """Column-pivoted modified Gram-Schmidt with one reorthogonalization.

    Columns are picked largest residual first; the process stops when the
    largest remaining residual is below ``tol`` times the first pivot norm.
    Columns of ``basis`` (assumed orthonormal) are projected out beforehand.
    """
    work = np.array(a, dtype=np.complex128, copy=True)
    n = work.shape[0]
    if basis is not None and basis.shape[1]:
        for _ in range(2):
            work -= basis @ (basis.conj().T @ work)
    cols: list[np.ndarray] = []
    remaining = list(range(work.shape[1]))
    lead = None
    while remaining and len(cols) < n:
        res = np.sqrt(np.sum(np.abs(work[:, remaining]) ** 2, axis=0))
        jl = int(np.argmax(res))
        val = float(res[jl])
        if lead is None:
            lead = val
            if basis is not None and basis.shape[1]:
                lead = max(lead, float(np.max(np.sqrt(np.sum(np.abs(a) ** 2, axis=0)))))
        if lead == 0.0 or val <= tol * lead:
            break
        j = remaining.pop(jl)
        q = work[:, j] / val
        for prev in (basis, np.stack(cols, axis=1) if cols else None):
            if prev is not None and prev.shape[1]:
                q = q - prev @ (prev.conj().T @ q)
        q = q / math.sqrt(float(np.sum(np.abs(q) ** 2)))
        cols.append(q)
        if remaining:
            block = work[:, remaining]
            work[:, remaining] = block - np.outer(q, q.conj() @ block)
    if not cols:
        return np.zeros((n, 0), dtype=np.complex128)
    return np.stack(cols, axis=1)


def orthonormalize(cols: np.ndarray, tol: float | None = None) -> Subspace:
    """Orthonormal frame of the column space, with dropped-column count."""
    a = np.asarray(cols, dtype=np.complex128)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if not np.all(np.isfinite(a)):
        raise NonFinite("columns contain NaN or Inf")
    t = get_policy().rank_drop if tol is None else tol
    q = _gram_schmidt(a, t)
    return Subspace(q, a.shape[0], dropped=a.shape[1] - q.shape[1])


def complement(u: Subspace, tol: float | None = None) -> Subspace:
    """Orthogonal complement inside the ambient space."""
    n = u.ambient_dim
    t = get_policy().rank_drop if tol is None else tol
    extra = _gram_schmidt(identity(n), max(t, 1e-8), basis=u.frame)
    extra = extra[:, : n - u.dim]
    return Subspace(extra, n)


def subspace_sum(u: Subspace, v: Subspace, tol: float = 1e-8) -> Subspace:
    if u.ambient_dim != v.ambient_dim:
        raise DimensionMismatch("subspaces live in different ambient spaces")
    return orthonormalize(np.hstack([u.frame, v.frame]), tol)


def subspace_intersection(u: Subspace, v: Subspace, tol: float = 1e-8) -> Subspace:
    """u ∩ v computed as the complement of the sum of complements."""
    if u.ambient_dim != v.ambient_dim:
        raise DimensionMismatch("subspaces live in different ambient spaces")
    s = subspace_sum(complement(u), complement(v), tol)
    return complement(s)


def _principal_parts(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Principal angles for frames u (n×p), v (n×q) with q <= p."""
    cos = np.clip(singular_values(u.conj().T @ v), 0.0, 1.0)[: v.shape[1]]
    resid = v - u @ (u.conj().T @ v)
    sin = np.sort(np.clip(singular_values(resid), 0.0, 1.0))[: v.shape[1]]
    k = v.shape[1]
    cos = np.concatenate([cos, np.zeros(k - cos.size)])
    sin = np.concatenate([sin, np.ones(k - sin.size)])
    ang = np.where(cos**2 < 0.5, np.arccos(cos), np.arcsin(sin))
    return np.sort(np.clip(ang, 0.0, math.pi / 2))


def principal_angles(u: Subspace, v: Subspace) -> list[float]:
    """Ascending principal angles; their count is min(dim u, dim v)."""
    if u.ambient_dim != v.ambient_dim:
        raise DimensionMismatch("subspaces live in different ambient spaces")
    if min(u.dim, v.dim) == 0:
        return []
    if v.dim <= u.dim:
        ang = _principal_parts(u.frame, v.frame)
    else:
        ang = _principal_parts(v.frame, u.frame)
    return [float(x) for x in ang]


def subspace_distance(u: Subspace, v: Subspace) -> float:
    """Largest principal angle, or π/2 if the dimensions differ."""
    if u.dim != v.dim:
        return math.pi / 2
    ang = principal_angles(u, v)
    return max(ang) if ang else 0.0


# ---------------------------------------------------------------------------
# Jacobi methods
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Tournament schedule: n-1 rounds of disjoint index pairs covering all pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        if ps:
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _rotation(app: np.ndarray, aqq: np.ndarray, apq: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parameters (c, s, phase) of the complex Jacobi rotation zeroing apq."""
    mag = np.abs(apq)
    live = mag > 1e-300
    safe = np.where(live, mag, 1.0)
    phase = np.where(live, apq / safe, 1.0)
    tau = (aqq - app) / (2.0 * safe)
    sgn = np.where(tau >= 0, 1.0, -1.0)
    t = sgn / (np.abs(tau) + np.hypot(1.0, tau))
    t = np.where(live, t, 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    return c, s, phase


def _jacobi_hermitian(h: np.ndarray, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic two-sided Jacobi on a stack of Hermitian matrices (..., n, n)."""
    a = np.array(h, dtype=np.complex128, copy=True)
    n = a.shape[-1]
    v = np.broadcast_to(identity(n), a.shape).copy()
    if n <= 1:
        return np.real(np.diagonal(a, axis1=-2, axis2=-1)).copy(), v
    fro = np.sqrt(np.sum(np.abs(a) ** 2, axis=(-2, -1)))
    eye = np.eye(n, dtype=bool)
    rounds = _round_robin(n)
    prev = math.inf
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(np.where(eye, 0.0, a)) ** 2, axis=(-2, -1)))
        rel = float(np.max(off / np.maximum(fro, 1e-300)))
        if rel <= 1e-15 or (rel <= 1e-11 and rel > 0.5 * prev):
            break
        prev = rel
        for p, q in rounds:
            app = np.real(a[..., p, p])
            aqq = np.real(a[..., q, q])
            apq = a[..., p, q]
            c, s, ph = _rotation(app, aqq, apq)
            cph = np.conj(ph)
            # columns: A <- A G with G = [[c, s], [-s e^{-iφ}, c e^{-iφ}]]
            colp = a[..., :, p]
            colq = a[..., :, q]
            newp = c[..., None, :] * colp - (s * cph)[..., None, :] * colq
            newq = s[..., None, :] * colp + (c * cph)[..., None, :] * colq
            a[..., :, p] = newp
            a[..., :, q] = newq
            rowp = a[..., p, :]
            rowq = a[..., q, :]
            newrp = c[..., :, None] * rowp - (s * ph)[..., :, None] * rowq
            newrq = s[..., :, None] * rowp + (c * ph)[..., :, None] * rowq
            a[..., p, :] = newrp
            a[..., q, :] = newrq
            vp = v[..., :, p]
            vq = v[..., :, q]
            nvp = c[..., None, :] * vp - (s * cph)[..., None, :] * vq
            nvq = s[..., None, :] * vp + (c * cph)[..., None, :] * vq
            v[..., :, p] = nvp
            v[..., :, q] = nvq
    return np.real(np.diagonal(a, axis1=-2, axis2=-1)).copy(), v


def hermitian_eigen(h: ComplexMatrix) -> tuple[np.ndarray, ComplexMatrix]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix."""
    m = _as_square(h)
    pol = get_policy()
    scale = max_abs(m)
    if max_abs(m - m.conj().T) > pol.hermitian_tol * max(scale, 1e-300) and scale > 0:
        raise NotHermitian("matrix is not Hermitian within tolerance")
    sym = 0.5 * (m + m.conj().T)
    vals, vecs = _jacobi_hermitian(sym, pol.jacobi_max_sweeps)
    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    if m.shape[0]:
        norm = math.sqrt(float(np.sum(np.abs(sym) ** 2)))
        resid = sym @ vecs - vecs * vals[None, :]
        worst = float(np.max(np.sqrt(np.sum(np.abs(resid) ** 2, axis=0))))
        if worst > pol.eigen_residual * max(norm, 1e-300) and norm > 0:
            raise NoConvergence(f"Jacobi residual {worst:.2e} above tolerance")
    return vals, vecs


def hermitian_eigen_batch(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenpairs for a stack (..., n, n) of Hermitian matrices."""
    sym = 0.5 * (h + adjoint(h))
    vals, vecs = _jacobi_hermitian(sym, get_policy().jacobi_max_sweeps)
    order = np.argsort(vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    return vals, vecs


def hermitian_function(h: ComplexMatrix, func) -> ComplexMatrix:
    """Apply a scalar function to a Hermitian matrix through its eigenbasis."""
    vals, vecs = hermitian_eigen(h)
    return (vecs * np.asarray(func(vals), dtype=np.complex128)[None, :]) @ vecs.conj().T


def hermitian_sqrt(h: ComplexMatrix) -> ComplexMatrix:
    return hermitian_function(h, lambda x: np.sqrt(np.clip(x, 0.0, None)))


def hermitian_inv_sqrt(h: ComplexMatrix) -> ComplexMatrix:
    vals, _ = hermitian_eigen(h)
    if vals.size and vals[0] <= 0:
        raise Singular("matrix is not positive definite")
    return hermitian_function(h, lambda x: 1.0 / np.sqrt(x))


def _one_sided_jacobi(a: np.ndarray, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """Hestenes iteration on the columns of a stack (..., m, n).

    Returns (w, v) with a @ v = w and mutually orthogonal columns of w.
    """
    w = np.array(a, dtype=np.complex128, copy=True)
    n = w.shape[-1]
    v = np.broadcast_to(identity(n), w.shape[:-2] + (n, n)).copy()
    if n <= 1:
        return w, v
    rounds = _round_robin(n)
    prev = math.inf
    for _ in range(max_sweeps):
        worst = 0.0
        for p, q in rounds:
            wp = w[..., :, p]
            wq = w[..., :, q]
            alpha = np.sum(np.abs(wp) ** 2, axis=-2)
            beta = np.sum(np.abs(wq) ** 2, axis=-2)
            gamma = np.sum(np.conj(wp) * wq, axis=-2)
            denom = np.sqrt(alpha * beta)
            rel = np.where(denom > 1e-300, np.abs(gamma) / np.where(denom > 1e-300, denom, 1.0), 0.0)
            if rel.size:
                worst = max(worst, float(np.max(rel)))
            gamma = np.where(rel > 1e-15, gamma, 0.0)
            c, s, ph = _rotation(alpha, beta, gamma)
            cph = np.conj(ph)
            nwp = c[..., None, :] * wp - (s * cph)[..., None, :] * wq
            nwq = s[..., None, :] * wp + (c * cph)[..., None, :] * wq
            w[..., :, p] = nwp
            w[..., :, q] = nwq
            vp = v[..., :, p]
            vq = v[..., :, q]
            v[..., :, p] = c[..., None, :] * vp - (s * cph)[..., None, :] * vq
            v[..., :, q] = s[..., None, :] * vp + (c * cph)[..., None, :] * vq
        if worst <= 1e-15 or (worst <= 1e-11 and worst > 0.5 * prev):
            break
        prev = worst
    return w, v


def svd(a: ComplexMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``a = u diag(s) v*`` by one-sided Jacobi; s descending."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise DimensionMismatch("svd expects a matrix")
    rows, cols = m.shape
    if cols == 0 or rows == 0:
        k = min(rows, cols)
        return np.zeros((rows, k), complex), np.zeros(k), np.zeros((cols, k), complex)
    if rows < cols:
        u, s, v = svd(m.conj().T)
        return v, s, u
    w, v = _one_sided_jacobi(m, get_policy().jacobi_max_sweeps)
    s = np.sqrt(np.sum(np.abs(w) ** 2, axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]
    u = np.where(s[None, :] > 0, w / np.where(s > 0, s, 1.0)[None, :], 0.0)
    return u, s, v


def singular_values(a: ComplexMatrix) -> np.ndarray:
    return svd(a)[1]


def singular_values_batch(a: np.ndarray) -> np.ndarray:
    """Descending singular values for a stack (..., m, n) with m >= n."""
    w, _ = _one_sided_jacobi(a, get_policy().jacobi_max_sweeps)
    s = np.sqrt(np.sum(np.abs(w) ** 2, axis=-2))
    return -np.sort(-s, axis=-1)


def smallest_singular_value(a: ComplexMatrix) -> float:
    s = singular_values(a)
    return float(s[-1]) if s.size else 0.0


def null_space(a: ComplexMatrix, tol: float = 1e-8) -> Subspace:
    """Right null space at relative tolerance ``tol`` (singular-value rank)."""
    m = np.asarray(a, dtype=np.complex128)
    cols = m.shape[1]
    if m.shape[0] == 0:
        return Subspace.full(cols)
    if m.shape[0] < cols:
        m = np.vstack([m, np.zeros((cols - m.shape[0], cols))])
    _, s, v = svd(m)
    top = s[0] if s.size else 0.0
    keep = s <= tol * max(top, 1e-300) if top > 0 else np.ones(s.size, bool)
    return orthonormalize(v[:, keep]) if keep.any() else Subspace.zero(cols)


def numerical_rank(a: ComplexMatrix, tol: float = 1e-8) -> int:
    s = singular_values(a)
    if not s.size or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


# ---------------------------------------------------------------------------
# Norms and exponentials
# ---------------------------------------------------------------------------


def sparsity_components(b: np.ndarray) -> list[np.ndarray]:
    """Index sets of the connected components of the sparsity graph of a square b."""
    n = b.shape[0]
    adj = (np.abs(b) > 0) | (np.abs(b.T) > 0)
    seen = np.zeros(n, dtype=bool)
    out = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        members = []
        while stack:
            i = stack.pop()
            members.append(i)
            nbrs = np.nonzero(adj[i] & ~seen)[0]
            seen[nbrs] = True
            stack.extend(nbrs.tolist())
        out.append(np.array(sorted(members)))
    return out


def op_norm(a: ComplexMatrix) -> float:
    """Largest singular value by block power iteration on a*a.

    A block of up to four vectors with a Rayleigh-Ritz step per iteration is
    used so that clustered leading singular values do not stall the
    iteration; the start block is fixed, so the result is deterministic.
    """
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise DimensionMismatch("op_norm expects a matrix")
    if m.size == 0 or not np.any(m):
        return 0.0
    if m.shape[0] == m.shape[1] and m.shape[0] > 8 and np.count_nonzero(m) < 0.5 * m.size:
        blocks = sparsity_components(m)
        if len(blocks) > 1:
            return _blockwise_norm(m, blocks)
    return _power_norm(m)


def _blockwise_norm(m: np.ndarray, blocks: list[np.ndarray]) -> float:
    by_size: dict[int, list[np.ndarray]] = {}
    for idx in blocks:
        by_size.setdefault(idx.size, []).append(idx)
    best = 0.0
    for size, group in by_size.items():
        if size <= 16:
            idx = np.stack(group)
            stack = m[idx[:, :, None], idx[:, None, :]]
            best = max(best, float(singular_values_batch(stack)[:, 0].max()))
        else:
            best = max(best, max(_power_norm(m[np.ix_(g, g)]) for g in group))
    return best


def _power_norm(m: np.ndarray) -> float:
    if not np.any(m):
        return 0.0
    pol = get_policy()
    n = m.shape[1]
    k = min(4, n)
    rng = np.random.default_rng(7919)
    x = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    x = _gram_schmidt(x, 1e-12)
    ah = m.conj().T
    prev = -1.0
    sigma = 0.0
    resid = math.inf
    for _ in range(pol.power_maxiter):
        y = m @ x
        z = ah @ y
        g = y.conj().T @ y
        vals, vecs = _jacobi_hermitian(0.5 * (g + g.conj().T), pol.jacobi_max_sweeps)
        top = int(np.argmax(vals))
        mu = max(float(vals[top]), 0.0)
        sigma = math.sqrt(mu)
        if abs(sigma - prev) <= pol.power_rtol * sigma:
            w = x @ vecs[:, top]
            r = ah @ (m @ w) - mu * w
            resid = float(np.sqrt(np.sum(np.abs(r) ** 2))) / max(mu, 1e-300)
            if resid <= max(pol.power_residual, 1e-300) or abs(sigma - prev) == 0.0:
                return sigma
        prev = sigma
        nx = _gram_schmidt(z, 1e-14)
        if nx.shape[1] == 0:
            return sigma
        x = nx
    # slow convergence usually means a tight cluster; fall back to the full SVD
    s = singular_values(m)
    if not np.all(np.isfinite(s)):
        raise NoConvergence(f"power iteration hit the cap with residual {resid:.2e}")
    return float(s[0])


def frobenius(a: np.ndarray) -> float:
    return math.sqrt(float(np.sum(np.abs(a) ** 2)))


def two_norm_bound(a: ComplexMatrix) -> float:
    """Cheap upper bound sqrt(‖a‖₁‖a‖∞) for the operator norm."""
    m = np.abs(np.asarray(a))
    if m.size == 0:
        return 0.0
    return math.sqrt(float(m.sum(axis=0).max()) * float(m.sum(axis=1).max()))


def matrix_exp(a: ComplexMatrix) -> ComplexMatrix:
    """exp(a) by scaling and squaring around a degree-18 Taylor core."""
    m = _as_square(a)
    n = m.shape[0]
    cap = get_policy().exp_norm_cap
    if two_norm_bound(m) > cap and op_norm(m) > cap:
        raise NormTooLarge(f"‖a‖ exceeds {cap}; subdivide the interval")
    norm1 = float(np.abs(m).sum(axis=0).max()) if n else 0.0
    s = max(0, int(math.ceil(math.log2(norm1 / 0.5)))) if norm1 > 0.5 else 0
    b = m / (2.0**s)
    eye = identity(n)
    e = eye.copy()
    for k in range(18, 0, -1):
        e = eye + (b @ e) / k
    for _ in range(s):
        e = e @ e
    return e


def kron_identity(block: np.ndarray, copies: int) -> np.ndarray:
    """Block-diagonal matrix with ``copies`` copies of ``block``."""
    return np.kron(identity(copies), np.asarray(block, dtype=np.complex128))


def block_diag(*blocks: Sequence[np.ndarray]) -> np.ndarray:
    mats = [np.atleast_2d(np.asarray(b, dtype=np.complex128)) for b in blocks]
    rows = sum(b.shape[0] for b in mats)
    cols = sum(b.shape[1] for b in mats)
    out = np.zeros((rows, cols), dtype=np.complex128)
    r = c = 0
    for b in mats:
        out[r : r + b.shape[0], c : c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out
