"""Finite-dimensional complex symplectic linear algebra.

The form is sesquilinear, ω(x, y) = ⟨γx, y⟩ = y*γx, with γ* = −γ, so that
ω(y, x) = −conj ω(x, y).  Subspaces are orthonormal frames
(:class:`~collarlab.numkernel.Subspace`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotCoisotropic, NotComplement, NotHermitian, PreconditionFailed, SignatureNonzero
from .numkernel import (
    ComplexMatrix,
    Subspace,
    adjoint,
    complement,
    hermitian_eigen,
    hermitian_inv_sqrt,
    identity,
    lu_solve,
    max_abs,
    numerical_rank,
    orthonormalize,
    principal_angles,
    singular_values,
    smallest_singular_value,
    subspace_intersection,
)

RANK_TOL = 1e-8


@dataclass(frozen=True)
class SymplecticSpace:
    gamma: ComplexMatrix

    def __post_init__(self) -> None:
        g = np.asarray(self.gamma, dtype=np.complex128)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise PreconditionFailed("γ must be square")
        scale = max(max_abs(g), 1e-300)
        if max_abs(g + adjoint(g)) > 1e-10 * scale:
            raise PreconditionFailed("γ is not skew-adjoint")
        if smallest_singular_value(g) < 1e-8:
            raise PreconditionFailed("γ is not invertible (weakly symplectic case is out of scope)")
        object.__setattr__(self, "gamma", g)

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def omega(self, x: np.ndarray, y: np.ndarray) -> complex:
        return complex(np.vdot(y, self.gamma @ x))

    def form_matrix(self, lam: Subspace) -> ComplexMatrix:
        """Gram matrix F*γF of ω on a frame."""
        f = lam.frame
        return adjoint(f) @ self.gamma @ f


def standard_space(n: int) -> SymplecticSpace:
    """γ = [[0, −I], [I, 0]] on C^{2n}."""
    g = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    g[:n, n:] = -identity(n)
    g[n:, :n] = identity(n)
    return SymplecticSpace(g)


def annihilator(sp: SymplecticSpace, lam: Subspace) -> Subspace:
    """λ^ω = (γλ)^⊥."""
    if lam.ambient_dim != sp.dim:
        raise PreconditionFailed("subspace lives in a different space")
    if lam.dim == 0:
        return Subspace.full(sp.dim)
    return complement(orthonormalize(sp.gamma @ lam.frame, RANK_TOL))


def isotropy_defect(sp: SymplecticSpace, lam: Subspace) -> float:
    if lam.dim == 0:
        return 0.0
    return max_abs(sp.form_matrix(lam)) / max(1.0, max_abs(sp.gamma))


@dataclass(frozen=True)
class LagrangianReport:
    ok: bool
    isotropy_defect: float
    max_angle: float
    dim: int
    annihilator_dim: int

    def __bool__(self) -> bool:
        return self.ok


def is_lagrangian(sp: SymplecticSpace, lam: Subspace, tol: float = 1e-7) -> LagrangianReport:
    """λ^ω = λ: equal dimensions and all principal angles at most ``tol``."""
    ann = annihilator(sp, lam)
    iso = isotropy_defect(sp, lam)
    if ann.dim != lam.dim:
        return LagrangianReport(False, iso, math.pi / 2, lam.dim, ann.dim)
    angle = max(principal_angles(lam, ann), default=0.0)
    return LagrangianReport(angle <= tol, iso, angle, lam.dim, ann.dim)


def sum_dimension(lam: Subspace, mu: Subspace, tol: float = RANK_TOL) -> int:
    return numerical_rank(np.hstack([lam.frame, mu.frame]), tol) if lam.dim + mu.dim else 0


def intersection_dimension(lam: Subspace, mu: Subspace, tol: float = RANK_TOL) -> int:
    """dim(λ ∩ μ) from the null space of [F_λ, −F_μ]."""
    if lam.dim == 0 or mu.dim == 0:
        return 0
    stacked = np.hstack([lam.frame, -mu.frame])
    return stacked.shape[1] - numerical_rank(stacked, tol)


def fredholm_pair_index(lam: Subspace, mu: Subspace, tol: float = RANK_TOL) -> int:
    """dim(λ ∩ μ) − codim(λ + μ)."""
    if lam.ambient_dim != mu.ambient_dim:
        raise PreconditionFailed("subspaces live in different spaces")
    return intersection_dimension(lam, mu, tol) - (lam.ambient_dim - sum_dimension(lam, mu, tol))


def transversal_isotropic_upgrade_check(sp: SymplecticSpace, lam: Subspace, mu: Subspace, tol: float = 1e-8) -> bool:
    """Transversal isotropic subspaces are Lagrangian; checked for both."""
    if isotropy_defect(sp, lam) > tol:
        raise PreconditionFailed("λ is not isotropic")
    if isotropy_defect(sp, mu) > tol:
        raise PreconditionFailed("μ is not isotropic")
    if intersection_dimension(lam, mu) != 0:
        raise PreconditionFailed("λ ∩ μ ≠ 0")
    if sum_dimension(lam, mu) != sp.dim:
        raise PreconditionFailed("λ + μ is not the whole space")
    return bool(is_lagrangian(sp, lam)) and bool(is_lagrangian(sp, mu))


# ---------------------------------------------------------------------------
# Reduction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Reduction:
    """Q₀(λ ∩ W) inside W₀, with the reduced form on W₀-coordinates."""

    subspace: Subspace  # in the ambient space
    coords: Subspace  # in the orthonormal coordinates of W₀
    reduced: SymplecticSpace | None
    report: LagrangianReport | None


def contained(inner: Subspace, outer: Subspace, tol: float = 1e-8) -> bool:
    return inner.dim == 0 or outer.contains(inner.frame, tol)


def symplectic_reduce(sp: SymplecticSpace, lam: Subspace, w: Subspace, w0: Subspace, tol: float = 1e-7) -> Reduction:
    """Project λ ∩ W along W^ω onto W₀ and verify it is Lagrangian in (W₀, ω|W₀)."""
    w_om = annihilator(sp, w)
    if not contained(w_om, w):
        raise NotCoisotropic("W^ω is not contained in W")
    if not contained(w0, w):
        raise NotComplement("W₀ is not a subspace of W")
    if w0.dim + w_om.dim != w.dim or (w0.dim and w_om.dim and intersection_dimension(w0, w_om) != 0):
        raise NotComplement("W₀ and W^ω do not split W")
    cap = subspace_intersection(lam, w)
    if w0.dim == 0:
        empty = Subspace.zero(sp.dim)
        return Reduction(empty, Subspace.zero(0), None, None)
    basis = np.hstack([w0.frame, w_om.frame])
    # coefficients of each vector of λ ∩ W in the splitting W = W₀ ⊕ W^ω
    normal = adjoint(basis) @ basis
    coef = lu_solve(normal, adjoint(basis) @ cap.frame) if cap.dim else np.zeros((basis.shape[1], 0))
    a = coef[: w0.dim]
    coords = orthonormalize(a, RANK_TOL)
    reduced = SymplecticSpace(adjoint(w0.frame) @ sp.gamma @ w0.frame)
    report = is_lagrangian(reduced, coords, tol)
    if not report.ok:
        raise PreconditionFailed(f"reduction is not Lagrangian (angle {report.max_angle:.2e})")
    ambient = orthonormalize(w0.frame @ coords.frame, RANK_TOL) if coords.dim else Subspace.zero(sp.dim)
    return Reduction(ambient, coords, reduced, report)


# ---------------------------------------------------------------------------
# Signatures and Lagrangians from forms
# ---------------------------------------------------------------------------


def form_signature(h: ComplexMatrix, threshold: float = 1e-9) -> int:
    h = np.asarray(h, dtype=np.complex128)
    if max_abs(h - adjoint(h)) > 1e-9 * max(1.0, max_abs(h)):
        raise NotHermitian("form is not Hermitian")
    vals, _ = hermitian_eigen(0.5 * (h + adjoint(h)))
    return int(np.sum(vals > threshold) - np.sum(vals < -threshold))


def lagrangian_from_zero_signature(h: ComplexMatrix, sp: SymplecticSpace | None = None) -> Subspace:
    """Lagrangian for ω = −i⟨h·,·⟩ obtained by pairing positive and negative eigenvectors.

    Each pair is scaled by |eigenvalue|^{−1/2} so the sum is isotropic even
    when the two eigenvalues differ in size.
    """
    h = np.asarray(h, dtype=np.complex128)
    if max_abs(h - adjoint(h)) > 1e-9 * max(1.0, max_abs(h)):
        raise NotHermitian("form is not Hermitian")
    vals, vecs = hermitian_eigen(0.5 * (h + adjoint(h)))
    pos = [i for i, v in enumerate(vals) if v > 1e-9]
    neg = [i for i, v in enumerate(vals) if v < -1e-9]
    if len(pos) + len(neg) != vals.size:
        raise PreconditionFailed("form is degenerate")
    if len(pos) != len(neg):
        raise SignatureNonzero(f"signature is {len(pos) - len(neg)}")
    cols = [vecs[:, p] / math.sqrt(vals[p]) + vecs[:, q] / math.sqrt(-vals[q]) for p, q in zip(pos, neg)]
    lam = orthonormalize(np.stack(cols, axis=1), RANK_TOL) if cols else Subspace.zero(vals.size)
    space = SymplecticSpace(-1j * h) if sp is None else sp
    report = is_lagrangian(space, lam)
    if not report.ok:
        raise PreconditionFailed(f"paired subspace is not Lagrangian (angle {report.max_angle:.2e})")
    return lam


def unitary_reflection(gamma: ComplexMatrix) -> ComplexMatrix:
    """γ(−γ²)^{−1/2}: skew and unitary, implementing ω for an equivalent scalar product."""
    g = np.asarray(gamma, dtype=np.complex128)
    h = -(g @ g)
    return g @ hermitian_inv_sqrt(0.5 * (h + adjoint(h)))


# ---------------------------------------------------------------------------
# Random generators for property suites
# ---------------------------------------------------------------------------


def _random_complex(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    a = _random_complex(rng, (n, n))
    return 0.5 * (a + adjoint(a))


def random_symplectic(rng: np.random.Generator, half_dim: int, max_condition: float = 50.0) -> tuple[SymplecticSpace, np.ndarray]:
    """γ = A*γ₀A for a random well-conditioned A; returns (space, A)."""
    g0 = standard_space(half_dim).gamma
    while True:
        a = identity(2 * half_dim) + 0.5 * _random_complex(rng, (2 * half_dim, 2 * half_dim)) / math.sqrt(2 * half_dim)
        s = singular_values(a)
        if s[0] / s[-1] <= max_condition:
            return SymplecticSpace(adjoint(a) @ g0 @ a), a


def graph_lagrangian(a: np.ndarray, s: np.ndarray) -> Subspace:
    """A⁻¹·{(x, Sx)} for Hermitian S: Lagrangian for γ = A*γ₀A."""
    n = s.shape[0]
    frame = np.vstack([identity(n), s])
    return orthonormalize(lu_solve(a, frame), RANK_TOL)


def random_lagrangian(rng: np.random.Generator, a: np.ndarray) -> Subspace:
    n = a.shape[0] // 2
    return graph_lagrangian(a, _random_hermitian(rng, n))


def random_transversal_isotropic_pair(rng: np.random.Generator, a: np.ndarray) -> tuple[Subspace, Subspace]:
    """Two graphs of Hermitian matrices with invertible difference."""
    n = a.shape[0] // 2
    while True:
        s1, s2 = _random_hermitian(rng, n), _random_hermitian(rng, n)
        if smallest_singular_value(s1 - s2) > 1e-3:
            return graph_lagrangian(a, s1), graph_lagrangian(a, s2)


def random_coisotropic(rng: np.random.Generator, sp: SymplecticSpace, a: np.ndarray, k: int) -> tuple[Subspace, Subspace]:
    """W = I^ω for a random k-dimensional isotropic I, and a random complement W₀ of W^ω in W."""
    lag = random_lagrangian(rng, a)
    iso = orthonormalize(lag.frame @ _random_complex(rng, (lag.dim, k)), RANK_TOL) if k else Subspace.zero(sp.dim)
    w = annihilator(sp, iso)
    w_om = annihilator(sp, w)
    # complement of W^ω inside W, tilted randomly so the split is not orthogonal
    perp = _perp_in(w, w_om)
    if perp.dim and w_om.dim:
        tilt = perp.frame + 0.3 * w_om.frame @ _random_complex(rng, (w_om.dim, perp.dim))
        w0 = orthonormalize(tilt, RANK_TOL)
    else:
        w0 = perp
    return w, w0


def _perp_in(w: Subspace, sub: Subspace) -> Subspace:
    """Orthogonal complement of ``sub`` inside ``w``."""
    if sub.dim == 0:
        return w
    coords = adjoint(w.frame) @ sub.frame
    inner = complement(orthonormalize(coords, RANK_TOL))
    if inner.dim == 0:
        return Subspace.zero(w.ambient_dim)
    return orthonormalize(w.frame @ inner.frame, RANK_TOL)
