"""First-order operators Γ(θ)∂_θ + V(θ) on a truncated Fourier basis.

Index convention: fiber component j of Fourier mode k (−N <= k <= N) sits at
row (k + N)·m + j.  Coefficient fields are trigonometric polynomials stored as
{p: m×m matrix}, meaning Σ_p A_p e^{ipθ}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import DegreeTooHigh, DimensionMismatch
from .numkernel import ComplexMatrix, adjoint, max_abs, op_norm, singular_values_batch

TrigField = dict
FieldSpec = Union[None, np.ndarray, Mapping[int, object], Sequence[tuple]]


def _is_pair_list(spec: object) -> bool:
    return isinstance(spec, (list, tuple)) and all(
        isinstance(e, (list, tuple)) and len(e) == 2 and isinstance(e[0], (int, np.integer)) for e in spec
    )


def trig_field(spec: FieldSpec, m: int) -> TrigField:
    """Normalize a coefficient description to {mode: m×m complex array}.

    Accepts None, a constant (scalar or m×m), a mapping {k: matrix} or a list
    of (k, matrix) pairs.
    """
    if spec is None:
        return {}
    if isinstance(spec, Mapping):
        items = spec.items()
    elif _is_pair_list(spec) and len(spec):
        items = spec
    else:
        items = [(0, spec)]
    out: TrigField = {}
    for k, mat in items:
        k = int(k)
        out[k] = out.get(k, 0) + _fiber(np.asarray(mat, dtype=np.complex128), m)
    return {k: v for k, v in out.items() if np.any(v)}


def _fiber(a: np.ndarray, m: int) -> np.ndarray:
    if a.ndim == 0:
        return a * np.eye(m, dtype=np.complex128)
    a = np.atleast_2d(a)
    if a.shape != (m, m):
        raise DimensionMismatch(f"coefficient has shape {a.shape}, expected {(m, m)}")
    return a.astype(np.complex128)


def field_degree(f: TrigField) -> int:
    return max((abs(k) for k in f), default=0)


def evaluate_field(f: TrigField, theta: np.ndarray, m: int) -> np.ndarray:
    """Sample Σ_p A_p e^{ipθ} at the given angles; shape (len(theta), m, m)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    out = np.zeros((theta.size, m, m), dtype=np.complex128)
    for k, a in f.items():
        out += np.exp(1j * k * theta)[:, None, None] * a
    return out


def field_adjoint(f: TrigField) -> TrigField:
    """Pointwise adjoint: (Σ A_p e^{ipθ})* = Σ A_p* e^{−ipθ}."""
    return {-k: adjoint(a) for k, a in f.items()}


def field_derivative(f: TrigField) -> TrigField:
    return {k: 1j * k * a for k, a in f.items() if k}


def modes(N: int) -> np.ndarray:
    return np.arange(-N, N + 1)


def multiplication_matrix(f: TrigField, m: int, N: int) -> ComplexMatrix:
    """Compression of multiplication by a trigonometric polynomial (block convolution)."""
    size = (2 * N + 1) * m
    out = np.zeros((size, size), dtype=np.complex128)
    for p, a in f.items():
        for k in range(-N, N + 1):
            src = k - p
            if -N <= src <= N:
                r = (k + N) * m
                c = (src + N) * m
                out[r : r + m, c : c + m] += a
    return out


def derivative_matrix(m: int, N: int) -> ComplexMatrix:
    """∂_θ: multiplication by ik on mode k."""
    return np.diag(np.repeat(1j * modes(N), m)).astype(np.complex128)


def mode_weights(N: int, m: int, s: float) -> np.ndarray:
    """Diagonal of the Sobolev weight (1+|k|)^s, repeated over the fiber."""
    return np.repeat((1.0 + np.abs(modes(N))) ** float(s), m)


@dataclass(frozen=True)
class SobolevWeight:
    order: float
    N: int
    m: int

    @property
    def diagonal(self) -> np.ndarray:
        return mode_weights(self.N, self.m, self.order)

    @property
    def matrix(self) -> ComplexMatrix:
        return np.diag(self.diagonal).astype(np.complex128)

    def inverse(self) -> "SobolevWeight":
        return SobolevWeight(-self.order, self.N, self.m)


@dataclass(frozen=True)
class CircleOperator:
    fiber_dim: int
    N: int
    gamma: TrigField
    v: TrigField
    realized: ComplexMatrix

    @property
    def size(self) -> int:
        return (2 * self.N + 1) * self.fiber_dim

    @classmethod
    def from_matrix(cls, realized: ComplexMatrix, N: int, m: int) -> "CircleOperator":
        """Wrap an already realized matrix, e.g. a Fourier multiplier surrogate."""
        realized = np.asarray(realized, dtype=np.complex128)
        if realized.shape != ((2 * N + 1) * m,) * 2:
            raise DimensionMismatch("realized matrix does not match (N, m)")
        return cls(m, N, {}, {}, realized)

    def gamma_at(self, theta: float) -> np.ndarray:
        return evaluate_field(self.gamma, np.array([theta]), self.fiber_dim)[0]


def assemble(
    gamma: FieldSpec,
    v: FieldSpec,
    m: int,
    N: int,
    selfadjoint: bool = False,
    check_degree: bool = True,
) -> CircleOperator:
    """Realize Γ(θ)∂_θ + V(θ) on modes −N..N."""
    g = trig_field(gamma, m)
    w = trig_field(v, m)
    deg = max(field_degree(g), field_degree(w))
    # degree <= N/2 keeps products inside the window; beyond N nothing survives
    if check_degree and deg > N:
        raise DegreeTooHigh(f"coefficient degree {deg} exceeds the truncation N = {N}")
    realized = multiplication_matrix(g, m, N) @ derivative_matrix(m, N) + multiplication_matrix(w, m, N)
    if selfadjoint:
        defect = max_abs(realized - adjoint(realized))
        if defect > 1e-9 * max(1.0, max_abs(realized)):
            raise DimensionMismatch(f"coefficients flagged selfadjoint but realized defect is {defect:.2e}")
    return CircleOperator(m, N, g, w, realized)


def fourier_multiplier(symbol, N: int, m: int) -> ComplexMatrix:
    """Block-diagonal operator acting on mode k by symbol(k) (scalar or m×m)."""
    size = (2 * N + 1) * m
    out = np.zeros((size, size), dtype=np.complex128)
    for k in range(-N, N + 1):
        r = (k + N) * m
        out[r : r + m, r : r + m] = _fiber(np.asarray(symbol(k), dtype=np.complex128), m)
    return out


def order_multiplier(alpha: float, matrix: np.ndarray, N: int) -> ComplexMatrix:
    """Surrogate operator of order α: (1+|k|)^α times a bounded fiber matrix."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.complex128))
    m = matrix.shape[0]
    return fourier_multiplier(lambda k: (1.0 + abs(k)) ** alpha * matrix, N, m)


def infer_modes(size: int, m: int) -> int:
    if size % m or (size // m) % 2 == 0:
        raise DimensionMismatch(f"size {size} is not (2N+1)·{m}")
    return (size // m - 1) // 2


def sobolev_op_norm(a: ComplexMatrix, s_in: float, s_out: float, fiber_dim: int = 1) -> float:
    """‖a‖ as a map from order s_in to order s_out."""
    a = np.asarray(a, dtype=np.complex128)
    N_out = infer_modes(a.shape[0], fiber_dim)
    N_in = infer_modes(a.shape[1], fiber_dim)
    w_out = mode_weights(N_out, fiber_dim, s_out)
    w_in = mode_weights(N_in, fiber_dim, -s_in)
    return op_norm(w_out[:, None] * a * w_in[None, :])


def leading_symbol(b: CircleOperator, theta: float, xi: float) -> ComplexMatrix:
    """σ¹(θ, ξ) = Γ(θ)·iξ."""
    return b.gamma_at(theta) * (1j * xi)


@dataclass(frozen=True)
class EllipticityReport:
    ok: bool
    min_singular_value: float
    worst_point: tuple
    threshold: float = 1e-6


def _symbol_sigma(gamma: TrigField, m: int, theta, xi, lam) -> np.ndarray:
    """σ_min(Γ(θ)iξ − λ) for broadcast-compatible parameter arrays."""
    theta, xi, lam = np.broadcast_arrays(np.asarray(theta, float), np.asarray(xi, float), np.asarray(lam, complex))
    g = evaluate_field(gamma, theta.ravel(), m)
    mats = (1j * xi.ravel())[:, None, None] * g - lam.ravel()[:, None, None] * np.eye(m)
    return singular_values_batch(mats)[:, -1].reshape(theta.shape)


def _sphere_point(sgn: float, beta, axis: float, psi):
    beta = np.asarray(beta, float)
    return sgn * np.cos(beta), np.sin(beta) * np.exp(1j * (axis + np.asarray(psi, float)))


def symbol_minimum(
    gamma: TrigField, m: int, sector_angle: float, n_theta: int = 32, n_lambda: int = 64, refine: int = 60
) -> tuple[float, tuple]:
    """min over the (ξ, λ) unit sphere, λ in the closed sector around iℝ, of σ_min(σ¹ − λ).

    A tensor grid locates the worst cell; a shrinking pattern search then
    refines it, which matters when the symbol degenerates between nodes.
    """
    thetas = np.linspace(0.0, 2.0 * math.pi, n_theta, endpoint=False)
    betas = np.linspace(0.0, 0.5 * math.pi, n_lambda)
    psis = np.linspace(-sector_angle, sector_angle, 5)
    best = (math.inf, None)
    for sgn in (1.0, -1.0):
        for axis in (0.5 * math.pi, -0.5 * math.pi):
            T, Bt, P = np.meshgrid(thetas, betas, psis, indexing="ij")
            xi, lam = _sphere_point(sgn, Bt, axis, P)
            sig = _symbol_sigma(gamma, m, T, xi, lam)
            k = np.unravel_index(int(np.argmin(sig)), sig.shape)
            val = float(sig[k])
            start = (float(T[k]), float(Bt[k]), float(P[k]))
            steps = np.array([2.0 * math.pi / n_theta, 0.5 * math.pi / n_lambda, 2.0 * sector_angle / 4])
            x = np.array(start)
            for _ in range(refine):
                offs = np.array(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1], indexing="ij")).reshape(3, -1).T
                cand = x[None, :] + offs * steps[None, :]
                cand[:, 1] = np.clip(cand[:, 1], 0.0, 0.5 * math.pi)
                cand[:, 2] = np.clip(cand[:, 2], -sector_angle, sector_angle)
                xi_c, lam_c = _sphere_point(sgn, cand[:, 1], axis, cand[:, 2])
                vals = _symbol_sigma(gamma, m, cand[:, 0], xi_c, lam_c)
                j = int(np.argmin(vals))
                if vals[j] < val:
                    val, x = float(vals[j]), cand[j]
                else:
                    steps = steps * 0.5
            if val < best[0]:
                xi_b, lam_b = _sphere_point(sgn, x[1], axis, x[2])
                best = (val, (float(x[0] % (2.0 * math.pi)), float(xi_b), complex(lam_b)))
    return best


def parametric_ellipticity_check(
    b: CircleOperator, sector_angle: float, grid: tuple[int, int] = (32, 64), threshold: float = 1e-6
) -> EllipticityReport:
    n_theta, n_lambda = grid
    if n_theta < 32 or n_lambda < 64:
        raise DimensionMismatch("grid needs at least 32 θ and 64 λ samples")
    smin, worst = symbol_minimum(b.gamma, b.fiber_dim, sector_angle, n_theta, n_lambda)
    return EllipticityReport(smin >= threshold, smin, worst, threshold)
