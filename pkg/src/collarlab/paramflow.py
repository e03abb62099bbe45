"""Metrics on (operator, boundary condition) pairs and continuity experiments.

Sobolev norms of tangential operators are evaluated exactly on the truncated
Fourier model.  Collar terms of remainder type use a sup over sampled x of
coefficient difference quotients, which bounds the true mapping norm from
above on the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .calderon import (
    BoundaryConditionT,
    calderon_pair,
    double_solver,
    make_boundary_condition,
    poisson_apply_many,
    resolvent_solver,
)
from .circleop import mode_weights, sobolev_op_norm
from .collar import CollarOperator, Section, boole_weights, fd4, formal_adjoint, kron_modes
from .cutoffs import SmoothCutoff
from .errors import (
    CNearSpectrum,
    CutCrossed,
    CutInvalid,
    LabError,
    NeumannDiverges,
    NotHermitian,
    PreconditionFailed,
    QTooLarge,
    ShapeMismatch,
)
from .numkernel import (
    ComplexMatrix,
    adjoint,
    hermitian_eigen,
    hermitian_function,
    identity,
    lu_solve,
    max_abs,
    op_norm,
)
from .sectorial import (
    Idempotent,
    SpectralCutConfig,
    build_negative_contour,
    build_positive_contour,
    circle_contour,
    collar_nodes,
    contour_integral,
    default_cut,
    fit_loglog,
    q_many,
    sectorial_projection,
)

Pair = tuple  # (CollarOperator, BoundaryConditionT)


# ---------------------------------------------------------------------------
# Pair metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairMetrics:
    n0: float
    n1: float
    d_str: float
    terms: dict = field(default_factory=dict, compare=False)


def _boundary_weights(N: int, m: int, s: float) -> np.ndarray:
    w = mode_weights(N, m, s)
    return np.concatenate([w, w])


def boundary_norm(a: ComplexMatrix, s_in: float, s_out: float, N: int, m: int) -> float:
    """Norm of a map on L²(Σ₀) ⊕ L²(Σ_ℓ) from order s_in to order s_out."""
    a = np.asarray(a, dtype=np.complex128)
    w_out = _boundary_weights(N, m, s_out)
    w_in = _boundary_weights(N, m, -s_in)
    return op_norm(w_out[:, None] * a * w_in[None, :])


def _zeroth(d: CollarOperator, xs: np.ndarray) -> np.ndarray:
    """½J′ + C, the zeroth order coefficient, as a stack."""
    return np.asarray(d.C(xs), dtype=np.complex128) + 0.5 * kron_modes(np.asarray(d.J.deriv(xs)), d.N)


def _first(d: CollarOperator, xs: np.ndarray) -> np.ndarray:
    """J·B + ½J′ + C: everything but the normal derivative."""
    jb = kron_modes(np.asarray(d.J(xs)), d.N) @ np.asarray(d.B(xs), dtype=np.complex128)
    return jb + _zeroth(d, xs)


def _samples(d: CollarOperator, count: int = 17) -> np.ndarray:
    return np.linspace(0.0, d.length, count)


def _collar_samples(d: CollarOperator, count: int = 8) -> np.ndarray:
    return d.length / 4.0 * np.arange(1, count + 1) / count


def _op_norm_10(d1: CollarOperator, d2: CollarOperator) -> float:
    """sup_x ‖ΔJ(x)‖ + ‖Δ(JB + ½J′ + C)(x)‖_{1,0}, a bound for ‖D₁ − D₂‖_{1,0}."""
    xs = _samples(d1)
    dj = np.asarray(d1.J(xs)) - np.asarray(d2.J(xs))
    df = _first(d1, xs) - _first(d2, xs)
    return max(op_norm(a) + sobolev_op_norm(b, 1.0, 0.0, d1.m) for a, b in zip(dj, df))


def _boundary_stack(d: CollarOperator, fn: Callable) -> np.ndarray:
    """diag(f(0), ±f(ℓ)) for f given per side."""
    n = d.n
    out = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    out[:n, :n], out[n:, n:] = fn(d)
    return out


def _tangential(d: CollarOperator):
    # at Σ_ℓ the inward normal is −∂x, so the tangential operator flips sign
    return d.B_at(0.0), -d.B_at(d.length)


def _jsigma_parts(d: CollarOperator):
    return d.J_full(0.0), -d.J_full(d.length)


def _c0(d: CollarOperator):
    z = _zeroth(d, np.array([0.0, d.length]))
    return z[0], z[1]


def _remainder(d: CollarOperator, xs: np.ndarray, side: int) -> tuple[np.ndarray, np.ndarray]:
    """(J(x) − J_b)/dist and (F(x) − F_b)/dist near the boundary ``side``."""
    xb = 0.0 if side == 0 else d.length
    pts = xs if side == 0 else d.length - xs
    dist = xs[:, None, None]
    jr = (np.asarray(d.J(pts)) - np.asarray(d.J(np.array([xb])))) / dist
    fr = (_first(d, pts) - _first(d, np.array([xb]))) / dist
    return jr, fr


def _remainder_norm(d1: CollarOperator, d2: CollarOperator) -> float:
    xs = _collar_samples(d1)
    worst = 0.0
    for side in (0, 1):
        j1, f1 = _remainder(d1, xs, side)
        j2, f2 = _remainder(d2, xs, side)
        for a, b in zip(j1 - j2, f1 - f2):
            worst = max(worst, op_norm(a) + sobolev_op_norm(b, 1.0, 0.0, d1.m))
    return worst


def _check_shapes(p1: Pair, p2: Pair) -> None:
    d1, t1 = p1
    d2, t2 = p2
    if (d1.N, d1.m) != (d2.N, d2.m) or not math.isclose(d1.length, d2.length):
        raise ShapeMismatch("operators live on different discretizations")
    if t1.T.shape != t2.T.shape or t1.T.shape[0] != 2 * d1.n:
        raise ShapeMismatch("boundary conditions have mismatched sizes")


def pair_metrics(p1: Pair, p2: Pair) -> PairMetrics:
    """N₀ and N₁ of the difference of two pairs, each term reported by name."""
    _check_shapes(p1, p2)
    d1, bc1 = p1
    d2, bc2 = p2
    N, m = d1.N, d1.m
    a1, a2 = formal_adjoint(d1), formal_adjoint(d2)
    dT = bc1.T - bc2.T
    terms: dict[str, float] = {}
    terms["A"] = _op_norm_10(d1, d2)
    terms["At"] = _op_norm_10(a1, a2)
    terms["T_half"] = boundary_norm(dT, 0.5, 0.5, N, m)
    n0 = terms["A"] + terms["At"] + terms["T_half"]

    b1, b2 = _boundary_stack(d1, _tangential), _boundary_stack(d2, _tangential)
    bt1, bt2 = _boundary_stack(a1, _tangential), _boundary_stack(a2, _tangential)
    terms["B0"] = boundary_norm(b1 - b2, 1.0, 0.0, N, m)
    terms["B0t"] = boundary_norm(bt1 - bt2, 1.0, 0.0, N, m)
    # J₀ᵗ = J̃ at the boundary; the commutator is compared between the pairs
    j1, j2 = _boundary_stack(a1, _jsigma_parts), _boundary_stack(a2, _jsigma_parts)
    k1 = j1 @ bc1.T
    k2 = j2 @ bc2.T
    comm = (bt1 @ k1 - k1 @ bt1) - (bt2 @ k2 - k2 @ bt2)
    terms["commutator"] = boundary_norm(comm, 0.0, 0.0, N, m)
    terms["T"] = boundary_norm(dT, 0.0, 0.0, N, m)
    terms["J0"] = op_norm(_boundary_stack(d1, _jsigma_parts) - _boundary_stack(d2, _jsigma_parts))
    terms["C1"] = _remainder_norm(d1, d2)
    terms["C0"] = boundary_norm(_boundary_stack(d1, _c0) - _boundary_stack(d2, _c0), 0.0, 0.0, N, m)
    terms["C1t"] = _remainder_norm(a1, a2)
    terms["C0t"] = boundary_norm(_boundary_stack(a1, _c0) - _boundary_stack(a2, _c0), 0.0, 0.0, N, m)
    n1 = sum(v for k, v in terms.items() if k not in ("A", "At", "T_half"))
    return PairMetrics(float(n0), float(n1), float(n0) + float(n1), terms)


# ---------------------------------------------------------------------------
# Resolvent perturbation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResolventProbe:
    slope: float
    intercept: float
    prefactor: float
    v_norm: float
    target_slope: float
    ok: bool
    radii: tuple
    norms: tuple
    neumann: float


def _weighted(a: np.ndarray, s_in: float, s_out: float, m: int) -> float:
    return sobolev_op_norm(a, s_in, s_out, m)


def default_probe_lambdas(delta0: float = 0.05, lo: float = 2.0, hi: float = 20.0, count: int = 12) -> list[complex]:
    """Points ±δ₀ ± iy on the straight parts of Γ± with y log-spaced in [lo, hi]."""
    ys = np.geomspace(lo, hi, count)
    return [complex(sx * delta0, sy * y) for y in ys for sx in (1, -1) for sy in (1, -1)]


def resolvent_perturbation_probe(
    b: ComplexMatrix,
    v: ComplexMatrix,
    s: float,
    s2: float,
    lambdas: Sequence[complex] | None = None,
    fiber_dim: int = 1,
    neumann_limit: float = 0.5,
) -> ResolventProbe:
    """Decay of ‖(B+V−λ)⁻¹ − (B−λ)⁻¹‖ from order s to order s2 along the contour.

    The fitted prefactor C satisfies norm ≈ C·(‖V‖_{1,0}+‖Vᵗ‖_{1,0})·|λ|^slope.
    """
    b = np.asarray(b, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    lambdas = default_probe_lambdas() if lambdas is None else list(lambdas)
    n = b.shape[0]
    eye = identity(n)
    v_norm = _weighted(v, 1.0, 0.0, fiber_dim) + _weighted(adjoint(v), 1.0, 0.0, fiber_dim)
    radii, norms = [], []
    proxy = 0.0
    for lam in lambdas:
        r0 = lu_solve(b - lam * eye, eye)
        proxy = max(proxy, _weighted(v @ r0, s, s, fiber_dim))
        if proxy >= neumann_limit:
            raise NeumannDiverges(f"‖V(B − λ)⁻¹‖ = {proxy:.3f} at λ = {lam}")
        r1 = lu_solve(b + v - lam * eye, eye)
        radii.append(abs(lam))
        norms.append(_weighted(r1 - r0, s, s2, fiber_dim))
    target = -1.0 + s2 - s
    if max(norms) == 0.0:
        return ResolventProbe(-math.inf, -math.inf, 0.0, v_norm, target, True, tuple(radii), tuple(norms), proxy)
    slope, intercept, _ = fit_loglog(radii, norms)
    prefactor = math.exp(intercept) / v_norm if v_norm > 0 else math.inf
    return ResolventProbe(
        slope, intercept, prefactor, v_norm, target, slope <= target + 0.1, tuple(radii), tuple(norms), proxy
    )


# ---------------------------------------------------------------------------
# Sectorial stability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    eps: tuple
    norms: tuple
    exponent: float
    constant: float
    v_norm: float
    ok: bool


def _q_base(b, cfg, xs) -> list:
    out = []
    for sign, build in ((1.0, build_positive_contour), (-1.0, build_negative_contour)):
        gamma = build(b, cfg)
        out.append((sign, build, gamma, q_many(b, gamma, sign * xs)))
    return out


def _q_difference(base, bv, cfg, xs, ws, w_out, w_in) -> float:
    worst = 0.0
    for sign, build, gamma, q0 in base:
        build(bv, cfg)  # validates the cut for the perturbed operator
        diff = q_many(bv, gamma, sign * xs) - q0
        a = w_out[None, :, None] * diff * w_in[None, None, :]
        gram = np.einsum("k,kji,kjl->il", ws, a.conj(), a)
        vals, _ = hermitian_eigen(0.5 * (gram + adjoint(gram)))
        worst = max(worst, math.sqrt(max(float(vals[-1]), 0.0)))
    return worst


def sectorial_stability_probe(
    b: ComplexMatrix,
    v: ComplexMatrix,
    s: float,
    s2: float,
    cutoff: SmoothCutoff,
    eps: Sequence[float] = tuple(2.0 ** -j for j in range(1, 7)),
    fiber_dim: int = 1,
    cfg: SpectralCutConfig | None = None,
) -> StabilityReport:
    """Mixed L²_x(H^{s2}) size of φ(Q±(B+εV) − Q±(B)) on order-s data for each ε."""
    if not (-0.5 < s <= s2 < s + 0.5 and s2 <= 1.0):
        raise PreconditionFailed("need −½ < s ≤ s′ < s + ½ and s′ ≤ 1")
    b = np.asarray(b, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    from .circleop import infer_modes

    N = infer_modes(b.shape[0], fiber_dim)
    cfg = default_cut(b) if cfg is None else cfg
    xs, ws = collar_nodes(cutoff, 0.25 / max(1.0, op_norm(b)))
    ws = ws * cutoff(xs) ** 2
    w_out = mode_weights(N, fiber_dim, s2)
    w_in = mode_weights(N, fiber_dim, -s)
    base = _q_base(b, cfg, xs)
    norms = []
    for e in eps:
        if e == 0.0:
            norms.append(0.0)
            continue
        try:
            norms.append(_q_difference(base, b + e * v, cfg, xs, ws, w_out, w_in))
        except CutInvalid as exc:
            raise CutCrossed(f"the cut is crossed at ε = {e}") from exc
    v_norm = _weighted(v, 1.0, 0.0, fiber_dim) + _weighted(adjoint(v), 1.0, 0.0, fiber_dim)
    pos = [(e, r) for e, r in zip(eps, norms) if e > 0 and r > 0]
    if len(pos) < 2:
        return StabilityReport(tuple(eps), tuple(norms), math.nan, 0.0, v_norm, max(norms) == 0.0)
    exponent, intercept, _ = fit_loglog([p[0] for p in pos], [p[1] for p in pos])
    constant = max(r / (e * v_norm) for e, r in pos) if v_norm > 0 else math.inf
    return StabilityReport(tuple(eps), tuple(norms), exponent, constant, v_norm, abs(exponent - 1.0) <= 0.1)


# ---------------------------------------------------------------------------
# Lower order perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LowerOrderReport:
    scales: tuple
    v_norms: tuple
    diffs: tuple
    slope: float
    intercept: float
    ok: bool


def lower_order_projection_stability(
    b: ComplexMatrix,
    v: ComplexMatrix,
    alpha: float,
    scales: Sequence[float] = (1e-5, 2e-5, 4e-5, 8e-5, 1.6e-4),
    fiber_dim: int = 1,
    cfg: SpectralCutConfig | None = None,
    path_samples: int = 8,
) -> LowerOrderReport:
    """‖P₊(B + tV) − P₊(B)‖ against ‖tV‖_{α,0}; linear with vanishing intercept."""
    if not 0.0 <= alpha < 1.0:
        raise PreconditionFailed("need 0 ≤ α < 1")
    b = np.asarray(b, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    cfg = default_cut(b) if cfg is None else cfg
    gamma = build_positive_contour(b, cfg)
    p0 = sectorial_projection(b, gamma).mat
    unit = _weighted(v, alpha, 0.0, fiber_dim)
    v_norms, diffs = [], []
    for t in scales:
        # the cut must stay clear along the whole segment B + τV, 0 ≤ τ ≤ t
        for tau in np.linspace(0.0, t, path_samples)[1:]:
            try:
                build_positive_contour(b + tau * v, cfg)
            except CutInvalid as exc:
                raise CutCrossed(f"spectrum meets the cut at t = {tau:.3g}") from exc
        p = sectorial_projection(b + t * v, gamma).mat
        v_norms.append(abs(t) * unit)
        diffs.append(op_norm(p - p0))
    if len(scales) < 2:
        raise PreconditionFailed("need at least two scales")
    slope, intercept = np.polyfit(np.asarray(v_norms), np.asarray(diffs), 1)
    return LowerOrderReport(
        tuple(scales), tuple(v_norms), tuple(diffs), float(slope), float(intercept), abs(intercept) <= 1e-8
    )


# ---------------------------------------------------------------------------
# Selfadjoint path: Riesz map and spectral projections
# ---------------------------------------------------------------------------


def _hermitian(b: ComplexMatrix, tol: float = 1e-9) -> np.ndarray:
    b = np.asarray(b, dtype=np.complex128)
    if max_abs(b - adjoint(b)) > tol * max(1.0, max_abs(b)):
        raise NotHermitian("matrix is not Hermitian")
    return 0.5 * (b + adjoint(b))


def riesz_scalar(t):
    t = np.asarray(t, dtype=float)
    return t / np.sqrt(1.0 + t * t)


def riesz_map(b: ComplexMatrix) -> ComplexMatrix:
    """F(B) = B(Id + B²)^{−1/2}."""
    return hermitian_function(_hermitian(b), riesz_scalar)


@dataclass(frozen=True)
class RieszReport:
    q: float
    lhs: float
    rhs: float
    ok: bool


def _abs_shift_power(b: np.ndarray, p: float) -> np.ndarray:
    """|B + i|^p = (1 + B²)^{p/2}."""
    return hermitian_function(b, lambda t: (1.0 + t * t) ** (0.5 * p))


def riesz_q(b: ComplexMatrix, bt: ComplexMatrix) -> float:
    """max over ± of ‖(B − B̃)(B ± i)⁻¹‖ + ‖(B ± i)⁻¹(B − B̃)‖."""
    b = _hermitian(b)
    bt = _hermitian(bt)
    eye = identity(b.shape[0])
    diff = b - bt
    worst = 0.0
    for sign in (1.0, -1.0):
        r = lu_solve(b + sign * 1j * eye, eye)
        worst = max(worst, op_norm(diff @ r) + op_norm(r @ diff))
    return worst


def riesz_lipschitz_check(b: ComplexMatrix, bt: ComplexMatrix, q_limit: float = 0.5) -> RieszReport:
    """‖F(B) − F(B̃)‖ in the |B+i|^{1/2}-weighted norm against q(1 + (1+q)/(1−q))."""
    b = _hermitian(b)
    bt = _hermitian(bt)
    q = riesz_q(b, bt)
    if q >= q_limit:
        raise QTooLarge(f"q = {q:.3f} is not below {q_limit}")
    up = _abs_shift_power(b, 0.5)
    down = _abs_shift_power(b, -0.5)
    lhs = op_norm(up @ (riesz_map(b) - riesz_map(bt)) @ down)
    rhs = q * (1.0 + (1.0 + q) / (1.0 - q))
    return RieszReport(q, lhs, rhs, lhs <= rhs * (1.0 + 1e-12) + 1e-14)


def spectral_projection_above(b: ComplexMatrix, c: float, gap: float = 1e-6, check_tol: float = 1e-9) -> Idempotent:
    """1_{[c,∞)}(B) as a contour integral of (z − F(B))⁻¹ over |z − (F(c)+2)| = 2."""
    b = _hermitian(b)
    vals, vecs = hermitian_eigen(b)
    dist = float(np.min(np.abs(vals - c))) if vals.size else math.inf
    if dist < gap:
        raise CNearSpectrum(f"c = {c} lies within {dist:.2e} of the spectrum")
    fb = riesz_map(b)
    fc = float(riesz_scalar(c))
    contour = circle_contour(complex(fc + 2.0), 2.0, pieces=8)
    integral, _ = contour_integral(fb, contour)
    p = integral[0]
    oracle = (vecs * (vals > c).astype(float)[None, :]) @ adjoint(vecs)
    gap_seen = max_abs(p - oracle)
    if gap_seen > check_tol:
        raise PreconditionFailed(f"contour and eigen projections differ by {gap_seen:.2e}")
    return Idempotent(p)


# ---------------------------------------------------------------------------
# Domain transport
# ---------------------------------------------------------------------------


def sobolev_norm_1(u: Section, N: int, m: int) -> float:
    """Discrete H¹ norm on the cylinder: ∫ ‖(1+|k|)u‖² + ‖∂x u‖² dx."""
    w = boole_weights(u.grid.size, u.grid[1] - u.grid[0])
    k = mode_weights(N, m, 1.0)
    du = fd4(u.values, u.grid[1] - u.grid[0])
    dens = np.sum(np.abs(u.values * k[None, :]) ** 2, axis=1) + np.sum(np.abs(du) ** 2, axis=1)
    return math.sqrt(max(float(np.sum(w * dens)), 0.0))


@dataclass(frozen=True)
class TraceExtension:
    """e(ξ)(x) = χ(x)e^{−x⟨k⟩}ξ₀ + χ(ℓ−x)e^{−(ℓ−x)⟨k⟩}ξ_ℓ with ⟨k⟩ = 1 + |k|."""

    d: CollarOperator

    def cutoff(self) -> SmoothCutoff:
        return SmoothCutoff(self.d.length / 8.0, self.d.length / 4.0)

    def __call__(self, xi: np.ndarray) -> Section:
        d = self.d
        n = d.n
        xi = np.asarray(xi, dtype=np.complex128)
        if xi.shape != (2 * n,):
            raise ShapeMismatch("boundary vector has the wrong size")
        chi = self.cutoff()
        wk = mode_weights(d.N, d.m, 1.0)
        length = d.length

        def fn(xs):
            xs = np.asarray(xs, dtype=float)[:, None]
            left = chi(xs) * np.exp(-xs * wk[None, :]) * xi[None, :n]
            right = chi(length - xs) * np.exp(-(length - xs) * wk[None, :]) * xi[None, n:]
            return left + right

        return Section.from_function(d.grid, fn)

    def constant(self) -> float:
        """sup over modes of ‖e ξ‖₁ / ‖ξ‖_{1/2}, measured on the grid."""
        d = self.d
        best = 0.0
        for k in range(0, d.N + 1):
            xi = np.zeros(2 * d.n, dtype=np.complex128)
            xi[(k + d.N) * d.m] = 1.0
            ratio = sobolev_norm_1(self(xi), d.N, d.m) / math.sqrt(1.0 + k)
            best = max(best, ratio)
        return best


@dataclass(frozen=True)
class DomainTransport:
    """Φ_{T,T′}(f₊, f₋) = (f₊, f₋ + e((T′ − T)ρf₊))."""

    T: np.ndarray
    T2: np.ndarray
    e: Callable[[np.ndarray], Section]

    def __call__(self, f: tuple[Section, Section]) -> tuple[Section, Section]:
        fp, fm = f
        return fp, fm + self.e((self.T2 - self.T) @ fp.trace())

    def inverse(self) -> "DomainTransport":
        return DomainTransport(self.T2, self.T, self.e)


def _as_T(t) -> np.ndarray:
    if isinstance(t, BoundaryConditionT):
        t = t.T
    return np.asarray(t, dtype=np.complex128)


def domain_transport(T, T2, e: Callable[[np.ndarray], Section]) -> DomainTransport:
    a, b = _as_T(T), _as_T(T2)
    if a.shape != b.shape:
        raise ShapeMismatch("boundary conditions have different sizes")
    return DomainTransport(a, b, e)


def _pair_gap(f: tuple[Section, Section], g: tuple[Section, Section]) -> float:
    return max(max_abs(f[0].values - g[0].values), max_abs(f[1].values - g[1].values))


@dataclass(frozen=True)
class TransportReport:
    cocycle: float
    inverse: float
    condition_defect: float
    constant: float
    worst_ratio: float
    ok: bool


def transport_audit(
    d: CollarOperator,
    T,
    T2,
    T3,
    samples: Sequence[tuple[Section, Section]],
    tol: float = 1e-10,
) -> TransportReport:
    """Cocycle, inverse, condition transport and the bound ‖Φ − Id‖ ≤ C(e)‖T − T′‖."""
    e = TraceExtension(d)
    a, b, c = _as_T(T), _as_T(T2), _as_T(T3)
    phi_ab, phi_bc, phi_ac = domain_transport(a, b, e), domain_transport(b, c, e), domain_transport(a, c, e)
    cocycle = inverse = cond = 0.0
    ce = e.constant()
    dt = boundary_norm(b - a, 0.5, 0.5, d.N, d.m)
    wh = _boundary_weights(d.N, d.m, 0.5)
    worst = 0.0
    for f in samples:
        scale = max(1.0, max_abs(f[0].values), max_abs(f[1].values))
        cocycle = max(cocycle, _pair_gap(phi_bc(phi_ab(f)), phi_ac(f)) / scale)
        inverse = max(inverse, _pair_gap(phi_ab.inverse()(phi_ab(f)), f) / scale)
        g = phi_ab(f)
        # start from data satisfying ρf₋ = Tρf₊ and check the transported relation
        fixed = (f[0], f[1] + e(a @ f[0].trace() - f[1].trace()))
        h = phi_ab(fixed)
        tr = b @ h[0].trace()
        cond = max(cond, max_abs(h[1].trace() - tr) / max(1.0, max_abs(tr)))
        moved = sobolev_norm_1(Section(d.grid, g[1].values - f[1].values), d.N, d.m)
        bound = ce * dt * float(np.linalg.norm(wh * f[0].trace()))
        if bound > 0:
            worst = max(worst, moved / bound)
        elif moved > tol:
            worst = math.inf
    ok = cocycle <= tol and inverse <= tol and cond <= 1e-9 and worst <= 1.0 + 1e-9
    return TransportReport(cocycle, inverse, cond, ce, worst, ok)


# ---------------------------------------------------------------------------
# Families and continuity
# ---------------------------------------------------------------------------

TARGETS = ("double_inverse", "poisson", "calderon", "wellposed_resolvent")


@dataclass
class OperatorFamily:
    """z ↦ (D(z), T(z)); ``cut`` is the level c used on the spectral projection path."""

    build: Callable[[float], Pair]
    samples: Sequence[float]
    selfadjoint_symbol: bool = False
    cut: float | None = None
    label: str = ""

    def pair(self, z: float) -> Pair:
        return self.build(float(z))


def rotation_family(
    z0: float = 0.3,
    steps: Sequence[float] | None = None,
    mu: float = 0.7,
    N: int = 4,
    length: float = 1.0,
    grid_points: int = 65,
    choice: str = "JtInv",
) -> OperatorFamily:
    """Formally selfadjoint collar with zeroth order part μ(cos z σ_x + sin z σ_z)."""
    from .collar import constant_collar

    jm = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=np.complex128)
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)
    steps = [2.0 ** -j for j in range(1, 11)] if steps is None else list(steps)

    def build(z: float) -> Pair:
        v = mu * (math.cos(z) * sx + math.sin(z) * sz)
        d = constant_collar(length, N, 2, jm, -1j * sz, v, grid_points=grid_points, selfadjoint=True, label=f"rot{z:.4g}")
        return d, make_boundary_condition(d, choice)

    return OperatorFamily(build, [z0] + [z0 + s for s in steps], True, 0.5, "rotation")


def mass_family(
    masses: Sequence[float],
    N: int = 4,
    length: float = 1.0,
    grid_points: int = 65,
    cut: float = 0.5,
) -> OperatorFamily:
    """Selfadjoint collar with zeroth order part zσ_x; B₀ has ±z at the zero mode."""
    from .collar import constant_collar

    jm = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=np.complex128)
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)

    def build(z: float) -> Pair:
        d = constant_collar(length, N, 2, jm, -1j * sz, z * sx, grid_points=grid_points, selfadjoint=True, label=f"mass{z:.4g}")
        return d, make_boundary_condition(d, "JtInv")

    return OperatorFamily(build, list(masses), True, cut, "mass")


@dataclass(frozen=True)
class ContinuityRow:
    z_i: float
    z_j: float
    d_str: float
    diff: float
    flags: tuple = ()


@dataclass(frozen=True)
class ContinuityReport:
    target: str
    rows: tuple
    monotone: bool
    finest: float
    flagged: tuple
    errors: tuple

    def ok(self, finest_tol: float = 1e-3) -> bool:
        return self.monotone and self.finest <= finest_tol and not self.flagged and not self.errors

    def csv_rows(self) -> list[list]:
        return [[r.z_i, r.z_j, r.d_str, r.diff, ";".join(r.flags)] for r in self.rows]


def _default_rhs(d: CollarOperator, count: int = 3, seed: int = 7) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    w = mode_weights(d.N, d.m, -1.0)
    return [w * (rng.standard_normal(d.n) + 1j * rng.standard_normal(d.n)) for _ in range(count)]


def _smooth_section(d: CollarOperator, a: np.ndarray, freq: float) -> Section:
    return Section.from_function(d.grid, lambda x: np.outer(np.cos(freq * np.asarray(x)), a))


class _Evaluator:
    """Computes target(z) as an array whose differences are measured in the target norm."""

    def __init__(self, target: str, family: OperatorFamily) -> None:
        if target not in TARGETS:
            raise ValueError(f"unknown target {target!r}")
        self.target = target
        self.family = family

    def __call__(self, pair: Pair) -> dict:
        d, bc = pair
        out = {}
        if self.target == "double_inverse":
            vs = _default_rhs(d, 2)
            rhs = [(_smooth_section(d, vs[0], 1.0), _smooth_section(d, vs[1], 2.0))]
            sol = double_solver(d, bc, check_ucp=False).solve_many(rhs)
            out["sections"] = [s for pairsol in sol for s in pairsol]
        elif self.target == "poisson":
            pr = calderon_pair(d, bc)
            xis = np.stack([np.concatenate([u, w]) for u, w in zip(_default_rhs(d, 2, seed=3), _default_rhs(d, 2, seed=4))], axis=1)
            hw = _boundary_weights(d.N, d.m, 0.5)
            xis = xis / np.linalg.norm(hw[:, None] * xis, axis=0)
            out["sections"] = poisson_apply_many(pr, d, xis)
        elif self.target == "calderon":
            pr = calderon_pair(d, bc)
            out["matrix"] = pr.c_plus.mat
            if self.family.selfadjoint_symbol and self.family.cut is not None:
                b0 = d.B_at(0.0)
                out["spectral"] = spectral_projection_above(b0, self.family.cut).mat
                out["rank"] = int(round(float(np.real(np.trace(out["spectral"])))))
        else:
            pr = calderon_pair(d, make_boundary_condition(d, "JtInv"))
            solver = resolvent_solver(d, pr.c_plus.mat)
            g = _smooth_section(d, _default_rhs(d, 1, seed=5)[0], 1.5)
            out["sections"] = [solver.solve(g)]
        out["N"], out["m"] = d.N, d.m
        return out

    def distance(self, a: dict, b: dict) -> float:
        N, m = a["N"], a["m"]
        if "sections" in a:
            return max(
                sobolev_norm_1(Section(u.grid, u.values - v.values), N, m) for u, v in zip(a["sections"], b["sections"])
            )
        diff = boundary_norm(a["matrix"] - b["matrix"], 0.5, 0.5, N, m)
        if "spectral" in a:
            diff = max(diff, sobolev_op_norm(a["spectral"] - b["spectral"], 0.5, 0.5, m))
        return diff


def continuity_experiment(family: OperatorFamily, target: str) -> ContinuityReport:
    """Pairs (z₀, z_j) → (d_str, ‖target(z₀) − target(z_j)‖) along the family samples."""
    ev = _Evaluator(target, family)
    zs = list(family.samples)
    z0 = zs[0]
    p0 = family.pair(z0)
    base = ev(p0)
    rows, flagged, errors = [], [], []
    for z in zs[1:]:
        flags: list[str] = []
        try:
            pz = family.pair(z)
            val = ev(pz)
        except CNearSpectrum:
            flagged.append(float(z))
            rows.append(ContinuityRow(z0, float(z), math.nan, math.nan, ("CutCrossed",)))
            continue
        except LabError as exc:
            errors.append((float(z), exc.code))
            rows.append(ContinuityRow(z0, float(z), math.nan, math.nan, (exc.code,)))
            continue
        if "rank" in base and val["rank"] != base["rank"]:
            flags.append("CutCrossed")
            flagged.append(float(z))
        metric = pair_metrics(p0, pz)
        rows.append(ContinuityRow(z0, float(z), metric.d_str, ev.distance(base, val), tuple(flags)))
    clean = sorted((r for r in rows if not r.flags), key=lambda r: r.d_str)
    diffs = [r.diff for r in clean]
    tol = 1e-12 * max([1.0] + diffs)
    monotone = all(b >= a - tol for a, b in zip(diffs[:-1], diffs[1:]))
    finest = diffs[0] if diffs else math.nan
    return ContinuityReport(target, tuple(rows), monotone, finest, tuple(flagged), tuple(errors))


def cut_crossing_flag(family: OperatorFamily) -> float | None:
    """First sample at which the spectral projection path is interrupted, if any."""
    rep = continuity_experiment(family, "calderon")
    return rep.flagged[0] if rep.flagged else None
