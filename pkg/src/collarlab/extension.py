"""Gauge unitaries and symmetric continuation across an attached collar.

The continuation glues the constant-coefficient operator D₀ = J₀(∂x + B₀) + C₀
to a symmetrized extension of D past x = 0:

    D̃ = φD₀ + (1 − φ)D̃₂ + ½φ′(J₀ − J̃).

In normal form this is again J(∂x + B) + ½J′ + C with J = φJ₀ + (1 − φ)J̃, so the
½φ′ term is absorbed by the ½J′ of the blended J.  The extended operator lives
on [0, ℓ + δ] in the shifted coordinate y = x + δ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circleop import TrigField, evaluate_field
from .collar import (
    CollarOperator,
    FuncField,
    fiber_inverse,
    fiber_left,
    interval_maps,
    kron_modes,
    selfadjoint_defect,
)
from .cutoffs import smoothstep7, smoothstep7_deriv
from .errors import EllipticityLost, PathTooFar, PreconditionFailed
from .numkernel import (
    adjoint,
    hermitian_inv_sqrt,
    identity,
    inverse,
    max_abs,
    numerical_rank,
    op_norm,
    singular_values_batch,
)

# ---------------------------------------------------------------------------
# Gauge unitary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaugePath:
    xs: np.ndarray
    unitaries: np.ndarray  # (len(xs), m, m)
    unitarity_defect: float
    conjugation_defect: float


def gauge_unitary(j_path: Callable[[float], np.ndarray] | Sequence[np.ndarray], xs: Sequence[float] | None = None) -> GaugePath:
    """U(x) unitary with J_x = U(x)J₀U(x)* for a path of J's with J² = −Id.

    With Z_x = ½(Id − J_xJ₀) one has J_xZ_x = Z_xJ₀ and Z_xZ_x* commutes with
    J_x, so the unitary polar factor (Z_xZ_x*)^{−1/2}Z_x conjugates J₀ to J_x.
    """
    if callable(j_path):
        if xs is None:
            raise PreconditionFailed("sample points are required for a callable path")
        xs = np.asarray(list(xs), dtype=float)
        js = [np.asarray(j_path(float(x)), dtype=np.complex128) for x in xs]
    else:
        js = [np.asarray(j, dtype=np.complex128) for j in j_path]
        xs = np.arange(len(js), dtype=float) if xs is None else np.asarray(list(xs), dtype=float)
    j0 = js[0]
    m = j0.shape[0]
    eye = identity(m)
    us = []
    u_def = c_def = 0.0
    for x, j in zip(xs, js):
        if max_abs(j @ j + eye) > 1e-10:
            raise PreconditionFailed(f"J² ≠ −Id at x = {x:.4g}")
        gap = op_norm(eye + j @ j0)
        if gap >= 2.0 - 1e-12:
            raise PathTooFar(f"‖Id + J_xJ₀‖ = {gap:.6f} at x = {x:.4g}; subdivide the path")
        z = 0.5 * (eye - j @ j0)
        u = hermitian_inv_sqrt(z @ adjoint(z)) @ z
        us.append(u)
        u_def = max(u_def, max_abs(adjoint(u) @ u - eye))
        c_def = max(c_def, max_abs(u @ j0 @ adjoint(u) - j))
    return GaugePath(xs, np.stack(us), u_def, c_def)


# ---------------------------------------------------------------------------
# Coefficient reflection past x = 0
# ---------------------------------------------------------------------------

_REFLECT_B = np.array([1.0, 0.5, 1.0 / 3.0, 0.25])


def reflection_weights() -> np.ndarray:
    """a_j with Σ a_j b_j^k = (−1)^k for k = 0..3, so f(−x) := Σ a_j f(b_j x) is C³ at 0."""
    v = np.vander(_REFLECT_B, 4, increasing=True).T
    return np.linalg.solve(v, np.array([1.0, -1.0, 1.0, -1.0]))


def _reflect(fn: Callable, xs: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Σ a_j f(−b_j x) for x ≤ 0."""
    return sum(w * np.asarray(fn(-b * xs)) for w, b in zip(a, _REFLECT_B))


def _reflect_deriv(fn_d: Callable, xs: np.ndarray, a: np.ndarray) -> np.ndarray:
    return sum(-w * b * np.asarray(fn_d(-b * xs)) for w, b in zip(a, _REFLECT_B))


# ---------------------------------------------------------------------------
# Symmetric extension
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CollarCutoff:
    """φ = 1 for x ≤ −2δ/3, 0 for x ≥ −δ/3 (degree-7 smoothstep in between)."""

    delta: float

    def __call__(self, x):
        t = (np.asarray(x, dtype=float) + 2.0 * self.delta / 3.0) / (self.delta / 3.0)
        return 1.0 - smoothstep7(t)

    def deriv(self, x):
        t = (np.asarray(x, dtype=float) + 2.0 * self.delta / 3.0) / (self.delta / 3.0)
        return -smoothstep7_deriv(t) / (self.delta / 3.0)


@dataclass(frozen=True)
class ExtensionResult:
    delta: float
    extended: CollarOperator
    cutoff: CollarCutoff
    case_tags: dict
    checks: dict = field(default_factory=dict)
    halvings: int = 0

    def x_nodes(self) -> np.ndarray:
        """Grid in the original coordinate x ∈ [−δ, ℓ]."""
        return self.extended.grid - self.delta


@dataclass
class _Pieces:
    """Fields of D₀ and of the symmetrized reflection D̃₂ for x ≤ 0."""

    d: CollarOperator
    a: np.ndarray
    j_const: bool

    def __post_init__(self) -> None:
        d = self.d
        self.j0 = np.asarray(d.J(np.array([0.0])))[0]
        self.b0 = d.B_at(0.0)
        self.c0 = np.asarray(d.C(np.array([0.0])))[0]
        self.g0 = d.gamma(0.0)

    def J(self, xs):
        if self.j_const:
            return np.broadcast_to(self.j0, (xs.size,) + self.j0.shape).copy()
        j = _reflect(self.d.J, xs, self.a)
        return 0.5 * (j - adjoint(j))

    def J_deriv(self, xs):
        if self.j_const:
            return np.zeros((xs.size,) + self.j0.shape, dtype=np.complex128)
        j = _reflect_deriv(self.d.J.deriv, xs, self.a)
        return 0.5 * (j - adjoint(j))

    def B2(self, xs):
        b = _reflect(self.d.B, xs, self.a)
        jf = kron_modes(self.J(xs), self.d.N)
        jinv = kron_modes(fiber_inverse(self.J(xs)), self.d.N)
        return 0.5 * (b - jinv @ adjoint(b) @ jf)

    def C2(self, xs):
        c = _reflect(self.d.C, xs, self.a)
        return 0.5 * (c + adjoint(c))

    def gamma2(self, x: float) -> TrigField:
        j = self.J(np.array([x]))[0]
        jinv = inverse(j)
        out: TrigField = {}
        for w, b in zip(self.a, _REFLECT_B):
            for k, g in self.d.gamma(-b * x).items():
                out[k] = out.get(k, 0) + w * g
        # principal part of ½(B − J⁻¹B*J): Γ∂θ has adjoint −Γ*∂θ + lower order
        sym: TrigField = {}
        for k, g in out.items():
            sym[k] = sym.get(k, 0) + 0.5 * g
        for k, g in out.items():
            sym[-k] = sym.get(-k, 0) + 0.5 * (jinv @ adjoint(g) @ j)
        return {k: v for k, v in sym.items() if np.any(v)}


def _build_extended(d: CollarOperator, delta: float, pieces: _Pieces, phi: CollarCutoff) -> CollarOperator:
    N, m = d.N, d.m
    length = d.length

    def split(ys):
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        x = ys - delta
        return x, x >= 0.0

    def J(ys):
        x, right = split(ys)
        out = np.zeros((x.size, m, m), dtype=np.complex128)
        if right.any():
            out[right] = np.asarray(d.J(np.clip(x[right], 0.0, length)))
        left = ~right
        if left.any():
            p = phi(x[left])[:, None, None]
            out[left] = p * pieces.j0 + (1.0 - p) * pieces.J(x[left])
        return out

    def Jd(ys):
        x, right = split(ys)
        out = np.zeros((x.size, m, m), dtype=np.complex128)
        if right.any():
            out[right] = np.asarray(d.J.deriv(np.clip(x[right], 0.0, length)))
        left = ~right
        if left.any():
            xl = x[left]
            p = phi(xl)[:, None, None]
            dp = phi.deriv(xl)[:, None, None]
            out[left] = dp * (pieces.j0 - pieces.J(xl)) + (1.0 - p) * pieces.J_deriv(xl)
        return out

    def B(ys):
        x, right = split(ys)
        out = np.zeros((x.size, d.n, d.n), dtype=np.complex128)
        if right.any():
            out[right] = np.asarray(d.B(np.clip(x[right], 0.0, length)))
        left = ~right
        if left.any():
            xl = x[left]
            p = phi(xl)[:, None, None]
            jt = kron_modes(pieces.J(xl), N)
            num = p * (kron_modes(pieces.j0, N) @ pieces.b0) + (1.0 - p) * (jt @ pieces.B2(xl))
            out[left] = fiber_left(fiber_inverse(J(ys[left])), num)
        return out

    def C(ys):
        x, right = split(ys)
        out = np.zeros((x.size, d.n, d.n), dtype=np.complex128)
        if right.any():
            out[right] = np.asarray(d.C(np.clip(x[right], 0.0, length)))
        left = ~right
        if left.any():
            xl = x[left]
            p = phi(xl)[:, None, None]
            out[left] = p * pieces.c0 + (1.0 - p) * pieces.C2(xl)
        return out

    def gamma(y: float) -> TrigField:
        x = float(y) - delta
        if x >= 0.0:
            return d.gamma(min(x, length))
        p = float(phi(np.array([x]))[0])
        jx = J(np.array([y]))[0]
        jinv = inverse(jx)
        jt = pieces.J(np.array([x]))[0]
        out: TrigField = {}
        for k, g in pieces.g0.items():
            out[k] = out.get(k, 0) + p * (pieces.j0 @ g)
        if p < 1.0:
            for k, g in pieces.gamma2(x).items():
                out[k] = out.get(k, 0) + (1.0 - p) * (jt @ g)
        return {k: jinv @ v for k, v in out.items() if np.any(v)}

    zero = lambda ys: np.zeros((np.atleast_1d(ys).size, d.n, d.n), dtype=np.complex128)
    spacing = d.h
    points = int(round((length + delta) / spacing)) + 1
    grid = np.concatenate([np.arange(points - d.grid.size) * spacing, d.grid + delta])
    return CollarOperator(
        length + delta,
        N,
        m,
        grid,
        FuncField(J, Jd),
        FuncField(B, zero),
        FuncField(C, zero),
        gamma,
        True,
        d.label + "+ext",
    )


def _symbol_floor(
    ext: CollarOperator, delta: float, n_theta: int = 32, n_angle: int = 64, refine: int = 8
) -> tuple[float, tuple]:
    """min over y ∈ [0, δ], θ and the unit circle (λ, ξ) of σ_min(J(iλ + Γiξ)).

    The attached collar is sampled ``refine`` times finer than the grid, since
    a degeneration of the blended symbol can sit between grid nodes.
    """
    thetas = np.linspace(0.0, 2.0 * math.pi, n_theta, endpoint=False)
    angles = np.linspace(0.0, 2.0 * math.pi, n_angle, endpoint=False)
    count = int(round(delta / ext.h)) * refine + 1
    ys = np.linspace(0.0, delta, count)
    T, A = np.meshgrid(thetas, angles, indexing="ij")
    th, lam, xi = T.ravel(), np.cos(A).ravel(), np.sin(A).ravel()
    js = np.asarray(ext.J(ys))
    m = ext.m
    best = (math.inf, None)
    for y, j in zip(ys, js):
        jg = {k: j @ v for k, v in ext.gamma(float(y)).items()}
        mats = (1j * xi)[:, None, None] * evaluate_field(jg, th, m) + (1j * lam)[:, None, None] * j
        sv = singular_values_batch(mats)[:, -1]
        k = int(np.argmin(sv))
        if sv[k] < best[0]:
            best = (float(sv[k]), (float(y - delta), float(th[k]), float(lam[k]), float(xi[k])))
    return best


def _case_tags(d: CollarOperator, ext: CollarOperator, delta: float, pieces: _Pieces) -> dict:
    xs = ext.grid
    js = np.asarray(ext.J(xs))
    m = d.m
    eye = identity(m)
    j_is_const = all(max_abs(j - js[0]) <= 1e-14 for j in js)
    unitary = all(max_abs(j @ j + eye) <= 1e-10 for j in js)
    b_start = ext.B_at(0.0)
    case3 = max_abs(b_start - pieces.b0) <= 1e-12

    def relation_iv(y: float) -> bool:
        j = np.asarray(ext.J(np.array([y])))[0]
        for g in ext.gamma(float(y)).values():
            if max_abs(g + adjoint(g)) > 1e-10 or max_abs(j @ g + g @ j) > 1e-10:
                return False
        return True

    near = [y for y in xs if y <= delta / 3.0 + 1e-12]
    iv_near = all(relation_iv(y) for y in near)
    iv_all = iv_near and all(relation_iv(y) for y in xs)
    return {
        "II": bool(j_is_const and unitary),
        "III": bool(case3),
        "IV_near_boundary": bool(iv_near),
        "IV_everywhere": bool(iv_all),
    }


def extend_symmetric(
    d: CollarOperator,
    delta: float | None = None,
    max_halvings: int = 8,
    threshold: float = 1e-6,
) -> ExtensionResult:
    """Attach [−δ, 0] with constant coefficients near −δ; halve δ until the symbol stays elliptic."""
    if not d.selfadjoint:
        raise PreconditionFailed("the continuation is built for formally selfadjoint operators")
    if selfadjoint_defect(d) > 1e-10:
        raise PreconditionFailed("input fails the formal selfadjointness relations")
    h = d.h
    delta = d.length / 4.0 if delta is None else float(delta)
    a = reflection_weights()
    j_grid = np.asarray(d.J(d.grid))
    j_const = all(max_abs(j - j_grid[0]) <= 1e-14 for j in j_grid)
    pieces = _Pieces(d, a, j_const)
    worst = (math.inf, None)
    for halving in range(max_halvings + 1):
        # δ is snapped to a multiple of 4h so the grid keeps 4k+1 points
        dl = max(4.0 * h, 4.0 * h * round(delta / (4.0 * h)))
        phi = CollarCutoff(dl)
        ext = _build_extended(d, dl, pieces, phi)
        smin, where = _symbol_floor(ext, dl)
        if smin >= threshold:
            checks = extension_checks(d, ext, dl, pieces)
            checks["symbol_min"] = smin
            checks["symbol_worst"] = where
            return ExtensionResult(dl, ext, phi, _case_tags(d, ext, dl, pieces), checks, halving)
        worst = (smin, where)
        if dl <= 4.0 * h:
            break
        delta = 0.5 * dl
    raise EllipticityLost(f"extended symbol degenerates (σ_min = {worst[0]:.2e} at {worst[1]})", worst=worst)


def extension_checks(d: CollarOperator, ext: CollarOperator, delta: float, pieces: _Pieces) -> dict:
    """Restriction identity, constant-coefficient identity and symmetry residuals at the nodes."""
    shared = d.grid + delta
    res = max(
        max_abs(np.asarray(ext.J(shared)) - np.asarray(d.J(d.grid))),
        max_abs(np.asarray(ext.B(shared)) - np.asarray(d.B(d.grid))),
        max_abs(np.asarray(ext.C(shared)) - np.asarray(d.C(d.grid))),
        max_abs(np.asarray(ext.J.deriv(shared)) - np.asarray(d.J.deriv(d.grid))),
    )
    flat = ext.grid[ext.grid <= delta / 3.0 + 1e-12]
    const = 0.0
    if flat.size:
        const = max(
            max_abs(np.asarray(ext.J(flat)) - pieces.j0),
            max_abs(np.asarray(ext.B(flat)) - pieces.b0),
            max_abs(np.asarray(ext.C(flat)) - pieces.c0),
            max_abs(np.asarray(ext.J.deriv(flat))),
        )
    return {"restriction": float(res), "constant": float(const), "symmetry": float(selfadjoint_defect(ext))}


# ---------------------------------------------------------------------------
# UCP defect along the attached collar
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UcpProfile:
    stations: tuple
    counts: tuple
    constant_segment: bool
    constant: bool


def ucp_defect_along_extension(
    res: ExtensionResult,
    stations: Sequence[float],
    transfer_hook: Callable[[float, np.ndarray], np.ndarray] | None = None,
    tol: float = 1e-10,
) -> UcpProfile:
    """Kernel elements of the extended operator vanishing on Σ(x), for each station x ∈ [−δ, ℓ].

    Kernel elements are parametrized by their value at −δ; the count at x is
    n − rank Φ(x, −δ).  ``transfer_hook`` lets a test corrupt Φ at a station.
    """
    ext = res.extended
    maps = interval_maps(ext)
    xs = res.x_nodes()
    idx = [int(np.argmin(np.abs(xs - s))) for s in stations]
    n = ext.n
    cum = [identity(n)]
    for p in maps.phi:
        cum.append(p @ cum[-1])
    counts = []
    for s, i in zip(stations, idx):
        phi = cum[i]
        if transfer_hook is not None:
            phi = transfer_hook(float(s), phi)
        counts.append(n - numerical_rank(phi, tol))
    seg = [c for s, c in zip(stations, counts) if s <= -2.0 * res.delta / 3.0 + 1e-12]
    return UcpProfile(tuple(float(s) for s in stations), tuple(counts), len(set(seg)) <= 1, len(set(counts)) <= 1)
