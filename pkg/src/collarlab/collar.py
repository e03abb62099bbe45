"""Operators D = J(x)(d/dx + B(x)) + ½J′(x) + C(x) on [0, ℓ] × S¹.

J is a θ-independent fiber matrix acting identically on every Fourier mode;
B(x) and C(x) are realized circle operators.  Sections are sampled on a
uniform x-grid whose interval count is a multiple of four, so that the
composite Boole rule and fourth-order finite differences form a consistent
fourth-order stack.

Kernel elements solve the ODE u′ = −M(x)u with M = B + J⁻¹(C + ½J′).  Per
grid interval the propagator is computed with classical RK4 (all intervals
at once); long-range objects never use the raw product of these maps but a
re-orthonormalized graph frame or a multiple-shooting system, since the
product grows like e^{ℓ‖B‖}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .circleop import (
    CircleOperator,
    TrigField,
    assemble,
    field_adjoint,
    multiplication_matrix,
    parametric_ellipticity_check,
    symbol_minimum,
    trig_field,
)
from .errors import DimensionMismatch, NotPositive, PreconditionFailed, Singular, StepLimit
from .numkernel import (
    ComplexMatrix,
    Subspace,
    _gram_schmidt,
    adjoint,
    hermitian_eigen,
    hermitian_inv_sqrt,
    identity,
    inverse,
    lu_factor,
    lu_solve_batch,
    max_abs,
    numerical_rank,
    orthonormalize,
    singular_values,
    smallest_singular_value,
    two_norm_bound,
)

# ---------------------------------------------------------------------------
# Coefficient fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChebField:
    """x ↦ Σ_j c_j T_j(t) on [0, ℓ], t = 2x/ℓ − 1, with exact derivative."""

    coeffs: np.ndarray
    length: float

    def _t(self, x):
        return 2.0 * np.asarray(x, dtype=float) / self.length - 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        v = cheb.chebvander(np.atleast_1d(self._t(x)), self.coeffs.shape[0] - 1)
        out = np.einsum("kj,j...->k...", v, self.coeffs)
        return out if x.ndim else out[0]

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        if self.coeffs.shape[0] == 1:
            z = np.zeros((np.atleast_1d(x).size,) + self.coeffs.shape[1:], dtype=np.complex128)
            return z if x.ndim else z[0]
        dc = cheb.chebder(self.coeffs, axis=0) * (2.0 / self.length)
        return ChebField(dc, self.length)(x)

    @classmethod
    def constant(cls, value: np.ndarray, length: float) -> "ChebField":
        return cls(np.asarray(value, dtype=np.complex128)[None, ...], length)


@dataclass(frozen=True)
class FuncField:
    """Field given by callables (used for derived operators such as adjoints)."""

    value: Callable
    derivative: Callable

    def __call__(self, x):
        return self.value(x)

    def deriv(self, x):
        return self.derivative(x)


def _stackwise(fn: Callable[[np.ndarray], np.ndarray]) -> Callable:
    def wrapped(x):
        x = np.asarray(x, dtype=float)
        return fn(np.atleast_1d(x)) if x.ndim else fn(np.atleast_1d(x))[0]

    return wrapped


def kron_modes(fiber: np.ndarray, N: int) -> np.ndarray:
    """Lift a stack of fiber matrices (..., m, m) to all 2N+1 modes."""
    fiber = np.asarray(fiber, dtype=np.complex128)
    lead = fiber.shape[:-2]
    m = fiber.shape[-1]
    p = 2 * N + 1
    f = fiber.reshape((-1, m, m))
    out = np.zeros((f.shape[0], p, m, p, m), dtype=np.complex128)
    ar = np.arange(p)
    out[:, ar, :, ar, :] = f[None]
    return out.reshape(lead + (p * m, p * m))


def fiber_left(f: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply the mode-diagonal lift of the fiber stack f (K, m, m) to x (K, n, r)."""
    k, m, _ = f.shape
    n, r = x.shape[1], x.shape[2]
    return (f[:, None] @ x.reshape(k, n // m, m, r)).reshape(k, n, r)


def fiber_inverse(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.complex128)
    inv, ok = lu_solve_batch(f)
    if not np.all(ok):
        raise Singular("J is not invertible at some point")
    return inv


# ---------------------------------------------------------------------------
# Operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CollarOperator:
    length: float
    N: int
    m: int
    grid: np.ndarray
    J: object  # fiber field: x ↦ m×m
    B: object  # realized field: x ↦ n×n (derivative unused)
    C: object  # realized field: x ↦ n×n
    gamma: Callable[[float], TrigField]  # principal part of B(x) as a trig field
    selfadjoint: bool = False
    label: str = ""
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n(self) -> int:
        return (2 * self.N + 1) * self.m

    @property
    def h(self) -> float:
        return self.length / (self.grid.size - 1)

    def J_full(self, x):
        return kron_modes(self.J(x), self.N)

    def Jp_full(self, x):
        return kron_modes(self.J.deriv(x), self.N)

    def generator(self, x: np.ndarray) -> np.ndarray:
        """M(x) = B + J⁻¹(C + ½J′) as a stack over the points x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        jinv = fiber_inverse(np.asarray(self.J(x)))
        cc = np.asarray(self.C(x), dtype=np.complex128) + 0.5 * kron_modes(np.asarray(self.J.deriv(x)), self.N)
        return np.asarray(self.B(x), dtype=np.complex128) + fiber_left(jinv, cc)

    def J_inverse(self, x: np.ndarray) -> np.ndarray:
        return fiber_inverse(np.asarray(self.J(np.atleast_1d(np.asarray(x, dtype=float)))))

    def boundary_J(self) -> ComplexMatrix:
        """J_Σ = diag(J(0), −J(ℓ)) on L²(Σ₀) ⊕ L²(Σ_ℓ)."""
        n = self.n
        out = np.zeros((2 * n, 2 * n), dtype=np.complex128)
        out[:n, :n] = self.J_full(0.0)
        out[n:, n:] = -self.J_full(self.length)
        return out

    def boundary_J_fibers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.J(0.0)), -np.asarray(self.J(self.length))

    def B_at(self, x: float) -> ComplexMatrix:
        return np.asarray(self.B(np.array([x])))[0]

    def circle_B(self, x: float) -> CircleOperator:
        return CircleOperator(self.m, self.N, self.gamma(x), {}, self.B_at(x))

    def with_grid(self, points: int) -> "CollarOperator":
        return replace(self, grid=uniform_grid(self.length, points), cache={})


def uniform_grid(length: float, points: int) -> np.ndarray:
    if points < 5 or (points - 1) % 4:
        raise DimensionMismatch("grid needs 4k+1 points (k >= 1)")
    return np.linspace(0.0, length, points)


def _realized_cheb(items: Sequence[tuple], m: int, N: int, length: float, check_degree: bool) -> ChebField:
    mats = [assemble(g, v, m, N, check_degree=check_degree).realized for g, v in items]
    return ChebField(np.stack(mats), length)


def collar_from_chebyshev(
    length: float,
    N: int,
    m: int,
    J: Sequence[np.ndarray],
    B: Sequence[tuple],
    C: Sequence[object] | None = None,
    grid_points: int = 129,
    selfadjoint: bool = False,
    label: str = "",
    check_degree: bool = True,
) -> CollarOperator:
    """Operator whose fields are Chebyshev series in x.

    ``J`` is a list of m×m coefficients, ``B`` a list of (Γ, V) trig-field
    specs and ``C`` a list of trig-field specs, one entry per Chebyshev index.
    """
    jf = ChebField(np.stack([np.asarray(j, dtype=np.complex128).reshape(m, m) for j in J]), length)
    bf = _realized_cheb(B, m, N, length, check_degree)
    cs = [(None, c) for c in (C or [None])]
    cf = _realized_cheb(cs, m, N, length, check_degree)
    gammas = [trig_field(g, m) for g, _ in B]

    def gamma_at(x: float) -> TrigField:
        t = 2.0 * float(x) / length - 1.0
        w = cheb.chebvander(np.array([t]), len(gammas) - 1)[0]
        out: TrigField = {}
        for wj, g in zip(w, gammas):
            for k, a in g.items():
                out[k] = out.get(k, 0) + wj * a
        return out

    op = CollarOperator(length, N, m, uniform_grid(length, grid_points), jf, bf, cf, gamma_at, selfadjoint, label)
    validate_operator(op)
    return op


def constant_collar(
    length: float,
    N: int,
    m: int,
    J: np.ndarray,
    gamma: object = None,
    v: object = None,
    C: object = None,
    grid_points: int = 129,
    selfadjoint: bool = False,
    label: str = "",
) -> CollarOperator:
    return collar_from_chebyshev(length, N, m, [J], [(gamma, v)], [C], grid_points, selfadjoint, label)


def validate_operator(d: CollarOperator, tol: float = 1e-9) -> None:
    """J invertible on the grid; selfadjoint relations when flagged."""
    js = np.asarray(d.J(d.grid))
    for x, j in zip(d.grid, js):
        if smallest_singular_value(j) < 1e-8:
            raise Singular(f"J({x:.4g}) is not invertible")
    if d.selfadjoint:
        defect = selfadjoint_defect(d)
        if defect > tol:
            raise PreconditionFailed(f"selfadjoint relations fail by {defect:.2e}")


def selfadjoint_defect(d: CollarOperator, points: np.ndarray | None = None) -> float:
    """max over points of ‖J* + J‖ and ‖(JB + C) − (−B*J + C*)‖."""
    xs = d.grid if points is None else np.asarray(points, dtype=float)
    js = np.asarray(d.J(xs))
    bs = np.asarray(d.B(xs))
    cs = np.asarray(d.C(xs))
    worst = 0.0
    for j, b, c in zip(js, bs, cs):
        worst = max(worst, max_abs(adjoint(j) + j))
        jfull = kron_modes(j, d.N)
        lhs = jfull @ b + c
        rhs = -adjoint(b) @ jfull + adjoint(c)
        worst = max(worst, max_abs(lhs - rhs) / max(1.0, max_abs(lhs)))
    return worst


def ellipticity_at(d: CollarOperator, x: float, sector_angle: float = math.pi / 8):
    return parametric_ellipticity_check(d.circle_B(x), sector_angle)


def formal_adjoint(d: CollarOperator) -> CollarOperator:
    """Normal form of D^t: J̃ = −J*, B̃ = −(J*)⁻¹B*J*, C̃ = C*."""
    N = d.N

    def jt(x):
        return -adjoint(np.asarray(d.J(x)))

    def jt_d(x):
        return -adjoint(np.asarray(d.J.deriv(x)))

    def bt(xs):
        js = np.asarray(d.J(xs))
        jstar = adjoint(js)
        y = fiber_left(fiber_inverse(jstar), adjoint(np.asarray(d.B(xs))))
        return -(y @ kron_modes(jstar, N))

    def ct(xs):
        return adjoint(np.asarray(d.C(xs)))

    def gamma_t(x: float) -> TrigField:
        j = np.asarray(d.J(x))
        js = adjoint(j)
        jsi = inverse(js)
        return {k: jsi @ a @ js for k, a in field_adjoint(d.gamma(x)).items()}

    zero = lambda xs: np.zeros((np.atleast_1d(xs).size, d.n, d.n), dtype=np.complex128)
    return CollarOperator(
        d.length,
        d.N,
        d.m,
        d.grid,
        FuncField(jt, jt_d),
        FuncField(_stackwise(bt), _stackwise(zero)),
        FuncField(_stackwise(ct), _stackwise(zero)),
        gamma_t,
        d.selfadjoint,
        d.label + "^t",
    )


def field_distance(d1: CollarOperator, d2: CollarOperator) -> float:
    """max over the grid of the coefficient differences (involution checks)."""
    xs = d1.grid
    diffs = [
        max_abs(np.asarray(d1.J(xs)) - np.asarray(d2.J(xs))),
        max_abs(np.asarray(d1.J.deriv(xs)) - np.asarray(d2.J.deriv(xs))),
        max_abs(np.asarray(d1.B(xs)) - np.asarray(d2.B(xs))),
        max_abs(np.asarray(d1.C(xs)) - np.asarray(d2.C(xs))),
    ]
    return float(max(diffs))


# ---------------------------------------------------------------------------
# Sections and the discrete fourth-order stack
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Section:
    grid: np.ndarray
    values: np.ndarray  # (len(grid), n)
    func: Callable | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 2 or v.shape[0] != self.grid.size:
            raise DimensionMismatch("section values must be (grid points, n)")
        if not np.all(np.isfinite(v)):
            raise DimensionMismatch("section has non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> "Section":
        """``fn`` maps an array of x values to an array (len(x), n)."""
        return cls(grid, np.asarray(fn(grid), dtype=np.complex128), fn)

    @classmethod
    def zeros(cls, grid: np.ndarray, n: int) -> "Section":
        return cls(grid, np.zeros((grid.size, n), dtype=np.complex128), lambda xs: np.zeros((np.size(xs), n)))

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def trace(self) -> np.ndarray:
        """ρu = (u(0), u(ℓ))."""
        return np.concatenate([self.values[0], self.values[-1]])

    def evaluate(self, xs: np.ndarray) -> np.ndarray:
        if self.func is not None:
            return np.asarray(self.func(np.asarray(xs, dtype=float)), dtype=np.complex128)
        return interpolate(self.grid, self.values, xs)

    def __add__(self, other: "Section") -> "Section":
        fn = None
        if self.func is not None and other.func is not None:
            f1, f2 = self.func, other.func
            fn = lambda xs: f1(xs) + f2(xs)
        return Section(self.grid, self.values + other.values, fn)

    def scale(self, c: complex) -> "Section":
        f = self.func
        return Section(self.grid, c * self.values, None if f is None else (lambda xs: c * f(xs)))


def interpolate(grid: np.ndarray, values: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Local cubic Lagrange interpolation on a uniform grid."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    h = grid[1] - grid[0]
    idx = np.clip(np.floor((xs - grid[0]) / h).astype(int) - 1, 0, grid.size - 4)
    out = np.zeros((xs.size, values.shape[1]), dtype=np.complex128)
    nodes = idx[:, None] + np.arange(4)[None, :]
    xn = grid[nodes]
    for a in range(4):
        w = np.ones(xs.size)
        for b in range(4):
            if a != b:
                w *= (xs - xn[:, b]) / (xn[:, a] - xn[:, b])
        out += w[:, None] * values[nodes[:, a]]
    return out


def fd4(values: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order derivative along axis 0 (centered inside, one-sided at ends)."""
    f = np.asarray(values)
    n = f.shape[0]
    if n < 5:
        raise DimensionMismatch("need at least five samples")
    d = np.empty_like(f, dtype=np.complex128)
    d[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h)
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h)
    d[-1] = (25.0 * f[-1] - 48.0 * f[-2] + 36.0 * f[-3] - 16.0 * f[-4] + 3.0 * f[-5]) / (12.0 * h)
    d[-2] = (3.0 * f[-1] + 10.0 * f[-2] - 18.0 * f[-3] + 6.0 * f[-4] - f[-5]) / (12.0 * h)
    return d


def boole_weights(points: int, h: float) -> np.ndarray:
    if (points - 1) % 4:
        raise DimensionMismatch("Boole rule needs 4k+1 points")
    w = np.zeros(points)
    for s in range(0, points - 1, 4):
        w[s : s + 5] += np.array([7.0, 32.0, 12.0, 32.0, 7.0]) * (2.0 * h / 45.0)
    return w


def inner(u: Section, v: Section) -> complex:
    """⟨u, v⟩ = ∫₀^ℓ Σ_k conj(v_k) u_k dx (normalized circle measure)."""
    w = boole_weights(u.grid.size, u.grid[1] - u.grid[0])
    return complex(np.sum(w * np.sum(u.values * v.values.conj(), axis=1)))


def norm(u: Section) -> float:
    return math.sqrt(max(inner(u, u).real, 0.0))


def apply(d: CollarOperator, u: Section, shift: complex = 0.0) -> Section:
    """(D + shift)u on the grid with the fourth-order difference stack."""
    xs = u.grid
    du = fd4(u.values, xs[1] - xs[0])
    js = d.J_full(xs)
    bs = np.asarray(d.B(xs))
    jp = d.Jp_full(xs)
    cs = np.asarray(d.C(xs))
    vals = np.einsum("kij,kj->ki", js, du + np.einsum("kij,kj->ki", bs, u.values))
    vals += np.einsum("kij,kj->ki", 0.5 * jp + cs, u.values) + shift * u.values
    return Section(xs, vals)


def greens_defect(d: CollarOperator, u: Section, v: Section, adjoint_op: CollarOperator | None = None) -> complex:
    """⟨Du, v⟩ − ⟨u, D^t v⟩ + ⟨J_Σ ρu, ρv⟩."""
    dt = formal_adjoint(d) if adjoint_op is None else adjoint_op
    bnd = d.boundary_J() @ u.trace()
    return inner(apply(d, u), v) - inner(u, apply(dt, v)) + complex(np.vdot(v.trace(), bnd))


def greens_defect_selfadjoint(d: CollarOperator, u: Section, v: Section) -> complex:
    """Green's defect using D itself in place of D^t (formally selfadjoint case)."""
    if not d.selfadjoint:
        raise PreconditionFailed("operator is not flagged selfadjoint")
    return greens_defect(d, u, v, adjoint_op=d)


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


@dataclass
class IntervalMaps:
    """Per grid interval: u(x_{i+1}) = phi[i] u(x_i) + inc[i]."""

    phi: np.ndarray  # (intervals, n, n)
    inc: np.ndarray | None  # (intervals, n, r) or None
    substeps: int


def _generator_with_shift(d: CollarOperator, xs: np.ndarray, shift: complex) -> np.ndarray:
    m = d.generator(xs)
    if shift:
        m = m + shift * kron_modes(d.J_inverse(xs), d.N)
    return m


def _forcing(d: CollarOperator, xs: np.ndarray, rhs: Callable | None) -> np.ndarray | None:
    """J⁻¹g at the points xs, shape (len(xs), n, r)."""
    if rhs is None:
        return None
    g = np.asarray(rhs(xs), dtype=np.complex128)
    if g.ndim == 2:
        g = g[:, :, None]
    return fiber_left(d.J_inverse(xs), g)


_CACHE_BYTES = 256 * 2**20


def _cache_put(cache: dict, key, value: np.ndarray) -> None:
    """Insert with a byte cap, evicting the oldest entries first."""
    if value.nbytes > _CACHE_BYTES:
        return
    cache[key] = value
    total = sum(v.nbytes for v in cache.values() if isinstance(v, np.ndarray))
    while total > _CACHE_BYTES:
        oldest = next(iter(cache))
        total -= cache.pop(oldest).nbytes


def _rk4_intervals(d: CollarOperator, shift: complex, rhs: Callable | None, s: int) -> IntervalMaps:
    """Advance identity (and zero particular state) across all intervals with s RK4 substeps each."""
    grid = d.grid
    n = d.n
    h = (grid[1] - grid[0]) / s
    k = grid.size - 1
    phi = np.broadcast_to(identity(n), (k, n, n)).copy()
    inc = None
    if rhs is not None:
        r = np.asarray(rhs(grid[:1])).reshape(1, n, -1).shape[2]
        inc = np.zeros((k, n, r), dtype=np.complex128)
    for j in range(s):
        x0 = grid[:-1] + j * h
        pts = np.concatenate([x0, x0 + 0.5 * h, x0 + h])
        key = ("stage", complex(shift), s, j)
        a_all = d.cache.get(key)
        if a_all is None:
            a_all = -_generator_with_shift(d, pts, shift)
            _cache_put(d.cache, key, a_all)
        a0, am, a1 = a_all[:k], a_all[k : 2 * k], a_all[2 * k :]
        f_all = _forcing(d, pts, rhs)

        def step(y, f0=None, fm=None, f1=None):
            k1 = a0 @ y + (0 if f0 is None else f0)
            k2 = am @ (y + 0.5 * h * k1) + (0 if fm is None else fm)
            k3 = am @ (y + 0.5 * h * k2) + (0 if fm is None else fm)
            k4 = a1 @ (y + h * k3) + (0 if f1 is None else f1)
            return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        phi = step(phi)
        if inc is not None:
            inc = step(inc, f_all[:k], f_all[k : 2 * k], f_all[2 * k :])
    return IntervalMaps(phi, inc, s)


def interval_maps(
    d: CollarOperator,
    shift: complex = 0.0,
    rhs: Callable | None = None,
    tol: float = 1e-9,
    max_halvings: int = 20,
) -> IntervalMaps:
    """RK4 interval propagators, halving the substep until they change by at most ``tol``."""
    ms = _generator_with_shift(d, d.grid, shift)
    growth = max(two_norm_bound(a) for a in ms) * d.h
    s = max(1, int(math.ceil(growth / 0.5)))
    prev = _rk4_intervals(d, shift, rhs, s)
    for _ in range(max_halvings):
        cur = _rk4_intervals(d, shift, rhs, 2 * s)
        scale = max(1.0, max_abs(cur.phi))
        change = max_abs(cur.phi - prev.phi) / scale
        if cur.inc is not None:
            change = max(change, max_abs(cur.inc - prev.inc) / max(1.0, max_abs(cur.inc)))
        if change <= tol:
            return cur
        prev, s = cur, 2 * s
    raise StepLimit(f"RK4 propagation did not settle after {max_halvings} halvings")


def shooting_nodes(d: CollarOperator, maps: IntervalMaps, budget: float = 4.0) -> list[int]:
    """Grid indices splitting [0, ℓ] so that each segment grows by at most e^budget."""
    nodes = [0]
    acc = 0.0
    inv, _ = lu_solve_batch(maps.phi)
    # sqrt(‖·‖₁‖·‖∞) bounds the spectral norm and equals 1 on the identity
    fwd = _norm_bound_batch(maps.phi)
    bwd = _norm_bound_batch(inv)
    for i in range(maps.phi.shape[0]):
        g = math.log(max(fwd[i], bwd[i], 1.0))
        if acc + g > budget and i > nodes[-1]:
            nodes.append(i)
            acc = 0.0
        acc += g
    nodes.append(d.grid.size - 1)
    return nodes


def _norm_bound_batch(a: np.ndarray) -> np.ndarray:
    col = np.max(np.sum(np.abs(a), axis=1), axis=1)
    row = np.max(np.sum(np.abs(a), axis=2), axis=1)
    return np.sqrt(col * row)


def segment_maps(maps: IntervalMaps, nodes: Sequence[int]) -> tuple[list[np.ndarray], list[np.ndarray | None]]:
    phis, incs = [], []
    for a, b in zip(nodes[:-1], nodes[1:]):
        phi = identity(maps.phi.shape[1])
        inc = None if maps.inc is None else np.zeros(maps.inc.shape[1:], dtype=np.complex128)
        for i in range(a, b):
            phi = maps.phi[i] @ phi
            if inc is not None:
                inc = maps.phi[i] @ inc + maps.inc[i]
        phis.append(phi)
        incs.append(inc)
    return phis, incs


def fill_interior(maps: IntervalMaps, nodes: Sequence[int], node_values: Sequence[np.ndarray], col: int = 0) -> np.ndarray:
    """Grid values from node values by propagating inside each segment."""
    k = maps.phi.shape[0]
    n = maps.phi.shape[1]
    out = np.zeros((k + 1, n), dtype=np.complex128)
    for s, (a, b) in enumerate(zip(nodes[:-1], nodes[1:])):
        u = np.asarray(node_values[s], dtype=np.complex128)
        out[a] = u
        for i in range(a, b):
            u = maps.phi[i] @ u + (0 if maps.inc is None else maps.inc[i][:, col])
            out[i + 1] = u
        out[b] = node_values[s + 1] if s + 1 < len(node_values) else u
    return out


@dataclass(frozen=True)
class KernelData:
    transfer: ComplexMatrix
    cauchy_plus: Subspace
    maps: IntervalMaps


def cauchy_frame(maps: IntervalMaps, every: int = 4) -> Subspace:
    """Orthonormal frame of {(u(0), u(ℓ))} by propagating the graph of the transfer."""
    n = maps.phi.shape[1]
    x = identity(n) / math.sqrt(2.0)
    y = identity(n) / math.sqrt(2.0)
    for i, p in enumerate(maps.phi):
        y = p @ y
        if (i + 1) % every == 0 or i + 1 == maps.phi.shape[0]:
            q = _gram_schmidt(np.vstack([x, y]), 1e-14)
            if q.shape[1] != n:
                raise Singular("graph frame lost rank during propagation")
            x, y = q[:n], q[n:]
    q = _gram_schmidt(np.vstack([x, y]), 1e-14)
    return Subspace(q, 2 * n)


def kernel_transfer(d: CollarOperator, maps: IntervalMaps | None = None) -> tuple[ComplexMatrix, Subspace]:
    """Transfer T(ℓ, 0) of u′ = −Mu and the Cauchy data space N₊ = graph(T)."""
    data = kernel_data(d, maps)
    return data.transfer, data.cauchy_plus


def kernel_data(d: CollarOperator, maps: IntervalMaps | None = None) -> KernelData:
    maps = interval_maps(d) if maps is None else maps
    t = identity(d.n)
    for p in maps.phi:
        t = p @ t
    return KernelData(t, cauchy_frame(maps), maps)


def ucp_defect(
    d: CollarOperator | None,
    which: str = "both",
    frame: Subspace | None = None,
    transfer: np.ndarray | None = None,
    tol: float = 1e-8,
) -> int:
    """Dimension of kernel elements whose trace vanishes on the chosen boundary part.

    ``transfer`` injects a transfer matrix (fault injection); ``frame`` reuses
    an already computed Cauchy data frame.
    """
    if transfer is not None:
        n = transfer.shape[0]
        x, y = identity(n), np.asarray(transfer, dtype=np.complex128)
    else:
        if frame is None:
            _, frame = kernel_transfer(d)
        n = frame.ambient_dim // 2
        x, y = frame.frame[:n], frame.frame[n:]
    if which in ("0", "Σ0", "sigma0", "start"):
        sel = x
    elif which in ("l", "Σl", "sigma_l", "end"):
        sel = y
    elif which == "both":
        sel = np.vstack([x, y])
    else:
        raise ValueError(f"unknown boundary part {which!r}")
    return n - _rank_abs(sel, tol)


def _rank_abs(a: np.ndarray, tol: float) -> int:
    s = singular_values(a)
    if not s.size:
        return 0
    scale = max(1.0, float(s[0])) if a.shape[0] else 1.0
    return int(np.sum(s > tol * scale))


# ---------------------------------------------------------------------------
# Metric gauge
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaugeResult:
    psi: np.ndarray  # (K, m, m)
    isometry_defect: float


def metric_gauge(rho: np.ndarray, theta_sec: np.ndarray, seed: int = 0) -> GaugeResult:
    """Ψ = (ϱθ)^{−1/2} pointwise, with an isometry check on random sections."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    th = np.asarray(theta_sec, dtype=np.complex128)
    if th.ndim == 2:
        th = np.broadcast_to(th, (rho.size,) + th.shape)
    if np.any(rho <= 0):
        raise NotPositive("density ϱ must be positive")
    psis = []
    for r, t in zip(rho, th):
        if max_abs(t - adjoint(t)) > 1e-10 * max(1.0, max_abs(t)):
            raise NotPositive("θ is not Hermitian")
        vals, _ = hermitian_eigen(0.5 * (t + adjoint(t)))
        if vals[0] <= 0:
            raise NotPositive("θ is not positive definite")
        psis.append(hermitian_inv_sqrt(r * t))
    psi = np.stack(psis)
    rng = np.random.default_rng(seed)
    m = th.shape[1]
    u = rng.standard_normal((rho.size, m)) + 1j * rng.standard_normal((rho.size, m))
    v = rng.standard_normal((rho.size, m)) + 1j * rng.standard_normal((rho.size, m))
    pu = np.einsum("kij,kj->ki", psi, u)
    pv = np.einsum("kij,kj->ki", psi, v)
    lhs = np.sum(rho * np.einsum("ki,kij,kj->k", pv.conj(), th, pu))
    rhs = np.sum(np.einsum("ki,ki->k", v.conj(), u))
    defect = abs(lhs - rhs) / max(1.0, abs(rhs))
    if defect > 1e-9:
        raise NotPositive(f"gauge isometry check failed ({defect:.2e})")
    return GaugeResult(psi, float(defect))


# ---------------------------------------------------------------------------
# Two-point boundary value problems by multiple shooting
# ---------------------------------------------------------------------------


def negated(d: CollarOperator) -> CollarOperator:
    """−D in normal form: (−J)(d/dx + B) + ½(−J)′ − C."""
    jv, jd, cv = d.J, d.J.deriv, d.C
    return replace(
        d,
        J=FuncField(lambda x: -np.asarray(jv(x)), lambda x: -np.asarray(jd(x))),
        C=FuncField(lambda x: -np.asarray(cv(x)), lambda x: np.zeros_like(np.asarray(cv(x)))),
        cache={},
        label="-" + d.label,
    )


def _block_diag_stack(stacks: Sequence[np.ndarray]) -> np.ndarray:
    if len(stacks) == 1:
        return stacks[0]
    k = stacks[0].shape[0]
    size = sum(a.shape[1] for a in stacks)
    out = np.zeros((k, size, size), dtype=np.complex128)
    r = 0
    for a in stacks:
        out[:, r : r + a.shape[1], r : r + a.shape[1]] = a
        r += a.shape[1]
    return out


@dataclass
class ShootingSystem:
    """Factored multiple-shooting system for (D_b + shift)u_b = g_b, b over blocks.

    The blocks are decoupled inside [0, ℓ] and coupled only through the
    boundary rows L0·u(0) + Ll·u(ℓ) = r, u = (u_1, ..., u_B).  Shooting
    nodes split the grid so that every segment map is well conditioned; the
    unknowns are the node values, which keeps the global solve stable even
    for stiff Fourier modes.
    """

    ops: list
    shift: complex
    block_maps: list
    maps: IntervalMaps
    nodes: list[int]
    phis: list[np.ndarray]
    factor: object

    @property
    def size(self) -> int:
        return self.maps.phi.shape[1]


def shooting_system(
    d: CollarOperator | Sequence[CollarOperator],
    L0: np.ndarray,
    Ll: np.ndarray,
    shift: complex = 0.0,
    maps: IntervalMaps | None = None,
    budget: float = 6.0,
) -> ShootingSystem:
    ops = [d] if isinstance(d, CollarOperator) else list(d)
    if maps is not None and len(ops) == 1:
        bmaps = [maps]
    else:
        bmaps = [interval_maps(op, shift) for op in ops]
    combined = IntervalMaps(_block_diag_stack([m.phi for m in bmaps]), None, max(m.substeps for m in bmaps))
    nodes = shooting_nodes(ops[0], combined, budget)
    phis, _ = segment_maps(combined, nodes)
    n = combined.phi.shape[1]
    if L0.shape != (n, n) or Ll.shape != (n, n):
        raise DimensionMismatch(f"boundary rows must be {n}×{n}")
    S = len(phis)
    size = (S + 1) * n
    a = np.zeros((size, size), dtype=np.complex128)
    for j, p in enumerate(phis):
        r = j * n
        a[r : r + n, j * n : (j + 1) * n] = -p
        a[r : r + n, (j + 1) * n : (j + 2) * n] = identity(n)
    a[S * n :, :n] = L0
    a[S * n :, S * n :] = Ll
    try:
        fac = lu_factor(a)
    except Singular as exc:
        raise Singular("boundary coupling system is singular") from exc
    return ShootingSystem(ops, shift, bmaps, combined, nodes, phis, fac)


def _particular_maps(op: CollarOperator, shift: complex, base: IntervalMaps, rhs: Callable) -> IntervalMaps:
    """Interval increments of the forced problem, refined until they settle."""
    cur = _rk4_intervals(op, shift, rhs, base.substeps)
    for _ in range(12):
        nxt = _rk4_intervals(op, shift, rhs, 2 * cur.substeps)
        if max_abs(nxt.inc - cur.inc) <= 1e-9 * max(1.0, max_abs(nxt.inc)):
            return IntervalMaps(base.phi, nxt.inc, nxt.substeps)
        cur = nxt
    raise StepLimit("forced RK4 propagation did not settle")


def shooting_solve(
    sys: ShootingSystem,
    rhs: Callable | None = None,
    boundary_rhs: np.ndarray | None = None,
) -> Section:
    """Solve for one right-hand side; ``rhs`` maps x values to (len(x), size)."""
    br = None if boundary_rhs is None else np.asarray(boundary_rhs)[:, None]
    return shooting_solve_many(sys, rhs, br, 1)[0]


def shooting_solve_many(
    sys: ShootingSystem,
    rhs: Callable | None,
    boundary_rhs: np.ndarray | None,
    count: int,
) -> list[Section]:
    """Solve for ``count`` right-hand sides at once.

    ``rhs`` maps x values to (len(x), size, count); ``boundary_rhs`` is
    (size, count).  Returned sections stack the blocks along the vector axis.
    """
    n = sys.size
    S = len(sys.phis)
    b = np.zeros(((S + 1) * n, count), dtype=np.complex128)
    maps = sys.maps
    if rhs is not None:
        incs_all = []
        r0 = 0
        for op, bm in zip(sys.ops, sys.block_maps):
            nb = op.n
            lo = r0
            part = lambda xs, lo=lo, nb=nb: np.asarray(rhs(xs), dtype=np.complex128).reshape(np.size(xs), n, count)[
                :, lo : lo + nb
            ]
            incs_all.append(_particular_maps(op, sys.shift, bm, part).inc)
            r0 += nb
        maps = IntervalMaps(sys.maps.phi, np.concatenate(incs_all, axis=1), sys.maps.substeps)
        _, incs = segment_maps(maps, sys.nodes)
        for j, inc in enumerate(incs):
            b[j * n : (j + 1) * n] = inc
    if boundary_rhs is not None:
        b[S * n :] = np.asarray(boundary_rhs).reshape(n, count)
    x = sys.factor.solve(b)
    grid = sys.ops[0].grid
    out = []
    for c in range(count):
        node_vals = [x[j * n : (j + 1) * n, c] for j in range(S + 1)]
        out.append(Section(grid, fill_interior(maps, sys.nodes, node_vals, c)))
    return out


def split_blocks(u: Section, sizes: Sequence[int]) -> list[Section]:
    out, r = [], 0
    for nb in sizes:
        out.append(Section(u.grid, u.values[:, r : r + nb]))
        r += nb
    return out


def fd_weights(offsets: Sequence[float], order: int = 1) -> np.ndarray:
    """Finite-difference weights at unit spacing (Fornberg's recursion, evaluation point 0)."""
    z = np.asarray(offsets, dtype=float)
    n = z.size
    c = np.zeros((n, order + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        for j in range(i):
            c3 = z[i] - z[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - z[i - 1] * c[i - 1, k]) / c2
                c[i, 0] = -c1 * z[i - 1] * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (z[i] * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = z[i] * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def fd_high(values: np.ndarray, h: float, points: int = 9) -> np.ndarray:
    """Derivative along axis 0 with ``points``-point stencils (order points − 1)."""
    f = np.asarray(values, dtype=np.complex128)
    n = f.shape[0]
    if n < points:
        raise DimensionMismatch(f"need at least {points} samples")
    half = points // 2
    out = np.empty_like(f)
    w = fd_weights(np.arange(-half, half + 1))
    out[half : n - half] = sum(w[j] * f[j : n - points + 1 + j] for j in range(points)) / h
    for i in list(range(half)) + list(range(n - half, n)):
        lo = min(max(i - half, 0), n - points)
        w = fd_weights(np.arange(lo, lo + points) - i)
        out[i] = np.tensordot(w, f[lo : lo + points], axes=(0, 0)) / h
    return out


def apply_high(d: CollarOperator, u: Section, shift: complex = 0.0) -> Section:
    """(D + shift)u with 8th-order differences; used to measure solver residuals."""
    xs = u.grid
    du = fd_high(u.values, xs[1] - xs[0])
    js = d.J_full(xs)
    bs = np.asarray(d.B(xs))
    jp = d.Jp_full(xs)
    cs = np.asarray(d.C(xs))
    vals = np.einsum("kij,kj->ki", js, du + np.einsum("kij,kj->ki", bs, u.values))
    vals += np.einsum("kij,kj->ki", 0.5 * jp + cs, u.values) + shift * u.values
    return Section(xs, vals)


def residual(d: CollarOperator, u: Section, g: Section | None = None, shift: complex = 0.0) -> float:
    """Max-norm of (D + shift)u − g over max(1, max|g|), via 8th-order differences."""
    r = apply_high(d, u, shift).values
    scale = 1.0
    if g is not None:
        r = r - g.values
        scale = max(1.0, float(np.max(np.abs(g.values))))
    return float(np.max(np.abs(r))) / scale
