"""Invertible double, boundary conditions P(T), Poisson operators and Calderón projections.

Boundary data live in L²(Σ₀) ⊕ L²(Σ_ℓ) (dimension 2n); the boundary matrix is
J_Σ = diag(J(0), −J(ℓ)).  A condition P(T) = (−T  Id) couples the two halves
of the double through ρf₋ = Tρf₊.

The Calderón projection C₊ is the projection onto the Cauchy data space N₊
of D along T⁻¹N₋, where N₋ is the Cauchy data space of D^t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circleop import evaluate_field
from .collar import (
    CollarOperator,
    Section,
    formal_adjoint,
    kernel_transfer,
    kron_modes,
    negated,
    residual,
    shooting_solve,
    shooting_solve_many,
    shooting_system,
    split_blocks,
    ucp_defect,
)
from .cutoffs import SmoothCutoff
from .errors import (
    CutInvalid,
    DimensionMismatch,
    NotInvertible,
    NotTransversal,
    NotWellPosed,
    PositivityFailed,
    PreconditionFailed,
    Singular,
)
from .numkernel import (
    ComplexMatrix,
    Subspace,
    adjoint,
    block_diag,
    hermitian_eigen,
    hermitian_inv_sqrt,
    identity,
    inverse,
    max_abs,
    orthonormalize,
    principal_angles,
    singular_values,
    smallest_singular_value,
)
from .sectorial import Idempotent, SpectralCutConfig, build_positive_contour, projection_along, sectorial_projection

CHOICES = ("J", "JtInv", "UnitaryJ", "Reflection")


# ---------------------------------------------------------------------------
# Boundary conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryConditionT:
    """Invertible T: L²(Σ) → L²(Σ), with the boundary matrix it was built against.

    ``fibers`` holds (T₀, T_ℓ) fiber matrices when T acts mode-diagonally and
    separately on each boundary circle.
    """

    T: ComplexMatrix
    J_sigma: ComplexMatrix
    choice: str
    positivity_witness: float
    positive: bool
    fibers: tuple | None = None

    @property
    def size(self) -> int:
        return self.T.shape[0]


def fiber_choice(j: np.ndarray, choice: str) -> np.ndarray:
    """Canonical T on one boundary circle for the fiber boundary matrix j."""
    j = np.asarray(j, dtype=np.complex128)
    if choice == "J":
        return j.copy()
    if choice == "JtInv":
        return inverse(adjoint(j))
    if choice == "UnitaryJ":
        return hermitian_inv_sqrt(j @ adjoint(j)) @ j
    if choice == "Reflection":
        h = -(j @ j)
        if max_abs(h - adjoint(h)) > 1e-9 * max(1.0, max_abs(h)):
            raise PreconditionFailed("−J² is not Hermitian, so J(−J²)^{−1/2} is undefined")
        return j @ hermitian_inv_sqrt(0.5 * (h + adjoint(h)))
    raise ValueError(f"unknown boundary condition choice {choice!r}")


def _positivity(J_sigma: np.ndarray, T: np.ndarray) -> tuple[float, float]:
    """(Hermitian defect, min eigenvalue of the Hermitian part) of J_Σ*·T."""
    h = adjoint(J_sigma) @ T
    herm = max_abs(h - adjoint(h)) / max(1.0, max_abs(h))
    vals, _ = hermitian_eigen(0.5 * (h + adjoint(h)))
    return herm, float(vals[0])


def _assemble_T(d: CollarOperator, t0: np.ndarray, tl: np.ndarray) -> ComplexMatrix:
    return block_diag(kron_modes(t0, d.N), kron_modes(tl, d.N))


def make_boundary_condition(
    d: CollarOperator,
    choice: str = "JtInv",
    custom: np.ndarray | tuple | None = None,
    require_positive: bool = True,
) -> BoundaryConditionT:
    """Build T per ``choice`` (one of CHOICES or "custom") and check J_Σ*T > 0.

    ``custom`` is a full 2n×2n matrix or a pair of fiber matrices (T₀, T_ℓ).
    """
    j0, jl = d.boundary_J_fibers()
    J_sigma = d.boundary_J()
    if choice == "custom":
        if custom is None:
            raise ValueError("custom choice needs a matrix")
        if isinstance(custom, tuple):
            fibers = tuple(np.asarray(t, dtype=np.complex128) for t in custom)
            T = _assemble_T(d, *fibers)
        else:
            T = np.asarray(custom, dtype=np.complex128)
            fibers = None
    else:
        fibers = (fiber_choice(j0, choice), fiber_choice(jl, choice))
        T = _assemble_T(d, *fibers)
    if T.shape != J_sigma.shape:
        raise DimensionMismatch(f"T must be {J_sigma.shape[0]}×{J_sigma.shape[0]}")
    if smallest_singular_value(T) < 1e-8:
        raise Singular("T is not invertible")
    if fibers is not None:
        checks = [_positivity(j0, fibers[0]), _positivity(jl, fibers[1])]
        herm = max(c[0] for c in checks)
        witness = min(c[1] for c in checks)
    else:
        herm, witness = _positivity(J_sigma, T)
    positive = herm <= 1e-9 and witness >= 1e-8
    if require_positive and not positive:
        raise PositivityFailed(
            f"J_Σ*T is not positive definite (Hermitian defect {herm:.2e}, min eigenvalue {witness:.3e})"
        )
    return BoundaryConditionT(T, J_sigma, choice, witness, positive, fibers)


def dual_condition(bc: BoundaryConditionT) -> BoundaryConditionT:
    """T^dual = −J_Σ⁻¹(T*)⁻¹J_Σ*; equals −T⁻¹ when J_Σ*T is positive."""
    js = bc.J_sigma
    td = -inverse(js) @ inverse(adjoint(bc.T)) @ adjoint(js)
    if bc.positive:
        alt = -inverse(bc.T)
        gap = max_abs(td - alt) / max(1.0, max_abs(alt))
        if gap > 1e-9:
            raise PreconditionFailed(f"dual formula and −T⁻¹ disagree by {gap:.2e}")
    fibers = None
    if bc.fibers is not None:
        n = js.shape[0] // 2
        m = bc.fibers[0].shape[0]
        fibers = (td[:m, :m].copy(), td[n : n + m, n : n + m].copy())
    # the dual condition is posed for −A^t, whose boundary matrix is J_Σ*
    herm, witness = _positivity(adjoint(js), td)
    return BoundaryConditionT(td, adjoint(js), "dual:" + bc.choice, witness, herm <= 1e-9 and witness >= 1e-8, fibers)


def condition_graph(bc: BoundaryConditionT) -> Subspace:
    """ker P(T) = {(a, Ta)} inside boundary data of the double."""
    n = bc.size
    return orthonormalize(np.vstack([identity(n), bc.T]))


# ---------------------------------------------------------------------------
# Šapiro–Lopatinskiĭ at symbol level
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShapiroReport:
    ok: bool
    min_singular_value: float
    worst_condition_number: float
    worst_point: tuple


def _symbol_projection(b: np.ndarray) -> Idempotent:
    """P₊ of a small fiber matrix with no eigenvalues on iℝ, by a contour integral."""
    norm = float(max(singular_values(b)[0], 1e-12))
    margin = 0.2 * norm
    for _ in range(12):
        cfg = SpectralCutConfig(c=0.75 * margin, outer_radius=2.0 * norm + 1.0, margin=margin)
        try:
            return sectorial_projection(b, build_positive_contour(b, cfg))
        except CutInvalid:
            margin *= 0.5
    raise CutInvalid("symbol has spectrum too close to the imaginary axis")


def _circle_map(j: np.ndarray, t: np.ndarray, b0: np.ndarray) -> np.ndarray:
    """[−J*T F₊ | F₋] with F₊ spanning im P₊(b₀) and F₋ spanning im P₋(b₀*)."""
    m = b0.shape[0]
    pp = _symbol_projection(b0)
    pm = Idempotent(identity(m) - _symbol_projection(adjoint(b0)).mat)
    fp = orthonormalize(pp.mat).frame
    fm = orthonormalize(pm.mat).frame
    if fp.shape[1] + fm.shape[1] != m:
        raise PreconditionFailed("symbol projections have mismatched ranks")
    return np.hstack([-adjoint(j) @ t @ fp, fm])


def shapiro_lopatinskii_check(
    d: CollarOperator,
    bc: BoundaryConditionT,
    sample_grid: int = 16,
    threshold: float = 1e-6,
) -> ShapiroReport:
    """Symbol-level check at both boundary circles over θ samples and ζ = ±1.

    On Σ_ℓ the inward coordinate is ℓ − x, so the boundary matrix is −J(ℓ)
    and the tangential symbol changes sign.
    """
    if bc.fibers is None:
        raise PreconditionFailed("symbol check needs a mode-diagonal T given by fiber matrices")
    j0, jl = d.boundary_J_fibers()
    thetas = np.linspace(0.0, 2.0 * math.pi, sample_grid, endpoint=False)
    worst = (math.inf, math.inf, None)
    seen: dict = {}
    for side, (j, t, x, sign) in enumerate([(j0, bc.fibers[0], 0.0, 1.0), (jl, bc.fibers[1], d.length, -1.0)]):
        g = evaluate_field(d.gamma(x), thetas, d.m)
        for k, th in enumerate(thetas):
            for zeta in (1.0, -1.0):
                b0 = sign * g[k] * (1j * zeta)
                key = (side, np.round(b0, 12).tobytes())
                if key not in seen:
                    s = singular_values(_circle_map(j, t, b0))
                    smin = float(s[-1])
                    seen[key] = (smin, math.inf if smin == 0 else float(s[0] / smin))
                smin, cond = seen[key]
                if smin < worst[0]:
                    worst = (smin, cond, ("Σ0" if side == 0 else "Σℓ", float(th), zeta))
    return ShapiroReport(worst[0] >= threshold, worst[0], worst[1], worst[2])


# ---------------------------------------------------------------------------
# Invertible double
# ---------------------------------------------------------------------------


def _coupling_rows(T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ρf₋ − Tρf₊ = 0 in the variables w = (f₊, f₋) at x = 0 and x = ℓ."""
    n2 = T.shape[0]
    n = n2 // 2
    L0 = np.zeros((n2, n2), dtype=np.complex128)
    Ll = np.zeros((n2, n2), dtype=np.complex128)
    L0[:, :n] = -T[:, :n]
    Ll[:, :n] = -T[:, n:]
    L0[:n, n:] = identity(n)
    Ll[n:, n:] = identity(n)
    return L0, Ll


@dataclass
class DoubleSolver:
    """Factored double A ⊕ (−A^t) with coupling ρf₋ = Tρf₊."""

    op: CollarOperator
    neg_adjoint: CollarOperator
    bc: BoundaryConditionT
    system: object

    def solve(self, g_plus: Section, g_minus: Section) -> tuple[Section, Section]:
        return self.solve_many([(g_plus, g_minus)])[0]

    def solve_many(self, rhs: Sequence[tuple[Section, Section]]) -> list[tuple[Section, Section]]:
        n = self.op.n
        count = len(rhs)

        def forcing(xs):
            out = np.zeros((np.size(xs), 2 * n, count), dtype=np.complex128)
            for c, (gp, gm) in enumerate(rhs):
                out[:, :n, c] = gp.evaluate(xs)
                out[:, n:, c] = gm.evaluate(xs)
            return out

        sols = shooting_solve_many(self.system, forcing, None, count)
        return [tuple(split_blocks(u, (n, n))) for u in sols]

    def residual(self, f: tuple[Section, Section], g: tuple[Section, Section]) -> float:
        """Discrete ‖Ãf − g‖ / ‖g‖ (max norm) with the fourth-order stack."""
        r1 = residual(self.op, f[0], g[0])
        r2 = residual(self.neg_adjoint, f[1], g[1])
        return max(r1, r2)

    def coupling_residual(self, f: tuple[Section, Section]) -> float:
        a = self.bc.T @ f[0].trace()
        return max_abs(f[1].trace() - a) / max(1.0, max_abs(a))


def double_solver(d: CollarOperator, bc: BoundaryConditionT, check_ucp: bool = True) -> DoubleSolver:
    if check_ucp:
        if ucp_defect(d, "both") or ucp_defect(formal_adjoint(d), "both"):
            raise PreconditionFailed("unique continuation fails for D or D^t")
    dt = formal_adjoint(d)
    na = negated(dt)
    L0, Ll = _coupling_rows(bc.T)
    try:
        sys = shooting_system([d, na], L0, Ll)
    except Singular as exc:
        raise NotInvertible("coupling system of the double is singular") from exc
    return DoubleSolver(d, na, bc, sys)


def solve_double(
    d: CollarOperator, bc: BoundaryConditionT, rhs: tuple[Section, Section]
) -> tuple[Section, Section]:
    """Solve Af₊ = g₊, −A^t f₋ = g₋ with ρf₋ = Tρf₊."""
    return double_solver(d, bc).solve(*rhs)


# ---------------------------------------------------------------------------
# Calderón projections and Poisson operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalderonPair:
    c_plus: Idempotent
    c_minus: Idempotent
    n_plus: Subspace
    n_minus: Subspace
    t_used: BoundaryConditionT
    transfer: ComplexMatrix = field(repr=False, default=None)

    def along(self) -> Subspace:
        """T⁻¹N₋, the kernel of C₊."""
        return orthonormalize(inverse(self.t_used.T) @ self.n_minus.frame)


def calderon_pair(d: CollarOperator, bc: BoundaryConditionT, tol: float = 1e-8) -> CalderonPair:
    transfer, n_plus = kernel_transfer(d)
    _, n_minus = kernel_transfer(formal_adjoint(d))
    along = orthonormalize(inverse(bc.T) @ n_minus.frame)
    c_plus = projection_along(n_plus, along)
    n2 = bc.size
    c_minus = Idempotent(identity(n2) - c_plus.mat)
    rng_err = max(principal_angles(c_plus.range(), n_plus), default=0.0)
    ker_err = max(principal_angles(c_minus.range(), along), default=0.0)
    if rng_err > 1e-7 or ker_err > 1e-7:
        raise NotTransversal(f"projection ranges drift from the Cauchy data ({rng_err:.2e}, {ker_err:.2e})")
    return CalderonPair(c_plus, c_minus, n_plus, n_minus, bc, transfer)


def poisson_apply(pair: CalderonPair, d: CollarOperator, xi: np.ndarray) -> Section:
    """The kernel element u of D with ρu = C₊ξ."""
    return poisson_apply_many(pair, d, np.asarray(xi)[:, None])[0]


def poisson_apply_many(pair: CalderonPair, d: CollarOperator, xis: np.ndarray) -> list[Section]:
    n = d.n
    f = pair.n_plus.frame
    target = pair.c_plus.mat @ np.asarray(xis, dtype=np.complex128)
    L0 = adjoint(f[:n])
    Ll = adjoint(f[n:])
    try:
        sys = shooting_system(d, L0, Ll)
    except Singular as exc:
        raise NotInvertible("Poisson system is singular") from exc
    return shooting_solve_many(sys, None, adjoint(f) @ target, target.shape[1])


# ---------------------------------------------------------------------------
# Well-posed realizations
# ---------------------------------------------------------------------------


@dataclass
class ResolventSolver:
    op: CollarOperator
    projection: np.ndarray
    shift: complex
    system: object

    def solve(self, g: Section) -> Section:
        return self.solve_many([g])[0]

    def solve_many(self, gs: Sequence[Section]) -> list[Section]:
        n = self.op.n
        count = len(gs)

        def forcing(xs):
            out = np.zeros((np.size(xs), n, count), dtype=np.complex128)
            for c, g in enumerate(gs):
                out[:, :, c] = g.evaluate(xs)
            return out

        return shooting_solve_many(self.system, forcing, None, count)


def resolvent_solver(d: CollarOperator, p: np.ndarray, shift: complex = 1j, tol: float = 1e-9) -> ResolventSolver:
    """(D + shift) restricted to {u : p·ρu = 0}, factored once."""
    if not d.selfadjoint:
        raise PreconditionFailed("well-posed resolvent needs a formally selfadjoint operator")
    p = np.asarray(getattr(p, "mat", p), dtype=np.complex128)
    n = d.n
    if p.shape != (2 * n, 2 * n):
        raise DimensionMismatch("boundary projection has the wrong size")
    if max_abs(p - adjoint(p)) > tol or max_abs(p @ p - p) > 1e-8:
        raise PreconditionFailed("boundary projection must be an orthogonal idempotent")
    rng = orthonormalize(p, 1e-8)
    if rng.dim != n:
        raise NotWellPosed(f"boundary projection has rank {rng.dim}, expected {n}")
    rows = adjoint(rng.frame)
    try:
        sys = shooting_system(d, rows[:, :n].copy(), rows[:, n:].copy(), shift=shift)
    except Singular as exc:
        raise NotWellPosed("resolvent coupling system is singular") from exc
    return ResolventSolver(d, p, shift, sys)


def wellposed_resolvent(d: CollarOperator, p: np.ndarray, g: Section, shift: complex = 1j) -> Section:
    """Solve (D + shift)u = g with p·ρu = 0."""
    return resolvent_solver(d, p, shift).solve(g)


# ---------------------------------------------------------------------------
# Trace right-inverse
# ---------------------------------------------------------------------------


def trace_cutoff(length: float) -> SmoothCutoff:
    return SmoothCutoff(length / 8.0, length / 4.0)


def trace_extension(d: CollarOperator, xi: np.ndarray) -> Section:
    """e(ξ)(x) = χ(x)ξ₀ + χ(ℓ − x)ξ_ℓ with χ = 1 near 0 and supported in [0, ℓ/4]."""
    n = d.n
    xi = np.asarray(xi, dtype=np.complex128)
    if xi.shape != (2 * n,):
        raise DimensionMismatch("boundary vector has the wrong size")
    chi = trace_cutoff(d.length)
    length = d.length

    def fn(xs):
        xs = np.asarray(xs, dtype=float)
        return np.outer(chi(xs), xi[:n]) + np.outer(chi(length - xs), xi[n:])

    return Section.from_function(d.grid, fn)
