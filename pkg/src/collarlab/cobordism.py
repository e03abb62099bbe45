"""Spectral W-splitting, signature vanishing and grading index for symmetric tangential operators.

For a tangential operator b the boundary data split as W_< ⊕ W₀ ⊕ W_>: the
ranges of the Riesz projections for three disjoint contours.  Γ_> bounds
{Re z ≥ s, |z| ≤ R}, Γ_< is its mirror image and Γ₀ bounds the strip piece
{|Re z| ≤ s, |z| ≤ c} around the imaginary-axis eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circleop import CircleOperator, modes
from .collar import CollarOperator, kron_modes
from .errors import CutInvalid, GradingUnbalanced, PreconditionFailed, RelationViolated
from .numkernel import (
    ComplexMatrix,
    Subspace,
    adjoint,
    hermitian_eigen,
    hermitian_inv_sqrt,
    identity,
    max_abs,
    null_space,
    op_norm,
    orthonormalize,
    principal_angles,
    singular_values,
    singular_values_batch,
    subspace_sum,
)
from .sectorial import (
    Arc,
    Contour,
    Idempotent,
    Segment,
    _arc_pieces,
    _line_breaks,
    circle_contour,
    contour_integral,
    validate_cut,
)
from .symplectic import SymplecticSpace, annihilator, form_signature, is_lagrangian

RANK_TOL = 1e-8


# ---------------------------------------------------------------------------
# Three-contour splitting
# ---------------------------------------------------------------------------


def _graded_line(x: float, y0: float, y1: float, step: float) -> list[Segment]:
    """Vertical segment Re z = x from y0 to y1 = −y0, graded geometrically away from Im z = 0."""
    top = abs(y0)
    br = _line_breaks(0.0, top, step)
    ys = sorted(set([-y for y in br] + br))
    if y1 < y0:
        ys = ys[::-1]
    pts = [complex(x, y) for y in ys]
    return [Segment(a, b) for a, b in zip(pts[:-1], pts[1:])]


def three_contours(c: float, R: float, strip: float) -> tuple[Contour, Contour, Contour]:
    """(Γ_<, Γ₀, Γ_>) for cut radius c, outer radius R and strip half width s."""
    if not 0.0 < strip < c < R:
        raise CutInvalid("need 0 < strip < c < R")
    H = math.sqrt(R * R - strip * strip)
    h = math.sqrt(c * c - strip * strip)
    step = 0.5 * max(c, 0.5)
    phi_r = math.atan2(H, strip)
    greater = _arc_pieces(0j, R, -phi_r, phi_r, math.pi / 4) + _graded_line(strip, H, -H, step)
    psi_r = math.atan2(H, -strip)
    less = _arc_pieces(0j, R, psi_r, 2.0 * math.pi - psi_r, math.pi / 4) + _graded_line(-strip, -H, H, step)
    phi_c = math.atan2(h, strip)
    zero = (
        _graded_line(strip, -h, h, step)
        + _arc_pieces(0j, c, phi_c, math.pi - phi_c, math.pi / 4)
        + _graded_line(-strip, h, -h, step)
        + _arc_pieces(0j, c, math.pi + phi_c, 2.0 * math.pi - phi_c, math.pi / 4)
    )
    return (
        Contour(tuple(less), label="less"),
        Contour(tuple(zero), label="zero"),
        Contour(tuple(greater), label="greater"),
    )


@dataclass(frozen=True)
class SpectralSplit:
    b: ComplexMatrix
    p_less: Idempotent
    p_zero: Idempotent
    p_greater: Idempotent
    w_less: Subspace
    w_zero: Subspace
    w_greater: Subspace
    sum_defect: float
    product_defect: float


def spectral_split(
    b: ComplexMatrix,
    c: float = 0.5,
    R: float | None = None,
    margin: float = 0.1,
    strip: float | None = None,
) -> SpectralSplit:
    """Riesz projections for Γ_<, Γ₀, Γ_>, each contour validated against the margin.

    The strip half width defaults to twice the margin.
    """
    b = np.asarray(b, dtype=np.complex128)
    n = b.shape[0]
    nb = op_norm(b) if n else 0.0
    R = max(2.0 * nb + 1.0, 2.0 * c + 1.0) if R is None else R
    if R <= 2.0 * nb:
        raise CutInvalid(f"outer radius {R} must exceed 2‖b‖ = {2 * nb:.4g}")
    # imaginary-axis eigenvalues sit at distance `strip` from the Γ₀ lines
    s = 2.0 * margin if strip is None else strip
    contours = three_contours(c, R, s)
    projs = []
    for cont in contours:
        validate_cut(b, cont, margin)
        vals, _ = contour_integral(b, cont)
        projs.append(Idempotent(vals[0]))
    pl, p0, pg = projs
    total = pl.mat + p0.mat + pg.mat
    sum_defect = max_abs(total - identity(n))
    if sum_defect > 1e-8:
        raise CutInvalid(
            f"projections miss part of the spectrum (sum defect {sum_defect:.2e}): "
            "an eigenvalue lies in the strip outside the cut disc"
        )
    prods = [pl.mat @ p0.mat, pl.mat @ pg.mat, p0.mat @ pg.mat, p0.mat @ pl.mat, pg.mat @ pl.mat, pg.mat @ p0.mat]
    prod_defect = max(max_abs(p) for p in prods)
    return SpectralSplit(b, pl, p0, pg, pl.range(), p0.range(), pg.range(), sum_defect, prod_defect)


# ---------------------------------------------------------------------------
# Coisotropy and signatures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoisotropyReport:
    ok: bool
    greater_angle: float
    less_angle: float
    relation_defect: float


def _relation_defect(j: np.ndarray, b: np.ndarray) -> float:
    return max_abs(j @ b + adjoint(b) @ j) / max(1.0, max_abs(j) * max(1.0, max_abs(b)))


def _angle_between(u: Subspace, v: Subspace) -> float:
    if u.dim != v.dim:
        return math.pi / 2
    return max(principal_angles(u, v), default=0.0)


def coisotropy_check(split: SpectralSplit, j: ComplexMatrix, tol: float = 1e-7) -> CoisotropyReport:
    """W_>^ω = W₀ ⊕ W_> and W_<^ω = W_< ⊕ W₀ for ω = ⟨j·,·⟩."""
    j = np.asarray(j, dtype=np.complex128)
    rel = _relation_defect(j, split.b)
    if rel > 1e-8:
        raise RelationViolated(f"jb + b*j = {rel:.2e} ≠ 0")
    sp = SymplecticSpace(j)
    g = _angle_between(annihilator(sp, split.w_greater), subspace_sum(split.w_zero, split.w_greater))
    l = _angle_between(annihilator(sp, split.w_less), subspace_sum(split.w_less, split.w_zero))
    return CoisotropyReport(g <= tol and l <= tol, g, l, rel)


def zero_form(split: SpectralSplit, j: ComplexMatrix) -> ComplexMatrix:
    """Hermitian matrix of ⟨iP₀jξ, η⟩ on an orthonormal basis of W₀.

    The orthogonal compression is used; on W₀ it agrees with the oblique P₀
    up to the W₀-component, which is all the form sees.
    """
    f = split.w_zero.frame
    if f.shape[1] == 0:
        return np.zeros((0, 0), dtype=np.complex128)
    h = 1j * adjoint(f) @ split.p_zero.mat @ j @ f
    return 0.5 * (h + adjoint(h))


@dataclass(frozen=True)
class SignatureResult:
    signature: int
    w_zero_dim: int
    eigenvalues: tuple
    scan: "ScanResult | None" = None


def cobordism_signature(
    d: CollarOperator, c: float = 0.5, margin: float = 0.1, strip: float | None = None, scan: bool = False
) -> SignatureResult:
    """Signature of iP₀J₀ on W₀(B₀) for a formally selfadjoint operator."""
    if not d.selfadjoint:
        raise PreconditionFailed("cobordism signature needs a formally selfadjoint operator")
    b0 = d.B_at(0.0)
    j0 = d.J_full(0.0)
    rel = _relation_defect(j0, b0)
    if rel > 1e-8:
        raise RelationViolated(f"J₀B₀ + B₀*J₀ = {rel:.2e} ≠ 0")
    split = spectral_split(b0, c=c, margin=margin, strip=strip)
    h = zero_form(split, j0)
    vals = tuple(float(v) for v in hermitian_eigen(h)[0]) if h.size else ()
    sig = form_signature(h) if h.size else 0
    sc = imaginary_scan(b0, c) if scan else None
    return SignatureResult(sig, split.w_zero.dim, vals, sc)


def range_lagrangian(pair, d: CollarOperator, tol: float = 1e-7):
    """is_lagrangian(range C₊) in (L²(Σ), ⟨−J_Σ·,·⟩)."""
    sp = SymplecticSpace(-d.boundary_J())
    return is_lagrangian(sp, pair.c_plus.range(), tol)


# ---------------------------------------------------------------------------
# Imaginary-axis scan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanResult:
    ts: np.ndarray
    sigma: np.ndarray
    dips: tuple
    w_zero: Subspace | None
    heuristic: bool = True


def imaginary_scan(b: ComplexMatrix, c: float, points: int = 400, dip: float = 1e-3, chunk: int = 50) -> ScanResult:
    """min σ(b − it) on t ∈ [−c, c] and small-circle projections around the dips.

    Completeness is not certified for non-normal b, so the result is marked heuristic.
    """
    b = np.asarray(b, dtype=np.complex128)
    n = b.shape[0]
    ts = np.linspace(-c, c, points)
    sig = np.empty(points)
    for s in range(0, points, chunk):
        t = ts[s : s + chunk]
        mats = b[None] - (1j * t)[:, None, None] * identity(n)
        sig[s : s + chunk] = singular_values_batch(mats)[:, -1]
    scale = max(1.0, op_norm(b))
    idx = [
        i
        for i in range(points)
        if sig[i] <= dip * scale and (i == 0 or sig[i] <= sig[i - 1]) and (i == points - 1 or sig[i] <= sig[i + 1])
    ]
    dips = tuple(float(ts[i]) for i in idx)
    if not dips:
        return ScanResult(ts, sig, dips, Subspace.zero(n))
    spacing = ts[1] - ts[0]
    total = np.zeros((n, n), dtype=np.complex128)
    for k, t in enumerate(dips):
        gaps = [abs(t - u) for u in dips if u != t]
        radius = min([0.5 * g for g in gaps] + [0.1 * max(c, spacing), 4 * spacing])
        vals, _ = contour_integral(b, circle_contour(1j * t, radius, pieces=8))
        total += vals[0]
    try:
        w = Idempotent(total, 1e-6).range()
    except Exception:
        w = None
    return ScanResult(ts, sig, dips, w)


# ---------------------------------------------------------------------------
# Grading split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradingResult:
    b_plus: ComplexMatrix
    index: int
    kernel_dim: int
    cokernel_dim: int
    inconclusive: bool = False
    guard_mass: float = 0.0


def grading_operator(j: ComplexMatrix) -> ComplexMatrix:
    """α = i·j·(−j²)^{−1/2}: a Hermitian involution when j is skew."""
    j = np.asarray(j, dtype=np.complex128)
    h = -(j @ j)
    return 1j * j @ hermitian_inv_sqrt(0.5 * (h + adjoint(h)))


def _grading_frames(j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    alpha = grading_operator(j)
    vals, vecs = hermitian_eigen(0.5 * (alpha + adjoint(alpha)))
    plus = vecs[:, vals > 0]
    minus = vecs[:, vals < 0]
    return plus, minus


def grading_split_index(b0: ComplexMatrix, j: ComplexMatrix, tol: float = 1e-8) -> GradingResult:
    b0 = np.asarray(b0, dtype=np.complex128)
    j = np.asarray(j, dtype=np.complex128)
    if max_abs(b0 - adjoint(b0)) > tol * max(1.0, max_abs(b0)):
        raise RelationViolated("b0 is not Hermitian")
    if max_abs(j + adjoint(j)) > tol * max(1.0, max_abs(j)):
        raise RelationViolated("j is not skew")
    if max_abs(j @ b0 + b0 @ j) > tol * max(1.0, max_abs(j) * max(1.0, max_abs(b0))):
        raise RelationViolated("j and b0 do not anticommute")
    plus, minus = _grading_frames(j)
    if plus.shape[1] != minus.shape[1]:
        raise GradingUnbalanced(f"grading eigenspaces have dimensions {plus.shape[1]} and {minus.shape[1]}")
    bp = adjoint(minus) @ b0 @ plus
    ker = null_space(bp, tol).dim if bp.size else plus.shape[1]
    coker = null_space(adjoint(bp), tol).dim if bp.size else minus.shape[1]
    return GradingResult(bp, ker - coker, ker, coker)


def circle_grading_index(b: CircleOperator, j_fiber: np.ndarray, tol: float = 1e-8, guard: float = 1e-6) -> GradingResult:
    """Grading index on a truncated circle operator with a high-mode guard band.

    Kernel vectors of B⁺ or B⁺* with mass above ``guard`` in modes
    |k| > N − N/4 make the result inconclusive.
    """
    N, m = b.N, b.fiber_dim
    j = kron_modes(np.asarray(j_fiber, dtype=np.complex128), N)
    res = grading_split_index(b.realized, j, tol)
    plus, minus = _grading_frames(j)
    high = np.repeat(np.abs(modes(N)) > N - N / 4.0, m)
    mass = 0.0
    for frame, mat in ((plus, res.b_plus), (minus, adjoint(res.b_plus))):
        ker = null_space(mat, tol)
        if ker.dim:
            vecs = frame @ ker.frame
            mass = max(mass, float(np.max(np.sqrt(np.sum(np.abs(vecs[high]) ** 2, axis=0)))))
    return GradingResult(res.b_plus, res.index, res.kernel_dim, res.cokernel_dim, mass > guard, mass)


# ---------------------------------------------------------------------------
# Signature flow
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowReport:
    ts: tuple
    signatures: tuple
    kernel_dims: tuple
    indeterminate: tuple
    constant: bool


def kernel_signature(j: np.ndarray, b: np.ndarray, tol: float = 1e-8) -> tuple[int, int, bool]:
    """(signature of iJ on ker B, dim ker B, indeterminate flag).

    A sample is indeterminate when the smallest singular value above the
    rank threshold is below ten times that threshold.
    """
    s = singular_values(b)
    scale = max(1.0, float(s[0])) if s.size else 1.0
    above = s[s > tol * scale]
    indeterminate = bool(above.size and above[-1] < 10.0 * tol * scale)
    ker = null_space(b, tol)
    if ker.dim == 0:
        return 0, 0, indeterminate
    h = 1j * adjoint(ker.frame) @ j @ ker.frame
    return form_signature(0.5 * (h + adjoint(h))), ker.dim, indeterminate


def signature_flow_experiment(
    family: Callable[[float], tuple[np.ndarray, np.ndarray]], samples: Sequence[float], tol: float = 1e-8
) -> FlowReport:
    sigs, dims, flags = [], [], []
    for t in samples:
        j, b = family(float(t))
        j = np.asarray(j, dtype=np.complex128)
        b = np.asarray(b, dtype=np.complex128)
        if max_abs(j @ b + b @ j) > 1e-8 * max(1.0, max_abs(b)):
            raise RelationViolated(f"J_t B_t ≠ −B_t J_t at t = {t}")
        sig, dim, flag = kernel_signature(j, b, tol)
        sigs.append(sig)
        dims.append(dim)
        flags.append(flag)
    kept = [s for s, f in zip(sigs, flags) if not f]
    return FlowReport(tuple(float(t) for t in samples), tuple(sigs), tuple(dims), tuple(flags), len(set(kept)) <= 1)
