"""Contour geometry and the sectorial functional calculus.

The positive contour is the boundary of

    ({Re z >= δ₀} ∪ {|z| <= c}) ∩ {|z| <= R},     δ₀ = margin / 2,

traversed counter-clockwise; the negative contour bounds the complementary
region {Re z <= -δ₀, |z| >= c, |z| <= R}.  Spectrum on the imaginary axis
inside the cut disc therefore belongs to the positive side.

Resolvent integrals are evaluated with composite Gauss-Legendre rules.  Each
piece of the contour is refined independently by doubling until its
contribution is stable, and block-diagonal operators are split into
independent components before any resolvent is formed.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .cutoffs import SmoothCutoff
from .errors import (
    CutInvalid,
    DimensionMismatch,
    NotIdempotent,
    NotTransversal,
    PreconditionFailed,
    QuadratureNotConverged,
    Singular,
)
from .numkernel import (
    ComplexMatrix,
    Subspace,
    adjoint,
    frobenius,
    hermitian_eigen,
    identity,
    lu_factor,
    lu_solve,
    lu_solve_batch,
    max_abs,
    op_norm,
    orthonormalize,
    principal_angles,
    singular_values,
    sparsity_components,
    singular_values_batch,
    svd,
)

GL_NODES = 16
MAX_DOUBLINGS = 6
QUAD_TOL = 1e-9
QUAD_HARD_TOL = 1e-8

# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    z0: complex
    z1: complex

    def point(self, t: np.ndarray) -> np.ndarray:
        return self.z0 + (self.z1 - self.z0) * np.asarray(t)

    def deriv(self, t: np.ndarray) -> np.ndarray:
        return np.full(np.shape(t), self.z1 - self.z0, dtype=np.complex128)

    def length(self) -> float:
        return abs(self.z1 - self.z0)


@dataclass(frozen=True)
class Arc:
    center: complex
    radius: float
    angle0: float
    angle1: float

    def point(self, t: np.ndarray) -> np.ndarray:
        a = self.angle0 + (self.angle1 - self.angle0) * np.asarray(t)
        return self.center + self.radius * np.exp(1j * a)

    def deriv(self, t: np.ndarray) -> np.ndarray:
        span = self.angle1 - self.angle0
        a = self.angle0 + span * np.asarray(t)
        return 1j * self.radius * span * np.exp(1j * a)

    def length(self) -> float:
        return abs(self.angle1 - self.angle0) * self.radius

    def split(self, count: int) -> list["Arc"]:
        cuts = np.linspace(self.angle0, self.angle1, count + 1)
        return [Arc(self.center, self.radius, float(a), float(b)) for a, b in zip(cuts[:-1], cuts[1:])]


Piece = Union[Segment, Arc]


@functools.lru_cache(maxsize=32)
def _gauss_legendre_cached(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    t, wt = 0.5 * (x + 1.0), 0.5 * w
    t.flags.writeable = False
    wt.flags.writeable = False
    return t, wt


def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return _gauss_legendre_cached(int(n))


@dataclass(frozen=True)
class Contour:
    """Closed, positively oriented piecewise path with a composite GL rule."""

    pieces: tuple
    nodes_per_piece: int = GL_NODES
    label: str = ""

    def __post_init__(self) -> None:
        if not self.pieces:
            raise CutInvalid("contour has no pieces")
        if self.nodes_per_piece < 16:
            raise CutInvalid("at least 16 nodes per piece are required")
        ends = [(p.point(0.0), p.point(1.0)) for p in self.pieces]
        for i, (_, end) in enumerate(ends):
            start = ends[(i + 1) % len(ends)][0]
            if abs(complex(end) - complex(start)) > 1e-12 * max(1.0, abs(complex(start))):
                raise CutInvalid(f"contour is not closed between pieces {i} and {(i + 1) % len(ends)}")

    def length(self) -> float:
        return float(sum(p.length() for p in self.pieces))

    def piece_rule(self, index: int, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights dz for piece ``index`` split into 2**level parts."""
        t, w = _gauss_legendre(self.nodes_per_piece)
        parts = 2**level
        offsets = np.arange(parts)[:, None] / parts
        tt = (offsets + t[None, :] / parts).ravel()
        ww = np.tile(w / parts, parts)
        p = self.pieces[index]
        return p.point(tt), p.deriv(tt) * ww

    def rule(self, level: int = 0) -> tuple[np.ndarray, np.ndarray]:
        parts = [self.piece_rule(i, level) for i in range(len(self.pieces))]
        return np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts])

    def sample_points(self, spacing: float, cap: int = 4096) -> np.ndarray:
        """Points along the path with roughly the given spacing (plus all corners)."""
        total = self.length()
        per = max(2, int(math.ceil(total / max(spacing, 1e-12))))
        per = min(per, cap)
        pts = []
        for p in self.pieces:
            k = max(2, int(math.ceil(per * p.length() / total)) + 1)
            pts.append(p.point(np.linspace(0.0, 1.0, k)))
        return np.concatenate(pts)

    def winding_number(self, z: complex) -> float:
        """Numerical winding number of the contour around ``z``."""
        nodes, w = self.rule(3)
        return float(np.real(np.sum(w / (nodes - z)) / (2j * math.pi)))


@dataclass(frozen=True)
class SpectralCutConfig:
    c: float
    outer_radius: float
    sector_angle: float = math.pi / 4
    margin: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.c < self.outer_radius:
            raise CutInvalid("need 0 < c < R")
        if not 0.0 < self.sector_angle < math.pi / 2:
            raise CutInvalid("sector angle must lie in (0, π/2)")
        if self.margin <= 0.0:
            raise CutInvalid("margin must be positive")
        if self.delta0 >= self.c:
            raise CutInvalid("margin/2 must be smaller than the cut radius")

    @property
    def delta0(self) -> float:
        return 0.5 * self.margin


def _line_breaks(lo: float, hi: float, step: float) -> list[float]:
    """Geometrically graded breakpoints from lo to hi."""
    ys = [lo]
    width = step
    while ys[-1] + width < hi - 0.25 * width:
        ys.append(ys[-1] + width)
        width *= 2.0
    ys.append(hi)
    return ys


def _arc_pieces(center: complex, radius: float, a0: float, a1: float, max_span: float) -> list[Arc]:
    count = max(1, int(math.ceil(abs(a1 - a0) / max_span - 1e-12)))
    return Arc(center, radius, a0, a1).split(count)


def _contour_pieces(c: float, R: float, delta0: float, sign: int) -> list[Piece]:
    h = math.sqrt(c * c - delta0 * delta0)
    H = math.sqrt(R * R - delta0 * delta0)
    step = 0.5 * max(c, 0.5)
    ys = _line_breaks(h, H, step)
    pieces: list[Piece] = []
    if sign > 0:
        phi_r = math.atan2(H, delta0)
        phi_c = math.atan2(h, delta0)
        pieces += _arc_pieces(0j, R, -phi_r, phi_r, math.pi / 4)
        top = [complex(delta0, y) for y in reversed(ys)]
        pieces += [Segment(a, b) for a, b in zip(top[:-1], top[1:])]
        pieces += _arc_pieces(0j, c, phi_c, 2.0 * math.pi - phi_c, math.pi / 4)
        bottom = [complex(delta0, -y) for y in ys]
        pieces += [Segment(a, b) for a, b in zip(bottom[:-1], bottom[1:])]
    else:
        psi_r = math.atan2(H, -delta0)
        psi_c = math.atan2(h, -delta0)
        pieces += _arc_pieces(0j, R, psi_r, 2.0 * math.pi - psi_r, math.pi / 4)
        bottom = [complex(-delta0, -y) for y in reversed(ys)]
        pieces += [Segment(a, b) for a, b in zip(bottom[:-1], bottom[1:])]
        pieces += _arc_pieces(0j, c, -psi_c, psi_c - 2.0 * math.pi, math.pi / 4)
        top = [complex(-delta0, y) for y in ys]
        pieces += [Segment(a, b) for a, b in zip(top[:-1], top[1:])]
    return pieces


def circle_contour(center: complex, radius: float, pieces: int = 4, label: str = "") -> Contour:
    arcs = Arc(complex(center), float(radius), 0.0, 2.0 * math.pi).split(pieces)
    return Contour(tuple(arcs), label=label)


# ---------------------------------------------------------------------------
# Block structure and resolvent evaluation
# ---------------------------------------------------------------------------


def components(b: np.ndarray) -> list[np.ndarray]:
    """Index sets of the connected components of the sparsity graph of b."""
    return sparsity_components(b)


def _chunk(count: int, size: int, budget: int = 4_000_000) -> int:
    return max(1, min(count, budget // max(1, size * size)))


def _sigma_min_many(sub: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Smallest singular value of (z - sub) for each node z."""
    n = sub.shape[0]
    eye = identity(n)
    out = np.empty(nodes.size)
    step = _chunk(nodes.size, n)
    for s in range(0, nodes.size, step):
        z = nodes[s : s + step]
        stack = z[:, None, None] * eye - sub
        inv, ok = lu_solve_batch(stack)
        fro = np.sqrt(np.sum(np.abs(inv) ** 2, axis=(1, 2)))
        lower = np.where(ok, 1.0 / np.maximum(fro, 1e-300), 0.0)
        out[s : s + step] = lower
    return out


def validate_cut(b: ComplexMatrix, contour: Contour, margin: float) -> float:
    """Return min σ_min(z - b) over sample points, raising CutInvalid below margin."""
    b = np.asarray(b, dtype=np.complex128)
    nodes = np.concatenate([contour.rule(0)[0], contour.sample_points(margin, cap=256)])
    worst = math.inf
    for idx in components(b):
        sub = b[np.ix_(idx, idx)]
        lower = _sigma_min_many(sub, nodes)
        weak = np.nonzero(lower < margin)[0]
        if weak.size:
            eye = identity(sub.shape[0])
            exact = singular_values_batch(nodes[weak][:, None, None] * eye - sub)[:, -1]
            lower[weak] = exact
        worst = min(worst, float(lower.min()))
        if worst < margin:
            k = int(np.argmin(lower))
            raise CutInvalid(
                f"spectrum is within {worst:.3e} of the contour (margin {margin})",
                point=complex(nodes[k]),
                sigma_min=worst,
            )
    return worst


def _check_radius(b: np.ndarray, cfg: SpectralCutConfig) -> None:
    nb = op_norm(b) if b.size else 0.0
    if cfg.outer_radius <= 2.0 * nb:
        raise CutInvalid(f"outer radius {cfg.outer_radius} must exceed 2‖b‖ = {2 * nb:.4g}")


def build_positive_contour(b: ComplexMatrix, cfg: SpectralCutConfig, validate: bool = True) -> Contour:
    b = np.asarray(b, dtype=np.complex128)
    contour = Contour(tuple(_contour_pieces(cfg.c, cfg.outer_radius, cfg.delta0, +1)), label="positive")
    if validate:
        _check_radius(b, cfg)
        validate_cut(b, contour, cfg.margin)
    return contour


def build_negative_contour(b: ComplexMatrix, cfg: SpectralCutConfig, validate: bool = True) -> Contour:
    b = np.asarray(b, dtype=np.complex128)
    contour = Contour(tuple(_contour_pieces(cfg.c, cfg.outer_radius, cfg.delta0, -1)), label="negative")
    if validate:
        _check_radius(b, cfg)
        validate_cut(b, contour, cfg.margin)
    return contour


def default_cut(b: ComplexMatrix, c: float = 0.5, margin: float = 0.1) -> SpectralCutConfig:
    """A cut with R = 2‖b‖ + 1, convenient for constructed operators."""
    nb = op_norm(np.asarray(b, dtype=np.complex128))
    return SpectralCutConfig(c=c, outer_radius=max(2.0 * nb + 1.0, 2.0 * c + 1.0), margin=margin)


@dataclass
class QuadratureInfo:
    levels: list[int] = field(default_factory=list)
    nodes: int = 0
    change: float = 0.0


def _grouped_components(b: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Components of equal size stacked together: (indices (G, m), blocks (G, m, m))."""
    groups: dict[int, list[np.ndarray]] = {}
    for idx in components(b):
        groups.setdefault(idx.size, []).append(idx)
    out = []
    for size in sorted(groups):
        idx = np.stack(groups[size])
        out.append((idx, b[idx[:, :, None], idx[:, None, :]]))
    return out


def _piece_values(
    subs: list[tuple[np.ndarray, np.ndarray]],
    n: int,
    nodes: np.ndarray,
    weights: np.ndarray,
    funcs: Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    coeff = funcs(nodes) * (weights / (2j * math.pi))[:, None]
    out = np.zeros((coeff.shape[1], n, n), dtype=np.complex128)
    for idx, sub in subs:
        g, m = idx.shape
        eye = identity(m)
        step = _chunk(nodes.size * g, m * max(1, int(math.sqrt(coeff.shape[1])))) // g
        step = max(1, step)
        acc = np.zeros((coeff.shape[1], g, m, m), dtype=np.complex128)
        for s in range(0, nodes.size, step):
            z = nodes[s : s + step]
            mats = z[:, None, None, None] * eye - sub[None]
            inv, ok = lu_solve_batch(mats.reshape(-1, m, m))
            if not np.all(ok):
                bad = complex(np.repeat(z, g)[np.argmin(ok)])
                raise CutInvalid("contour node lies on the spectrum", point=bad)
            acc += np.einsum("kf,kgij->fgij", coeff[s : s + step], inv.reshape(z.size, g, m, m))
        # components are disjoint, so fancy-index accumulation has no collisions
        out[:, idx[:, :, None], idx[:, None, :]] += acc
    return out


def contour_integral(
    b: ComplexMatrix,
    contour: Contour,
    funcs: Callable[[np.ndarray], np.ndarray] | None = None,
    tol: float = QUAD_TOL,
    hard_tol: float = QUAD_HARD_TOL,
    max_doublings: int = MAX_DOUBLINGS,
) -> tuple[np.ndarray, QuadratureInfo]:
    """(1/2πi)∮ f_j(z)(z - b)⁻¹ dz for each column f_j of ``funcs(z)``.

    ``funcs`` maps a node vector of length K to a (K, F) array.  The result
    has shape (F, n, n).  Each piece doubles its node count until its
    contribution moves by at most ``tol`` relative to the running total.
    """
    b = np.asarray(b, dtype=np.complex128)
    n = b.shape[0]
    if funcs is None:
        funcs = lambda z: np.ones((z.size, 1), dtype=np.complex128)
    subs = _grouped_components(b)
    npieces = len(contour.pieces)
    current = []
    for i in range(npieces):
        z, w = contour.piece_rule(i, 0)
        current.append(_piece_values(subs, n, z, w, funcs))
    level = [0] * npieces
    done = [False] * npieces
    info = QuadratureInfo(nodes=npieces * contour.nodes_per_piece)
    changes = [math.inf] * npieces
    while not all(done):
        total = sum(current)
        scale = max(1.0, max_abs(total))
        for i in range(npieces):
            if done[i]:
                continue
            if level[i] >= max_doublings:
                done[i] = True
                continue
            z, w = contour.piece_rule(i, level[i] + 1)
            finer = _piece_values(subs, n, z, w, funcs)
            info.nodes += z.size
            changes[i] = max_abs(finer - current[i])
            current[i] = finer
            level[i] += 1
            if changes[i] <= tol * scale / npieces:
                done[i] = True
    total = sum(current)
    scale = max(1.0, max_abs(total))
    change = float(sum(changes))
    info.levels = level
    info.change = change
    if change > hard_tol * scale:
        raise QuadratureNotConverged(
            f"quadrature change {change:.2e} exceeds {hard_tol:.0e} after {max_doublings} doublings",
            change=change,
        )
    return total, info


# ---------------------------------------------------------------------------
# Idempotents
# ---------------------------------------------------------------------------


def _norm_at_most(a: np.ndarray, tol: float) -> tuple[bool, float]:
    f = frobenius(a)
    if f <= tol:
        return True, f
    v = op_norm(a)
    return v <= tol, v


@dataclass(frozen=True)
class Idempotent:
    mat: ComplexMatrix
    tol: float = 1e-8

    def __post_init__(self) -> None:
        m = np.asarray(self.mat, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch("idempotent must be square")
        ok, defect = _norm_at_most(m @ m - m, self.tol)
        if not ok:
            raise NotIdempotent(f"‖P² − P‖ = {defect:.2e} exceeds {self.tol:.0e}", defect=defect)
        object.__setattr__(self, "mat", m)

    @property
    def order(self) -> int:
        return self.mat.shape[0]

    def defect(self) -> float:
        return op_norm(self.mat @ self.mat - self.mat)

    def complement(self) -> "Idempotent":
        return Idempotent(identity(self.order) - self.mat, self.tol)

    def rank(self) -> int:
        # trace equals rank for an idempotent
        return int(round(float(np.real(np.trace(self.mat)))))

    def range(self) -> Subspace:
        left, _, _ = svd(self.mat)
        return Subspace(left[:, : self.rank()], self.order)

    def kernel(self) -> Subspace:
        return self.complement().range()


def sectorial_projection(b: ComplexMatrix, gamma_plus: Contour) -> Idempotent:
    """P₊(b) = (1/2πi)∮_{Γ₊}(λ − b)⁻¹ dλ."""
    vals, _ = contour_integral(b, gamma_plus)
    return Idempotent(vals[0])


def _exp_funcs(xs: Sequence[float]):
    xs = np.asarray(xs, dtype=float)
    return lambda z: np.exp(-np.outer(z, xs))


def q_many(b: ComplexMatrix, contour: Contour, xs: Sequence[float]) -> np.ndarray:
    """Stack of (1/2πi)∮ e^{−λx}(λ − b)⁻¹ dλ for every x in ``xs``."""
    vals, _ = contour_integral(b, contour, _exp_funcs(xs))
    return vals


def q_plus(b: ComplexMatrix, gamma_plus: Contour, x: float) -> ComplexMatrix:
    if x <= 0:
        raise PreconditionFailed("q_plus needs x > 0")
    return q_many(b, gamma_plus, [x])[0]


def q_minus(b: ComplexMatrix, gamma_minus: Contour, x: float) -> ComplexMatrix:
    if x >= 0:
        raise PreconditionFailed("q_minus needs x < 0")
    return q_many(b, gamma_minus, [x])[0]


def projection_along(onto: Subspace, along: Subspace, max_condition: float = 1e8) -> Idempotent:
    """Projection with range ``onto`` and kernel ``along``."""
    if onto.ambient_dim != along.ambient_dim:
        raise DimensionMismatch("subspaces live in different spaces")
    n = onto.ambient_dim
    if onto.dim + along.dim != n:
        raise NotTransversal(f"dimensions {onto.dim} + {along.dim} do not add up to {n}")
    stacked = np.hstack([onto.frame, along.frame])
    s = singular_values(stacked)
    if s[-1] <= 0 or s[0] / s[-1] > max_condition:
        cond = math.inf if s[-1] <= 0 else s[0] / s[-1]
        raise NotTransversal(f"stacked frame condition {cond:.3e} exceeds {max_condition:.0e}")
    try:
        coef = lu_solve(stacked, identity(n))
    except Singular as exc:
        raise NotTransversal("stacked frame is singular") from exc
    p = onto.frame @ coef[: onto.dim, :]
    return Idempotent(p)


def orthogonalize(p: Idempotent) -> Idempotent:
    """P(P + I − P*)⁻¹, the orthogonal projection onto the range of P."""
    m = p.mat
    n = m.shape[0]
    mm = m + identity(n) - adjoint(m)
    # X = P·M⁻¹  ⇔  M*·X* = P*
    x = adjoint(lu_solve(adjoint(mm), adjoint(m)))
    x = 0.5 * (x + adjoint(x)) if max_abs(x - adjoint(x)) <= 1e-9 else x
    herm = max_abs(x - adjoint(x))
    if herm > 1e-9:
        raise NotIdempotent(f"orthogonalized projection is not Hermitian ({herm:.2e})")
    out = Idempotent(x, p.tol)
    angles = principal_angles(p.range(), out.range())
    if angles and max(angles) > 1e-8:
        raise NotIdempotent("range changed during orthogonalization")
    return out


def weakly_sectorial_example(lambdas: Sequence[float], alpha: float) -> ComplexMatrix:
    """Block diagonal with blocks [[λ, −λ^{2−α}], [0, −λ]]."""
    lam = np.asarray(list(lambdas), dtype=float)
    if lam.size == 0 or np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
        raise PreconditionFailed("λ's must be positive and strictly ascending")
    if not 0.0 <= alpha <= 1.0:
        raise PreconditionFailed("alpha must lie in [0, 1]")
    n = lam.size
    out = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    for j, l in enumerate(lam):
        out[2 * j, 2 * j] = l
        out[2 * j, 2 * j + 1] = -(l ** (2.0 - alpha))
        out[2 * j + 1, 2 * j + 1] = -l
    return out


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    residual: float
    radii: tuple
    norms: tuple


def fit_loglog(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return float(slope), float(intercept), resid


@dataclass(frozen=True)
class GrowthFit:
    truncations: tuple
    norms: tuple
    exponent: float
    raw_exponent: float


def projection_norm_growth(
    alpha: float, truncations: Sequence[int] = (4, 8, 16, 32, 64), c: float = 0.25, margin: float = 0.1
) -> GrowthFit:
    """‖P₊‖ for the example with λₙ = n, n ≤ N, over a ladder of truncations N.

    ``exponent`` comes from log‖P₊‖ = p log N + a + b/N, which absorbs the
    leading pre-asymptotic term; ``raw_exponent`` is the plain log-log slope.
    """
    norms = []
    for n in truncations:
        b = weakly_sectorial_example(range(1, int(n) + 1), alpha)
        gp = build_positive_contour(b, default_cut(b, c=c, margin=margin))
        norms.append(op_norm(sectorial_projection(b, gp).mat))
    ns = np.asarray(truncations, dtype=float)
    ly = np.log(norms)
    design = np.stack([np.log(ns), np.ones_like(ns), 1.0 / ns], axis=1)
    coef = np.linalg.lstsq(design, ly, rcond=None)[0]
    raw, _, _ = fit_loglog(ns, norms)
    return GrowthFit(tuple(int(n) for n in truncations), tuple(norms), float(coef[0]), raw)


def resolvent_norm(b: np.ndarray, lam: complex) -> float:
    """‖(b − λ)⁻¹‖, evaluated blockwise; small blocks of equal size are batched."""
    worst = 0.0
    for idx, blocks in _grouped_components(np.asarray(b, dtype=np.complex128)):
        m = idx.shape[1]
        eye = identity(m)
        shifted = blocks - lam * eye
        try:
            if m <= 16:
                inv, ok = lu_solve_batch(shifted)
                if not ok.all():
                    raise Singular("singular block")
                worst = max(worst, float(singular_values_batch(inv)[:, 0].max()))
                continue
            for sub in shifted:
                worst = max(worst, op_norm(lu_solve(sub, eye)))
        except Singular as exc:
            raise Singular(f"λ = {lam} lies on the spectrum") from exc
    return worst


def resolvent_decay_probe(
    b: ComplexMatrix, ray_angle: float, radii: Sequence[float], min_decades: float = 2.0
) -> DecayFit:
    b = np.asarray(b, dtype=np.complex128)
    radii = [float(r) for r in radii]
    if min(radii) <= 0 or math.log10(max(radii) / min(radii)) < min_decades - 1e-12:
        raise PreconditionFailed(f"radii must be positive and span {min_decades} decades")
    direction = complex(math.cos(ray_angle), math.sin(ray_angle))
    norms = [resolvent_norm(b, r * direction) for r in radii]
    slope, intercept, resid = fit_loglog(radii, norms)
    return DecayFit(slope, intercept, resid, tuple(radii), tuple(norms))


def ray_decay_fit(b: ComplexMatrix, ray_angle: float, radii: Sequence[float]) -> DecayFit:
    return resolvent_decay_probe(b, ray_angle, radii, min_decades=0.0)


@dataclass(frozen=True)
class SmoothingReport:
    ladder: tuple
    norms: tuple
    ratio: float
    bounded: bool
    s: float
    m: int
    order: float


def collar_nodes(cutoff: SmoothCutoff, finest: float) -> tuple[np.ndarray, np.ndarray]:
    """Graded composite GL nodes on [0, support] resolving scales down to ``finest``."""
    a, b = cutoff.breakpoints()
    breaks = [0.0]
    x = min(finest, a if a > 0 else b / 4)
    while x < a:
        breaks.append(x)
        x *= 2.0
    if a > 0:
        breaks.append(a)
    breaks += list(np.linspace(a, b, 5)[1:])
    t, w = _gauss_legendre(GL_NODES)
    xs, ws = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi <= lo:
            continue
        xs.append(lo + (hi - lo) * t)
        ws.append((hi - lo) * w)
    return np.concatenate(xs), np.concatenate(ws)


def smoothing_norm(
    b: ComplexMatrix,
    weight_out: np.ndarray,
    weight_in: np.ndarray,
    m: int,
    cutoff: SmoothCutoff,
    cfg: SpectralCutConfig | None = None,
    finest: float | None = None,
) -> float:
    """sup_ξ (∫ x^{2m} φ² ‖W_out Q₊(x) W_in ξ‖² dx)^{1/2} over unit ξ."""
    b = np.asarray(b, dtype=np.complex128)
    if cfg is None:
        cfg = default_cut(b)
    gamma = build_positive_contour(b, cfg)
    nb = op_norm(b)
    xs, ws = collar_nodes(cutoff, finest if finest is not None else 0.25 / max(1.0, nb))
    qs = q_many(b, gamma, xs)
    dens = ws * xs ** (2 * m) * cutoff(xs) ** 2
    a = weight_out[None, :, None] * qs * weight_in[None, None, :]
    gram = np.einsum("k,kji,kjl->il", dens, a.conj(), a)
    vals, _ = hermitian_eigen(0.5 * (gram + adjoint(gram)))
    return math.sqrt(max(float(vals[-1]), 0.0))


def collar_smoothing_probe(
    b: Callable[[int], "object"],
    s: float,
    m: int,
    cutoff: SmoothCutoff,
    ladder: Sequence[int] = (4, 8, 16, 32),
    cut: Callable[[np.ndarray], SpectralCutConfig] | None = None,
) -> SmoothingReport:
    """Mixed-norm size of x ↦ x^m φ(x) Q₊(x) from order s to order s + m + ½.

    ``b`` maps a truncation N to a :class:`~collarlab.circleop.CircleOperator`.
    """
    from .circleop import mode_weights

    if s < -0.5:
        raise PreconditionFailed("need s >= -1/2")
    if len(ladder) < 4:
        raise PreconditionFailed("the truncation ladder needs at least four sizes")
    order = s + m + 0.5
    norms = []
    for n in ladder:
        op = b(int(n))
        mat = op.realized
        w_out = mode_weights(op.N, op.fiber_dim, order)
        w_in = mode_weights(op.N, op.fiber_dim, -s)
        cfg = cut(mat) if cut is not None else None
        norms.append(smoothing_norm(mat, w_out, w_in, m, cutoff, cfg))
    ratio = norms[-1] / norms[0] if norms[0] > 0 else math.inf
    return SmoothingReport(tuple(int(n) for n in ladder), tuple(norms), ratio, ratio <= 2.0, s, m, order)
