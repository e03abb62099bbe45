import math

import numpy as np
import pytest

from collarlab import calderon as K
from collarlab import collar as C
from collarlab.errors import PositivityFailed
from collarlab.numkernel import max_abs, op_norm, orthonormalize, principal_angles
from collarlab.sectorial import build_positive_contour, default_cut, sectorial_projection

from conftest import J_STD, SX, SZ, random_complex
from test_collar import variable_operator


def mode0_diag(length=1.0, grid=65):
    return C.collar_from_chebyshev(length, 0, 2, [J_STD], [(None, np.diag([1.0, -1.0]))], grid_points=grid)


@pytest.fixture(scope="module")
def dirac_pair():
    d = C.constant_collar(1.0, 4, 2, J_STD, -1j * SZ, 0.7 * SX, grid_points=129, selfadjoint=True)
    return d, K.calderon_pair(d, K.make_boundary_condition(d, "JtInv"))


def test_jtinv_condition_is_identity_after_pairing():
    d = mode0_diag()
    bc = K.make_boundary_condition(d, "JtInv")
    assert np.allclose(bc.J_sigma.conj().T @ bc.T, np.eye(4))
    assert bc.positive and bc.positivity_witness == pytest.approx(1.0)


def test_j_condition_positive():
    d = mode0_diag()
    bc = K.make_boundary_condition(d, "J")
    assert np.allclose(bc.J_sigma.conj().T @ bc.T, np.eye(4))


def test_flipped_sign_is_rejected():
    d = mode0_diag()
    t = -np.linalg.inv(d.boundary_J().conj().T)
    with pytest.raises(PositivityFailed):
        K.make_boundary_condition(d, "custom", custom=t)


def test_dual_condition():
    d = mode0_diag()
    bc = K.make_boundary_condition(d, "JtInv")
    dual = K.dual_condition(bc)
    assert np.allclose(dual.T, -bc.J_sigma.conj().T)
    twice = K.dual_condition(K.dual_condition(bc))
    assert max(principal_angles(K.condition_graph(twice), K.condition_graph(bc))) <= 1e-12


def test_shapiro_lopatinskii_positive_conditions(dirac_pair):
    d, _ = dirac_pair
    for choice in ("JtInv", "J", "UnitaryJ"):
        rep = K.shapiro_lopatinskii_check(d, K.make_boundary_condition(d, choice))
        assert rep.ok and rep.min_singular_value > 0.1


def test_double_zero_rhs_gives_zero(dirac_pair):
    d, pair = dirac_pair
    z = C.Section.zeros(d.grid, d.n)
    f = K.solve_double(d, pair.t_used, (z, z))
    assert max_abs(f[0].values) == 0.0 and max_abs(f[1].values) == 0.0


def test_double_mode0_closed_form():
    # u′ + diag(1,−1)u = J⁻¹g componentwise; f₋ solves the adjoint problem with the coupling
    d = mode0_diag(grid=129)
    bc = K.make_boundary_condition(d, "JtInv")
    solver = K.double_solver(d, bc)
    gp = C.Section.from_function(d.grid, lambda x: np.outer(np.ones_like(x), [1.0, 0.0]))
    gm = C.Section.zeros(d.grid, 2)
    fp, fm = solver.solve(gp, gm)
    assert solver.residual((fp, fm), (gp, gm)) <= 1e-8
    assert solver.coupling_residual((fp, fm)) <= 1e-9
    # J⁻¹(1,0) = (0,−1): second component solves v′ − v = −1, first is homogeneous u′ + u = 0
    x = d.grid
    a, b = fp.values[0]
    assert np.allclose(fp.values[:, 0], a * np.exp(-x), atol=1e-8)
    assert np.allclose(fp.values[:, 1], 1.0 + (b - 1.0) * np.exp(x), atol=1e-8)


def test_double_mode_decoupling(dirac_pair):
    d, pair = dirac_pair
    n, m, N = d.n, d.m, d.N
    rng = np.random.default_rng(3)
    a = np.zeros(n, dtype=complex)
    k = 2
    a[(k + N) * m : (k + N + 1) * m] = random_complex(rng, m)
    g = C.Section.from_function(d.grid, lambda x: np.outer(np.cos(x), a))
    fp, fm = K.double_solver(d, pair.t_used).solve(g, C.Section.zeros(d.grid, n))
    mask = np.ones(n, dtype=bool)
    mask[(k + N) * m : (k + N + 1) * m] = False
    assert max_abs(fp.values[:, mask]) <= 1e-12 and max_abs(fm.values[:, mask]) <= 1e-12


def test_calderon_mode0_range_and_symmetry():
    d = mode0_diag()
    pair = K.calderon_pair(d, K.make_boundary_condition(d, "JtInv"))
    e = math.e
    expected = orthonormalize(np.array([[1.0, 0.0], [0.0, 1.0], [1 / e, 0.0], [0.0, e]]))
    assert max(principal_angles(pair.c_plus.range(), expected)) <= 1e-9
    assert max_abs(pair.c_plus.mat - pair.c_plus.mat.conj().T) <= 1e-8


def test_calderon_algebra(dirac_pair):
    d, pair = dirac_pair
    cp, cm = pair.c_plus.mat, pair.c_minus.mat
    assert max_abs(cp @ cp - cp) <= 1e-8 and max_abs(cm @ cm - cm) <= 1e-8
    assert max_abs(cp + cm - np.eye(2 * d.n)) <= 1e-8
    assert max_abs(cp - cp.conj().T) <= 1e-8
    ang = principal_angles(pair.n_plus, orthonormalize(np.linalg.inv(pair.t_used.T) @ pair.n_minus.frame))
    assert abs(min(ang) - math.pi / 2) <= 1e-7


def test_range_independent_of_condition():
    d = variable_operator()
    ranges = [K.calderon_pair(d, K.make_boundary_condition(d, c)).c_plus.range() for c in ("J", "JtInv", "UnitaryJ")]
    for r in ranges[1:]:
        assert max(principal_angles(r, ranges[0])) <= 1e-7


def test_green_kernel_isotropy(dirac_pair):
    d, pair = dirac_pair
    us = K.poisson_apply_many(pair, d, pair.n_plus.frame)
    js = d.boundary_J()
    for u in us:
        for v in us:
            val = np.vdot(v.trace(), js @ u.trace())
            assert abs(val) <= 1e-7 * C.norm(u) * C.norm(v)


def test_poisson_on_range_and_kernel(dirac_pair):
    d, pair = dirac_pair
    xi = pair.n_plus.frame @ np.arange(1, pair.n_plus.dim + 1)
    u = K.poisson_apply(pair, d, xi)
    assert max_abs(u.trace() - xi) <= 1e-9
    assert C.residual(d, u) <= 1e-7
    along = pair.along().frame[:, 0]
    assert max_abs(K.poisson_apply(pair, d, along).values) <= 1e-9


def test_poisson_mode0_closed_form():
    d = mode0_diag()
    pair = K.calderon_pair(d, K.make_boundary_condition(d, "JtInv"))
    u = K.poisson_apply(pair, d, np.array([1.0, 0.0, 0.0, 0.0]))
    c = (pair.c_plus.mat @ np.array([1.0, 0.0, 0.0, 0.0]))
    x = d.grid
    assert np.allclose(u.values[:, 0], c[0] * np.exp(-x), atol=1e-9)
    assert np.allclose(u.values[:, 1], c[1] * np.exp(x), atol=1e-9)


def test_product_case_exponential_closeness():
    errs = []
    for L in (1.0, 2.0, 3.0, 4.0):
        d = C.constant_collar(L, 4, 2, J_STD, -1j * SZ, 0.7 * SX, grid_points=129, selfadjoint=True)
        b0 = d.B_at(0.0)
        pp = sectorial_projection(b0, build_positive_contour(b0, default_cut(b0, c=0.3, margin=0.2))).mat
        pr = K.calderon_pair(d, K.make_boundary_condition(d, "JtInv"))
        errs.append(op_norm(pr.c_plus.mat[: d.n, : d.n] - pp))
    slope = np.polyfit([1, 2, 3, 4], np.log(errs), 1)[0]
    # B₀ has spectrum ±√(k²+μ²); the gap between the two halves is 2μ
    assert slope == pytest.approx(-1.4, rel=0.1)


@pytest.mark.parametrize("lam", [0.3, 0.7])
def test_product_case_mode_block_closed_form(lam):
    # range C₊ = span{(e₁, e^{−λℓ}e₁), (e₂, e^{λℓ}e₂)}, orthogonal, so the
    # Σ₀ block misses P₊ = diag(1, 0) by exactly 1/(1 + e^{2λℓ})
    errs = []
    for L in (1.0, 2.0, 3.0, 4.0, 8.0):
        d = C.collar_from_chebyshev(L, 0, 2, [J_STD], [(None, np.diag([lam, -lam]))], grid_points=129)
        pair = K.calderon_pair(d, K.make_boundary_condition(d, "JtInv"))
        err = op_norm(pair.c_plus.mat[:2, :2] - np.diag([1.0, 0.0]))
        assert err == pytest.approx(1 / (1 + math.exp(2 * lam * L)), rel=1e-7)
        errs.append(err)
    # log(1/err − 1) is exactly linear with slope 2λ; log err only gets there as ℓ grows
    logit = np.polyfit([1, 2, 3, 4, 8], np.log(1 / np.array(errs) - 1), 1)[0]
    assert logit == pytest.approx(2 * lam, rel=1e-6)
    local = np.diff(np.log(errs[:4]))
    assert np.all(np.diff(local) < 0) and np.all(local > -2 * lam)


def test_wellposed_resolvent(dirac_pair):
    d, pair = dirac_pair
    p = pair.c_plus.mat
    z = C.Section.zeros(d.grid, d.n)
    assert max_abs(K.wellposed_resolvent(d, p, z).values) == 0.0
    rng = np.random.default_rng(9)
    a, b = random_complex(rng, d.n), random_complex(rng, d.n)
    g = C.Section.from_function(d.grid, lambda x: np.outer(np.sin(x), a))
    h = C.Section.from_function(d.grid, lambda x: np.outer(np.cos(2 * x), b))
    rp = K.resolvent_solver(d, p, 1j)
    rm = K.resolvent_solver(d, p, -1j)
    u = rp.solve(g)
    assert C.residual(d, u, g, 1j) <= 1e-7
    assert max_abs(p @ u.trace()) <= 1e-9
    q = C.inner(C.apply_high(d, u), u)
    assert abs(q.imag) <= 1e-7 * abs(q)
    lhs = C.inner(u, h)
    rhs = C.inner(g, rm.solve(h))
    assert abs(lhs - rhs) <= 1e-7 * max(1.0, abs(lhs))


def test_trace_extension_has_requested_trace():
    d = mode0_diag()
    xi = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(K.trace_extension(d, xi).trace(), xi)
