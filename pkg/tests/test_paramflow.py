import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from collarlab import calderon as K
from collarlab import collar as C
from collarlab import paramflow as P
from collarlab.circleop import fourier_multiplier, order_multiplier
from collarlab.cutoffs import SmoothCutoff
from collarlab.errors import CNearSpectrum, QTooLarge
from collarlab.numkernel import max_abs

from conftest import J_STD, SX, SZ, random_complex


def ladder(N):
    return fourier_multiplier(lambda k: np.diag([1.0 + abs(k), -(1.0 + abs(k))]), N, 2)


def random_hermitian(rng, n):
    a = random_complex(rng, n, n)
    return a + a.conj().T


@pytest.fixture(scope="module")
def rot():
    return P.rotation_family()


def test_riesz_map_examples():
    assert max_abs(P.riesz_map(np.zeros((2, 2)))) == 0.0
    assert np.allclose(P.riesz_map(np.diag([0.0, 1.0])), np.diag([0.0, 1 / math.sqrt(2)]))
    assert P.riesz_map(np.diag([1e6]))[0, 0].real == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_riesz_functional_calculus(seed, n):
    b = random_hermitian(np.random.default_rng(seed), n)
    f = P.riesz_map(b)
    assert max_abs(f @ f + np.linalg.inv(np.eye(n) + b @ b) - np.eye(n)) <= 1e-9


def test_riesz_lipschitz_equal_and_scalar():
    b = np.diag([0.0, 1.0])
    assert P.riesz_lipschitz_check(b, b).lhs == 0.0
    eps = 0.05
    rep = P.riesz_lipschitz_check(b, np.diag([eps, 1.0]))
    assert rep.q == pytest.approx(2 * eps)
    assert rep.lhs == pytest.approx(eps / math.sqrt(1 + eps**2))
    assert rep.rhs == pytest.approx(2 * eps * (1 + (1 + 2 * eps) / (1 - 2 * eps)))
    assert rep.ok


def test_riesz_lipschitz_rejects_large_q():
    with pytest.raises(QTooLarge):
        P.riesz_lipschitz_check(np.zeros((1, 1)), np.ones((1, 1)))


def test_riesz_lipschitz_random_trials():
    rng = np.random.default_rng(715)
    passed = 0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        b, e = random_hermitian(rng, n), random_hermitian(rng, n)
        q1 = P.riesz_q(b, b + e)
        # q is homogeneous in the perturbation, so rescale to a target q ≤ 0.3
        e = e * rng.uniform(0.01, 0.3) / q1
        rep = P.riesz_lipschitz_check(b, b + e)
        assert rep.q <= 0.3 + 1e-12
        passed += rep.ok
    assert passed == 100


def test_spectral_projection_above():
    assert np.allclose(P.spectral_projection_above(np.diag([-1.0, 1.0]), 0.0).mat, np.diag([0.0, 1.0]))
    assert np.allclose(P.spectral_projection_above(np.diag([1.0, 2.0, 3.0]), 2.5).mat, np.diag([0, 0, 1.0]))
    with pytest.raises(CNearSpectrum):
        P.spectral_projection_above(np.diag([1.0, 2.0]), 2.0)


def test_spectral_projection_conjugated(rng):
    u = np.linalg.qr(random_complex(rng, 5, 5))[0]
    vals = np.array([-2.0, -0.5, 0.4, 1.5, 3.0])
    b = u @ np.diag(vals) @ u.conj().T
    oracle = u[:, 3:] @ u[:, 3:].conj().T
    assert max_abs(P.spectral_projection_above(b, 1.0).mat - oracle) <= 1e-9


def test_pair_metrics_zero_and_T_scaling(rot):
    p = rot.pair(0.3)
    assert P.pair_metrics(p, p).d_str == 0.0
    d, bc = p
    eps = 0.01
    bc2 = K.BoundaryConditionT(bc.T * (1 + eps), bc.J_sigma, "scaled", 0, True)
    m = P.pair_metrics(p, (d, bc2))
    assert m.n0 == pytest.approx(eps * P.boundary_norm(bc.T, 0.5, 0.5, d.N, d.m), rel=1e-12)
    assert m.d_str == pytest.approx(m.n0 + m.n1, rel=1e-14)


def test_pair_metrics_identity_shift_of_B():
    eps = 0.01
    d1 = C.constant_collar(1.0, 4, 2, J_STD, -1j * SZ, 0.7 * SX, grid_points=33)
    d2 = C.constant_collar(1.0, 4, 2, J_STD, -1j * SZ, 0.7 * SX + eps * np.eye(2), grid_points=33)
    bc = K.make_boundary_condition(d1, "JtInv")
    m = P.pair_metrics((d1, bc), (d2, bc))
    # the zero mode dominates (1+|k|)⁻¹ and both boundary blocks carry ε
    assert m.terms["B0"] == pytest.approx(eps, rel=1e-9)


def test_pair_metrics_is_a_metric(rot):
    pairs = [rot.pair(z) for z in (0.3, 0.35, 0.5)]
    for a in pairs:
        for b in pairs:
            assert P.pair_metrics(a, b).d_str == pytest.approx(P.pair_metrics(b, a).d_str, rel=1e-12)
            for c in pairs:
                lhs = P.pair_metrics(a, c).d_str
                assert lhs <= P.pair_metrics(a, b).d_str + P.pair_metrics(b, c).d_str + 1e-12


def test_resolvent_probe_zero_perturbation():
    b = ladder(8)
    r = P.resolvent_perturbation_probe(b, np.zeros_like(b), 0.0, 0.0, fiber_dim=2)
    assert max(r.norms) == 0.0


@pytest.mark.parametrize("s,s2", [(0.0, 0.0), (0.0, 0.5), (-0.25, 0.25), (0.0, 0.25)])
def test_resolvent_probe_slopes(s, s2):
    N = 32
    b = ladder(N)
    v = 0.1 * fourier_multiplier(lambda k: (1.0 + abs(k)) * np.eye(2), N, 2)
    r = P.resolvent_perturbation_probe(b, v, s, s2, fiber_dim=2, lambdas=P.default_probe_lambdas(hi=10))
    assert r.target_slope == -1.0 + s2 - s
    assert abs(r.slope - r.target_slope) <= 0.1 and r.ok


def test_resolvent_probe_bounded_perturbation():
    # a bounded V gains an extra power: the difference is V R² to leading order
    b = ladder(16)
    r = P.resolvent_perturbation_probe(b, 0.1 * np.eye(b.shape[0]), 0.0, 0.0, fiber_dim=2)
    assert r.ok and r.slope == pytest.approx(-2.0, abs=0.1)


def test_stability_probe_linear_in_eps():
    N = 8
    b = ladder(N)
    v = fourier_multiplier(lambda k: (1.0 + abs(k)) * np.array([[0.0, 0.2], [0.2, 0.0]]), N, 2)
    eps = (0.0, 0.04, 0.02, 0.01)
    rep = P.sectorial_stability_probe(b, v, 0.0, 0.25, SmoothCutoff(0.5, 1.0), eps=eps, fiber_dim=2)
    assert rep.norms[0] == 0.0
    for big, small in zip(rep.norms[1:-1], rep.norms[2:]):
        assert small / big == pytest.approx(0.5, rel=0.15)
    assert rep.ok and rep.constant > 0


def test_lower_order_closed_form_and_intercept():
    N = 8
    b = ladder(N)
    v = order_multiplier(0.5, SX, N)
    rep = P.lower_order_projection_stability(b, v, 0.5, fiber_dim=2)
    assert rep.ok and abs(rep.intercept) <= 1e-8
    assert all(x < y for x, y in zip(rep.diffs, rep.diffs[1:]))
    for t, got in zip(rep.scales, rep.diffs):
        worst = 0.0
        for k in range(2 * N + 1):
            blk = b[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] + t * v[2 * k : 2 * k + 2, 2 * k : 2 * k + 2]
            # rotation angle of the positive eigenvector of [[a, w], [w, −a]]
            worst = max(worst, math.sin(0.5 * math.atan2(abs(blk[0, 1]), blk[0, 0].real)))
        assert got == pytest.approx(worst, rel=1e-6)


def test_lower_order_zero_scale():
    b = ladder(4)
    rep = P.lower_order_projection_stability(b, order_multiplier(0.5, SX, 4), 0.5, scales=(0.0, 1e-5), fiber_dim=2)
    assert rep.diffs[0] == 0.0


def test_domain_transport_identity_and_audit(rot):
    d, bc = rot.pair(0.3)
    e = P.TraceExtension(d)
    rng = np.random.default_rng(0)

    def section():
        a = rng.standard_normal(d.n) + 0j
        return C.Section.from_function(d.grid, lambda x: np.outer(np.cos(x), a))

    f = (section(), section())
    same = P.domain_transport(bc.T, bc.T, e)(f)
    assert max_abs(same[1].values - f[1].values) == 0.0
    rep = P.transport_audit(d, bc.T, bc.T * 1.1, bc.T * 0.9 + 0.01, [(section(), section()) for _ in range(3)])
    assert rep.ok
    assert rep.cocycle <= 1e-10 and rep.inverse <= 1e-10 and rep.condition_defect <= 1e-9


def test_trace_extension_trace():
    d = C.constant_collar(1.0, 2, 2, J_STD, -1j * SZ, None, grid_points=65)
    xi = np.arange(1, 2 * d.n + 1, dtype=complex)
    assert max_abs(P.TraceExtension(d)(xi).trace() - xi) <= 1e-12


def test_continuity_constant_family():
    base = P.rotation_family()
    fam = P.OperatorFamily(base.build, [0.3, 0.3, 0.3], True, 0.5, "constant")
    for target in P.TARGETS:
        rep = P.continuity_experiment(fam, target)
        assert all(r.diff == 0.0 and r.d_str == 0.0 for r in rep.rows)


def test_continuity_rotation_coarse():
    fam = P.rotation_family(steps=[2.0 ** -j for j in range(1, 6)])
    rep = P.continuity_experiment(fam, "calderon")
    assert rep.monotone and not rep.flagged and not rep.errors


def test_mass_family_flags_crossing():
    fam = P.mass_family([0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6])
    rep = P.continuity_experiment(fam, "calderon")
    assert rep.flagged[0] == 0.5
    assert P.cut_crossing_flag(fam) == 0.5
