import numpy as np
import pytest
import scipy.linalg as sla

from collarlab import calderon as K
from collarlab import cobordism as B
from collarlab import collar as C
from collarlab.circleop import CircleOperator
from collarlab.errors import CutInvalid, GradingUnbalanced, PreconditionFailed, RelationViolated
from collarlab.numkernel import max_abs, orthonormalize, principal_angles
from collarlab.sectorial import weakly_sectorial_example

from conftest import J_STD, SX, SZ, random_complex


def unit(n, *idx):
    return orthonormalize(np.eye(n, dtype=complex)[:, list(idx)])


def test_split_diagonal():
    s = B.spectral_split(np.diag([1.0, -1.0, 0.0]))
    assert max(principal_angles(s.w_greater, unit(3, 0))) <= 1e-9
    assert max(principal_angles(s.w_less, unit(3, 1))) <= 1e-9
    assert max(principal_angles(s.w_zero, unit(3, 2))) <= 1e-9
    assert s.sum_defect <= 1e-8 and s.product_defect <= 1e-8


def test_split_jordan_block_on_imaginary_axis(rng):
    v = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    jb = np.array([[1j, 1, 0, 0], [0, 1j, 0, 0], [0, 0, 5, 0], [0, 0, 0, -4]])
    b = v @ jb @ np.linalg.inv(v)
    s = B.spectral_split(b, c=3, strip=1.0)
    assert (s.w_zero.dim, s.w_greater.dim, s.w_less.dim) == (2, 1, 1)
    gen = orthonormalize(v[:, :2])
    assert max(principal_angles(s.w_zero, gen)) <= 1e-7


def test_split_rejects_eigenvalue_in_strip():
    with pytest.raises(CutInvalid):
        B.spectral_split(np.diag([2.0, -1.0, 0.05 + 1.0j]), c=0.5)


def test_split_weakly_sectorial_has_no_zero_part():
    s = B.spectral_split(weakly_sectorial_example([1.0, 2.0, 4.0], 0.5))
    assert s.w_zero.dim == 0 and s.w_greater.dim == 3 and s.w_less.dim == 3


def test_coisotropy_examples():
    rep = B.coisotropy_check(B.spectral_split(np.diag([1.0, -1.0])), J_STD)
    assert rep.ok
    rep0 = B.coisotropy_check(B.spectral_split(np.zeros((2, 2))), J_STD)
    assert rep0.ok
    with pytest.raises(RelationViolated):
        B.coisotropy_check(B.spectral_split(np.diag([1.0, 2.0])), J_STD)


def anticommuting_pair(rng, pairs, singles):
    """(j, b) with jb Hermitian, transported from a block model by a congruence.

    Blocks are (J, aσ_z) with 1 ≤ a ≤ 2 and (±i, it) with |t| ≤ 0.3, so the
    spectrum sits well away from every contour.
    """
    js, bs = [], []
    for _ in range(pairs):
        js.append(J_STD)
        bs.append(rng.uniform(1.0, 2.0) * SZ)
    for _ in range(singles):
        js.append(np.array([[1j * rng.choice([-1.0, 1.0])]]))
        bs.append(np.array([[1j * rng.uniform(-0.3, 0.3)]]))
    jt, bt = sla.block_diag(*js).astype(complex), sla.block_diag(*bs).astype(complex)
    n = jt.shape[0]
    S = np.eye(n) + 0.3 * random_complex(rng, n, n) / np.sqrt(n)
    si = np.linalg.inv(S)
    return si.conj().T @ jt @ si, S @ bt @ si


def test_coisotropy_random_pairs():
    rng = np.random.default_rng(617)
    for _ in range(100):
        j, b = anticommuting_pair(rng, int(rng.integers(0, 3)), int(rng.integers(0, 3)) + 1)
        split = B.spectral_split(b, c=0.5, margin=0.05)
        assert B.coisotropy_check(split, j).ok


def test_signature_zero_when_b_vanishes():
    d = C.constant_collar(1.0, 0, 2, J_STD, None, None, grid_points=33, selfadjoint=True)
    r = B.cobordism_signature(d)
    assert r.w_zero_dim == 2 and r.signature == 0


def test_signature_vacuous_without_zero_part(dirac):
    r = B.cobordism_signature(dirac)
    assert r.w_zero_dim == 0 and r.signature == 0


def test_signature_four_dimensional_kernel():
    j = sla.block_diag(J_STD, J_STD)
    g = -1j * sla.block_diag(SZ, SZ)
    d = C.constant_collar(1.0, 3, 4, j, g, None, grid_points=33, selfadjoint=True)
    r = B.cobordism_signature(d, scan=True)
    assert r.w_zero_dim == 4 and r.signature == 0
    assert r.scan.w_zero is not None and r.scan.w_zero.dim == 4


def test_signature_needs_selfadjoint_flag():
    d = C.constant_collar(1.0, 0, 2, J_STD, None, None, grid_points=33)
    with pytest.raises(PreconditionFailed):
        B.cobordism_signature(d)


def test_range_lagrangian_with_reflection(dirac):
    pair = K.calderon_pair(dirac, K.make_boundary_condition(dirac, "Reflection"))
    rep = B.range_lagrangian(pair, dirac)
    assert rep.ok and rep.dim == dirac.n


def test_grading_closed_forms():
    r = B.grading_split_index(SX, J_STD)
    assert r.b_plus.shape == (1, 1) and abs(r.b_plus[0, 0]) == pytest.approx(1.0)
    assert r.index == 0
    r0 = B.grading_split_index(np.zeros((2, 2)), J_STD)
    assert (r0.kernel_dim, r0.cokernel_dim, r0.index) == (1, 1, 0)
    rs = B.grading_split_index(sla.block_diag(SX, np.zeros((2, 2))), sla.block_diag(J_STD, J_STD))
    assert rs.index == 0 and rs.kernel_dim == 1


def test_grading_unbalanced_and_relations():
    with pytest.raises(GradingUnbalanced):
        B.grading_split_index(np.zeros((2, 2)), 1j * np.eye(2))
    with pytest.raises(RelationViolated):
        B.grading_split_index(np.eye(2), J_STD)


def test_grading_operator_is_involution(rng):
    a = random_complex(rng, 4, 4)
    j = a - a.conj().T
    alpha = B.grading_operator(j)
    assert max_abs(alpha @ alpha - np.eye(4)) <= 1e-9
    assert max_abs(alpha - alpha.conj().T) <= 1e-9


def test_circle_grading_index(dirac):
    r = B.circle_grading_index(dirac.circle_B(0.0), J_STD)
    assert r.index == 0 and not r.inconclusive


def test_circle_grading_flags_kernel_in_guard_band():
    # the symbol vanishes on the top mode only, so its kernel sits in the guard band
    N = 4
    k = np.arange(-N, N + 1)
    diag = np.where(np.abs(k) == N, 0.0, 1.0 + np.abs(k))
    realized = np.kron(np.diag(diag), SX).astype(complex)
    op = CircleOperator.from_matrix(realized, N, 2)
    r = B.circle_grading_index(op, J_STD)
    assert r.inconclusive and r.guard_mass > 1e-6


def test_signature_flow_constant_family():
    j = 1j * np.diag([1.0, -1.0, 1.0])
    rep = B.signature_flow_experiment(lambda t: (j, np.zeros((3, 3))), np.linspace(0, 1, 5))
    assert rep.constant and set(rep.signatures) == {-1}


def test_signature_flow_rotating_family(rng):
    j0 = 1j * sla.block_diag(SZ, np.eye(1))
    b0 = sla.block_diag(SX, np.zeros((1, 1)))
    h = random_complex(rng, 3, 3)
    h = 0.5 * (h + h.conj().T)

    def family(t):
        u = sla.expm(1j * t * h)
        return u @ j0 @ u.conj().T, u @ b0 @ u.conj().T

    rep = B.signature_flow_experiment(family, np.linspace(0, 2, 9))
    assert rep.constant and set(rep.signatures) == {-1}


def test_signature_flow_symmetric_crossing():
    j = 1j * sla.block_diag(SZ, np.eye(1))

    def family(t):
        return j, sla.block_diag(t * SX, np.zeros((1, 1)))

    ts = np.concatenate([np.linspace(-1, 1, 21), [5e-8]])
    rep = B.signature_flow_experiment(family, ts)
    assert rep.constant
    assert rep.kernel_dims[10] == 3 and rep.kernel_dims[0] == 1
    assert rep.indeterminate[-1]
    assert all(s == rep.signatures[0] for s, f in zip(rep.signatures, rep.indeterminate) if not f)
