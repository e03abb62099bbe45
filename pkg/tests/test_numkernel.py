import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from collarlab import numkernel as nk
from collarlab.errors import DimensionMismatch, Singular

from conftest import random_complex


def test_lu_solve_small_cases():
    v = np.array([3.0 + 1j, -2.0])
    assert np.allclose(nk.lu_solve(nk.identity(2), v), v)
    assert np.allclose(nk.lu_solve(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [1.0, 1.0])
    assert np.allclose(nk.lu_solve(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1.0, 2.0])), [2.0, 1.0])


def test_lu_solve_rejects_singular():
    with pytest.raises(Singular):
        nk.lu_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


def test_lu_solve_backward_error_over_many_trials(rng):
    for _ in range(200):
        n = int(rng.integers(1, 9))
        a = random_complex(rng, n, n)
        s = sla.svdvals(a)
        kappa = s[0] / s[-1]
        if kappa > 1e3:
            continue
        b = random_complex(rng, n, 2)
        x = nk.lu_solve(a, b)
        assert np.linalg.norm(a @ x - b) <= 1e-9 * kappa * np.linalg.norm(b)


def test_lu_batch_matches_single(rng):
    stack = random_complex(rng, 5, 3, 3) + 3 * np.eye(3)
    rhs = random_complex(rng, 5, 3, 2)
    x, _ = nk.lu_solve_batch(stack, rhs)
    for k in range(5):
        assert np.allclose(x[k], np.linalg.solve(stack[k], rhs[k]))


def test_orthonormalize_cases():
    e1 = np.array([[1.0], [0.0]])
    assert np.allclose(nk.orthonormalize(e1).frame, e1)
    f = nk.orthonormalize(np.array([[1.0], [1.0]])).frame
    assert np.allclose(np.abs(f), 1 / math.sqrt(2))
    dup = nk.orthonormalize(np.hstack([e1, e1]))
    assert dup.dim == 1 and dup.dropped == 1


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_orthonormalize_frame_invariant(n, k, seed):
    rng = np.random.default_rng(seed)
    a = random_complex(rng, n, k)
    u = nk.orthonormalize(a)
    assert u.dim == min(n, k)
    assert nk.max_abs(u.frame.conj().T @ u.frame - np.eye(u.dim)) <= 1e-10
    assert u.contains(a)


def test_subspace_rejects_non_orthonormal_frame():
    with pytest.raises(DimensionMismatch):
        nk.Subspace(np.array([[1.0], [1.0]]), 2)


def test_op_norm_cases():
    assert nk.op_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0)
    assert nk.op_norm(np.zeros((3, 3))) == 0.0
    assert nk.op_norm(np.array([[0.0, 2.0], [0.0, 0.0]])) == pytest.approx(2.0)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31))
def test_op_norm_agrees_with_scipy(n, k, seed):
    a = random_complex(np.random.default_rng(seed), n, k)
    assert nk.op_norm(a) == pytest.approx(sla.norm(a, 2), rel=1e-8)


def test_op_norm_blockwise_on_clustered_diagonal():
    # many nearly equal singular values made the power iteration stall once
    d = np.diag(1.0 + 1e-9 * np.arange(40)) + 0j
    assert nk.op_norm(d) == pytest.approx(1.0 + 39e-9, rel=1e-12)


def test_hermitian_eigen_cases():
    vals, _ = nk.hermitian_eigen(np.diag([1.0, -1.0]))
    assert np.allclose(vals, [-1.0, 1.0])
    vals, vecs = nk.hermitian_eigen(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(vals, [-1.0, 1.0])
    assert abs(abs(np.vdot(vecs[:, 0], [1, -1])) - math.sqrt(2)) < 1e-12
    assert np.allclose(nk.hermitian_eigen(nk.identity(3))[0], 1.0)


@given(st.integers(1, 8), st.integers(0, 2**31))
def test_hermitian_eigen_against_scipy(n, seed):
    a = random_complex(np.random.default_rng(seed), n, n)
    h = a + a.conj().T
    vals, vecs = nk.hermitian_eigen(h)
    assert np.allclose(vals, sla.eigvalsh(h), atol=1e-10)
    assert nk.max_abs(h @ vecs - vecs * vals) <= 1e-9 * max(1.0, nk.max_abs(h))


def test_signature_count_on_diagonal():
    d = np.diag([2.0, 1.0, -1.0, 1e-12, -3.0, 5.0])
    vals, _ = nk.hermitian_eigen(d)
    sig = int(np.sum(vals > 1e-9) - np.sum(vals < -1e-9))
    assert sig == 1


def test_principal_angles_cases():
    e1 = nk.orthonormalize(np.array([[1.0], [0.0]]))
    e2 = nk.orthonormalize(np.array([[0.0], [1.0]]))
    d = nk.orthonormalize(np.array([[1.0], [1.0]]))
    assert nk.principal_angles(e1, e1) == pytest.approx([0.0])
    assert nk.principal_angles(e1, e2) == pytest.approx([math.pi / 2])
    assert nk.principal_angles(e1, d) == pytest.approx([math.pi / 4])


@given(st.integers(2, 7), st.integers(0, 2**31))
def test_principal_angles_against_scipy(n, seed):
    rng = np.random.default_rng(seed)
    p, q = int(rng.integers(1, n)), int(rng.integers(1, n))
    u = nk.orthonormalize(random_complex(rng, n, p))
    v = nk.orthonormalize(random_complex(rng, n, q))
    ref = np.sort(sla.subspace_angles(u.frame, v.frame))
    assert np.allclose(nk.principal_angles(u, v), ref, atol=1e-9)


def test_intersection_and_complement():
    u = nk.orthonormalize(np.eye(4)[:, :3])
    v = nk.orthonormalize(np.eye(4)[:, 1:])
    w = nk.subspace_intersection(u, v)
    assert w.dim == 2
    assert nk.complement(u).dim == 1


def test_matrix_exp_cases():
    assert np.allclose(nk.matrix_exp(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(nk.matrix_exp(np.diag([math.log(2.0), 0.0])), np.diag([2.0, 1.0]))
    g = np.array([[0.0, -math.pi / 2], [math.pi / 2, 0.0]])
    assert np.allclose(nk.matrix_exp(g), [[0.0, -1.0], [1.0, 0.0]], atol=1e-14)


@given(st.integers(1, 6), st.floats(0.0, 5.0), st.integers(0, 2**31))
def test_matrix_exp_group_law(n, scale, seed):
    a = random_complex(np.random.default_rng(seed), n, n)
    a *= scale / max(sla.norm(a, 2), 1e-300)
    e = nk.matrix_exp(a)
    assert nk.max_abs(e @ nk.matrix_exp(-a) - np.eye(n)) <= 1e-8
    assert nk.max_abs(e - sla.expm(a)) <= 1e-9 * max(1.0, nk.max_abs(e))


def test_svd_reconstructs(rng):
    a = random_complex(rng, 6, 4)
    u, s, v = nk.svd(a)
    assert np.allclose((u * s) @ v.conj().T, a)
    assert np.allclose(s[: len(sla.svdvals(a))], sla.svdvals(a))


def test_null_space_and_rank():
    a = np.array([[1.0, 2.0], [2.0, 4.0]])
    assert nk.numerical_rank(a) == 1
    ns = nk.null_space(a)
    assert ns.dim == 1 and nk.max_abs(a @ ns.frame) < 1e-12


def test_hermitian_sqrt(rng):
    a = random_complex(rng, 4, 4)
    h = a @ a.conj().T + np.eye(4)
    r = nk.hermitian_sqrt(h)
    assert np.allclose(r @ r, h)
    assert np.allclose(nk.hermitian_inv_sqrt(h) @ r, np.eye(4))


def test_policy_override_is_scoped():
    base = nk.get_policy().rank_drop
    with nk.using_policy(rank_drop=1e-3):
        assert nk.get_policy().rank_drop == 1e-3
    assert nk.get_policy().rank_drop == base
