import numpy as np
import pytest
import scipy.linalg as sl
import scipy.sparse as sp

from conflab.eigenlin import (
    FactorizationError,
    TauAmbiguityError,
    count_below,
    default_tau,
    dense_eigenvalues,
    eigs,
    inertia,
    ldl_factor,
    negative_inertia,
)
from conflab.fem import assemble
from conflab.fieldexpr import Bump
from conflab.geometry import BoundaryDescriptor, Geometry, TrustedBase
from conflab.mesh import make_ball, make_box


def test_inertia_of_diagonal():
    A = sp.diags([-3.0, -1.0, 2.0, 5.0, 7.0]).tocsc()
    assert inertia(A) == inertia(A.toarray())
    i = inertia(A)
    assert (i.neg, i.zero, i.pos) == (2, 0, 3)


def test_singular_matrix_is_rejected():
    with pytest.raises(FactorizationError):
        ldl_factor(np.diag([1.0, 0.0, 2.0]))


@pytest.mark.parametrize("dense", [True, False])
def test_inertia_matches_eigenvalues_on_random_symmetric(dense):
    rng = np.random.default_rng(3)
    n = 60
    Q = np.linalg.qr(rng.normal(size=(n, n)))[0]
    lam = np.concatenate([-np.arange(1, 8), np.arange(1, n - 6)]).astype(float)
    A = Q @ np.diag(lam) @ Q.T
    A = 0.5 * (A + A.T)
    f = ldl_factor(A) if dense else ldl_factor(sp.csc_matrix(A))
    assert f.inertia.neg == 7


def test_count_below_on_pencil():
    m = make_box(4)
    p = assemble(m, Geometry(boundary=BoundaryDescriptor.box()), "dirichlet")
    w = dense_eigenvalues(p)
    for mu in (10.0, 50.0, 120.0):
        assert count_below(p.A, p.M, mu) == int(np.sum(w < mu))


def test_dense_and_sparse_paths_agree():
    m = make_box(10)
    p = assemble(m, Geometry(boundary=BoundaryDescriptor.box()), "neumann")
    d = eigs(p, 6, dense=True)
    s = eigs(p, 6, dense=False)
    np.testing.assert_allclose(s.values, d.values, rtol=1e-9, atol=1e-9)
    assert d.solver == "dense" and s.solver != "dense"
    assert np.max(s.residuals) < 1e-7


def test_lanczos_finds_ball_multiplicities():
    m = make_ball(divisions=14)
    p = assemble(m, Geometry(), "neumann")
    r = eigs(p, 7, dense=False)
    w = r.values
    assert abs(w[0]) < 1e-8
    assert np.ptp(w[1:4]) < 0.05 * w[1]
    assert w[4] > 1.2 * w[3]


def test_lanczos_with_deep_negative_eigenvalue():
    m = make_ball(divisions=12)
    G = Geometry(3, TrustedBase(scalar_curvature=Bump([0, 0, 0], 0.4, -3000.0)))
    p = assemble(m, G, "robin")
    w = dense_eigenvalues(p)[:3]
    s = eigs(p, 3, dense=False)
    np.testing.assert_allclose(s.values, w, rtol=1e-8)


def test_default_tau_and_negative_inertia():
    m = make_ball(divisions=6)
    G = Geometry(3, TrustedBase(scalar_curvature=Bump([0, 0, 0], 0.6, -900.0)))
    p = assemble(m, G, "robin")
    tau = default_tau(p.A, p.M)
    assert tau > 0
    ni = negative_inertia(p)
    w = dense_eigenvalues(p)
    assert ni.n_neg == int(np.sum(w < -tau)) >= 1
    assert tuple(ni) == (ni.n_neg, ni.n_zero)


def test_tau_ambiguity():
    A = np.diag([-1.0, 3e-7, 2.0])
    M = np.eye(3)
    with pytest.raises(TauAmbiguityError) as info:
        negative_inertia(A, M, tau=1e-7)
    assert info.value.values == pytest.approx([3e-7])
    ni = negative_inertia(A, M, tau=1e-7, check_ambiguity=False)
    assert (ni.n_neg, ni.n_zero) == (1, 0)
    ni = negative_inertia(np.diag([-1.0, 1e-10, 2.0]), M, tau=1e-7)
    assert (ni.n_neg, ni.n_zero) == (1, 1)


def test_eigenvectors_are_mass_orthonormal():
    m = make_ball(divisions=6)
    p = assemble(m, Geometry(), "robin")
    r = eigs(p, 4)
    V = r.vectors
    np.testing.assert_allclose(V.T @ (p.M @ V), np.eye(4), atol=1e-10)
    ref = sl.eigh(p.A.toarray(), p.M.toarray(), eigvals_only=True)[:4]
    np.testing.assert_allclose(r.values, ref, rtol=1e-10)
