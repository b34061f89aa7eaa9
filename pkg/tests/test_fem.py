import numpy as np
import pytest

from conflab.fem import (
    assemble,
    assemble_forms,
    covariance_residual,
    integrate_boundary,
    integrate_interior,
    rayleigh_quotient,
)
from conflab.fieldexpr import parse
from conflab.geometry import BoundaryDescriptor, Geometry
from conflab.mesh import make_ball, make_box

CUBE = Geometry(boundary=BoundaryDescriptor.box())


def test_pairs_are_symmetric_and_mass_positive():
    m = make_ball(divisions=6)
    G = Geometry().push_conformal(parse("0.2*x*y"))
    for bc in ("robin", "neumann", "dirichlet"):
        p = assemble(m, G, bc, 0.5)
        assert abs(p.A - p.A.T).max() == 0
        assert abs(p.M - p.M.T).max() == 0
        p.check()
    d = assemble(m, G, "dirichlet")
    assert d.size == len(m.interior_vertices)


def test_constants_span_flat_cube_kernel():
    m = make_box(4)
    p = assemble(m, CUBE, "robin", 0.0)
    one = np.ones(m.n_vertices)
    assert np.abs(p.A @ one).max() < 1e-13
    assert rayleigh_quotient(m, CUBE, one, p) == pytest.approx(0.0, abs=1e-13)


def test_mass_and_boundary_mass_totals():
    m = make_box(3)
    F = assemble_forms(m, CUBE)
    one = np.ones(m.n_vertices)
    assert one @ F.mass @ one == pytest.approx(1.0, rel=1e-13)
    assert one @ F.bmass @ one == pytest.approx(6.0, rel=1e-13)


def test_conformal_measure_scaling():
    m = make_box(2)
    c = 0.3
    G = CUBE.push_conformal(parse(repr(c)))
    assert integrate_interior(m, G, 1.0) == pytest.approx(np.exp(3 * c))
    assert integrate_boundary(m, G, 1.0) == pytest.approx(6 * np.exp(2 * c))
    # constant factor: pair scales as A -> e^{c} A, M -> e^{3c} M
    A0 = assemble(m, CUBE, "neumann").A
    A1 = assemble(m, G, "neumann").A
    np.testing.assert_allclose(A1.toarray(), np.exp(c) * A0.toarray(), atol=1e-12)


def test_ball_robin_rayleigh_of_constant():
    # int (1/8)R + (1/4) h over the sphere with h = 2: 0.5 * area / volume -> 1.5
    vals = []
    for d in (4, 8, 16):
        m = make_ball(divisions=d)
        vals.append(rayleigh_quotient(m, Geometry(), np.ones(m.n_vertices)))
    assert abs(vals[-1] - 1.5) < abs(vals[0] - 1.5)
    assert vals[-1] == pytest.approx(1.5, rel=0.02)


def test_integrators_accept_vertex_vectors_and_callables():
    m = make_box(4)
    x = m.vertices[:, 0]
    assert integrate_interior(m, CUBE, x) == pytest.approx(0.5, rel=1e-13)
    assert integrate_interior(m, CUBE, parse("x^2"), degree=2) == pytest.approx(1 / 3, rel=1e-12)
    assert integrate_boundary(m, CUBE, lambda p: p[:, 2]) == pytest.approx(3.0, rel=1e-13)


def test_covariance_residual_converges():
    om = parse("0.3*sin(x+0.5*y)+0.2*z^2")
    f = parse("1+0.5*x*y+0.3*cos(z)")
    r = [covariance_residual(make_ball(divisions=d), Geometry(), om, f)["dual_h1"] for d in (4, 8)]
    assert r[1] < r[0] / 1.5
