import numpy as np
import pytest

from conflab.conformal import (
    PotentialFamily,
    TuningError,
    friedlander_counts,
    kernel_of,
    robin_family,
    steklov,
    tune_to_kernel,
)
from conflab.eigenlin import eigs
from conflab.fem import assemble, assemble_forms
from conflab.fieldexpr import Bump, parse
from conflab.geometry import BoundaryDescriptor, Geometry
from conflab.mesh import make_ball, make_box

WELL = Bump([0.1, 0.05, 0.0], 0.6, -1.0)


@pytest.fixture(scope="module")
def ball8():
    return make_ball(divisions=8)


def test_steklov_ball_low_modes(ball8):
    S = steklov(ball8, Geometry())
    assert not S.hat
    w = S.spectrum()
    assert w[0] == pytest.approx(0.5, rel=0.03)
    np.testing.assert_allclose(w[1:4], 1.5, rtol=0.03)
    assert np.allclose(S.D, S.D.T, rtol=1e-10, atol=1e-12 * np.abs(S.D).max())


def test_steklov_negative_count_under_constant_factor(ball8):
    F = PotentialFamily(ball8, Geometry(), WELL)
    G = F.geometry(300.0)
    base = steklov(ball8, G)
    pushed = steklov(ball8, G.push_conformal(parse("0.4")))
    assert base.negative_count() == pushed.negative_count() == 1
    np.testing.assert_allclose(pushed.spectrum()[:4] * np.exp(0.4), base.spectrum()[:4], rtol=1e-9)


def test_kernel_of_flat_cube_and_ball():
    cube = make_box(4)
    p = assemble(cube, Geometry(boundary=BoundaryDescriptor.box()), "robin")
    K = kernel_of(p)
    assert K.shape[1] == 1
    np.testing.assert_allclose(K[:, 0] / K[0, 0], 1.0, atol=1e-10)
    assert kernel_of(assemble(make_ball(divisions=6), Geometry(), "robin")).shape[1] == 0


def test_large_robin_parameter_approaches_dirichlet(ball8):
    F = assemble_forms(ball8, Geometry())
    lam_d = eigs(F.operator("dirichlet"), 1).values[0]
    fam = robin_family(ball8, Geometry(), [1e3], forms=F)
    assert fam.curves[0, 0] == pytest.approx(lam_d, rel=0.05)


def test_robin_curves_increase(ball8):
    fam = robin_family(ball8, Geometry(), np.linspace(-2, 6, 6), k=3)
    for j in range(3):
        assert fam.strictly_increasing(j)


def test_tuning_bracket_and_kernel(ball8):
    fam = PotentialFamily(ball8, Geometry(), WELL)
    tr = tune_to_kernel(ball8, fam, 1, t_start=50.0)
    lo, hi = tr.bracket_values
    assert lo * hi < 0
    assert abs(tr.value) <= 1e-9 * max(1.0, abs(lo), abs(hi))
    assert kernel_of(fam.pair(tr.t), tau=1e-7).shape[1] == 1


def test_tuning_without_sign_change_fails(ball8):
    fam = PotentialFamily(ball8, Geometry(), WELL)
    with pytest.raises(TuningError):
        tune_to_kernel(ball8, fam, 1, bracket=(0.0, 1.0))


def test_friedlander_examples(ball8):
    assert friedlander_counts(ball8, Geometry()).as_tuple() == (0, 0, 0, 0, True)
    fam = PotentialFamily(ball8, Geometry(), WELL)
    tr = tune_to_kernel(ball8, fam, 1, bc="robin", t_start=50.0)
    td = tune_to_kernel(ball8, fam, 1, bc="dirichlet", t_start=50.0)
    assert tr.t < td.t
    mid = 0.5 * (tr.t + td.t)
    fc = friedlander_counts(ball8, fam.geometry(mid), forms=fam.forms(mid))
    assert fc.as_tuple() == (1, 0, 0, 1, True)
    fc = friedlander_counts(ball8, fam.geometry(td.t), forms=fam.forms(td.t))
    assert fc.hat and fc.dim_ker_D == 1 and fc.identity_holds


def test_kernel_covariance_rayleigh_quotient():
    """Transported kernels are near-kernels of the deformed problem, O(h^2)."""
    om = parse("0.3*sin(x+0.5*y)+0.2*z^2")
    rq = []
    hs = []
    for d in (6, 12):
        m = make_ball(divisions=d)
        fam = PotentialFamily(m, Geometry(), WELL)
        tr = tune_to_kernel(m, fam, 1, t_start=50.0)
        G = fam.geometry(tr.t)
        u = tr.pair.lift(tr.vector)
        uh = np.exp(-0.5 * om.value(m.vertices)) * u
        p = assemble(m, G.push_conformal(om), "robin")
        rq.append(abs(float(uh @ (p.A @ uh)) / float(uh @ (p.M @ uh))))
        hs.append(m.h)
    C = rq[0] / hs[0] ** 2
    assert rq[1] <= 1.5 * C * hs[1] ** 2
