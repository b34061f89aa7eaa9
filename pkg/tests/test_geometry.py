import json
from fractions import Fraction

import numpy as np
import pytest

from conflab.fieldexpr import Bump, parse
from conflab.geometry import (
    BoundaryDescriptor,
    Geometry,
    GeometryError,
    MetricScalarCurvature,
    TrustedBase,
    boundary_coupling,
    conformal_coupling,
    mean_curvature_at,
    scalar_curvature_at,
)

STEREO = parse("log(2/(1+x^2+y^2+z^2))")


def interior_points(n=20, radius=0.8, seed=0):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(n, 3))
    return p / np.linalg.norm(p, axis=1)[:, None] * rng.uniform(0, radius, (n, 1))


def sphere_points(n=20, seed=1):
    p = np.random.default_rng(seed).normal(size=(n, 3))
    return p / np.linalg.norm(p, axis=1)[:, None]


def test_couplings():
    assert conformal_coupling(3) == Fraction(1, 8)
    assert boundary_coupling(3) == Fraction(1, 4)
    assert conformal_coupling(4) == Fraction(1, 6)
    assert Geometry().c_n == 0.125 and Geometry().b_n == 0.25
    with pytest.raises(GeometryError):
        Geometry(n=2)


def test_flat_boundary_mean_curvature():
    G = Geometry()
    np.testing.assert_allclose(G.mean_curvature(sphere_points()), 2.0)
    Gs = Geometry(boundary=BoundaryDescriptor.shell(0.5, 1.0))
    inner = 0.5 * sphere_points()
    np.testing.assert_allclose(Gs.mean_curvature(inner), -4.0)
    Gb = Geometry(boundary=BoundaryDescriptor.box())
    assert mean_curvature_at(Gb, (0.0, 0.3, 0.4)) == 0.0


def test_stereographic_factor_gives_round_sphere():
    G = Geometry().push_conformal(STEREO)
    np.testing.assert_allclose(G.scalar_curvature(interior_points()), 6.0, rtol=1e-12)
    # the unit ball maps to a hemisphere, whose equator is totally geodesic
    np.testing.assert_allclose(G.mean_curvature(sphere_points()), 0.0, atol=1e-12)


def test_constant_factor_scaling():
    c = 0.7
    G = Geometry().push_conformal(parse(repr(c)))
    assert mean_curvature_at(G, (1.0, 0, 0)) == pytest.approx(2.0 * np.exp(-c))
    g, sq = G.metric(np.zeros((1, 3)))
    np.testing.assert_allclose(g[0], np.exp(2 * c) * np.eye(3))
    assert sq[0] == pytest.approx(np.exp(3 * c))


def test_cocycle():
    w1, w2 = parse("0.3*x*y"), parse("0.2*sin(z)+0.1*x")
    a = Geometry().push_conformal(w1).push_conformal(w2)
    b = Geometry().push_conformal(w1 + w2)
    pts = interior_points()
    np.testing.assert_allclose(a.scalar_curvature(pts), b.scalar_curvature(pts), rtol=1e-12, atol=1e-12)
    s = sphere_points()
    np.testing.assert_allclose(a.mean_curvature(s), b.mean_curvature(s), rtol=1e-12, atol=1e-12)


def test_metric_curvature_agrees_with_conformal_law():
    w = parse("0.2*x^2-0.1*y*z+0.15*sin(x+z)")
    e2w = parse("exp(2*(0.2*x^2-0.1*y*z+0.15*sin(x+z)))")
    metric = [[e2w, 0, 0], [0, e2w, 0], [0, 0, e2w]]
    R_metric = MetricScalarCurvature(metric).value(interior_points())
    R_law = Geometry().push_conformal(w).scalar_curvature(interior_points())
    np.testing.assert_allclose(R_metric, R_law, rtol=1e-10, atol=1e-10)


def test_trusted_base_with_conformal_stack():
    metric = [[parse("1+0.1*x^2"), 0, 0], [0, 1, parse("0.05*x")], [0, 0, 1]]
    base = TrustedBase(metric)
    w = parse("0.1*y")
    G = Geometry(3, base).push_conformal(w)
    # compare against the metric e^{2w} g taken at face value
    scaled = [[parse("exp(0.2*y)") * m for m in row] for row in
              [[metric[0][0], 0, 0], [0, 1, metric[1][2]], [0, 0, 1]]]
    R_direct = MetricScalarCurvature(scaled).value(interior_points(radius=0.5))
    np.testing.assert_allclose(G.scalar_curvature(interior_points(radius=0.5)), R_direct,
                               rtol=1e-9, atol=1e-9)


def test_trusted_curvature_is_used_verbatim():
    well = Bump([0, 0, 0], 0.5, -3.0)
    G = Geometry(3, TrustedBase(scalar_curvature=well))
    assert scalar_curvature_at(G, (0, 0, 0)) == -3.0
    assert scalar_curvature_at(G, (0.9, 0, 0)) == 0.0


def test_json_round_trip_and_fingerprint():
    G = Geometry(3, TrustedBase(scalar_curvature=Bump([0.1, 0, 0], 0.4, -2.0) + parse("0.5")),
                 BoundaryDescriptor.ball(), (parse("0.1*x^2"), Bump([0, 0.2, 0], 0.3, 0.2)))
    blob = json.dumps(G.to_dict(), sort_keys=True)
    H = Geometry.from_dict(json.loads(blob))
    assert H.fingerprint() == G.fingerprint()
    pts = interior_points()
    np.testing.assert_allclose(H.scalar_curvature(pts), G.scalar_curvature(pts))


def test_config_block_shape():
    G = Geometry.from_dict({"n": 3, "base": "euclidean",
                            "boundary": {"kind": "ball", "radius": 1.0},
                            "conformal": [{"expr": "0.1*x"}]})
    assert len(G.conformal) == 1
    with pytest.raises(GeometryError):
        Geometry.from_dict({"base": "hyperbolic"})
