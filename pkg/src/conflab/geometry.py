"""Riemannian data of a compact 3-manifold with boundary under conformal change.

A :class:`Geometry` is a base metric together with a stack of conformal
factors; the queried metric is ``exp(2*Omega) * g_base`` with
``Omega = sum(omega_i)``. All pointwise queries are vectorised over arrays of
points of shape ``(N, 3)``.

Sign convention: ``laplacian`` is the non-negative Laplacian ``-div grad``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .fieldexpr import BinOp, Bump, Jet, ScalarField, parse, to_string

__all__ = [
    "GeometryError",
    "conformal_coupling",
    "boundary_coupling",
    "BoundaryDescriptor",
    "EuclideanBase",
    "TrustedBase",
    "MetricScalarCurvature",
    "Geometry",
    "metric_at",
    "scalar_curvature_at",
    "mean_curvature_at",
    "push_conformal",
    "field_from_spec",
    "field_to_spec",
]


class GeometryError(ValueError):
    pass


def conformal_coupling(n: int) -> Fraction:
    """``(n-2)/(4(n-1))``, the zeroth-order coefficient of the conformal Laplacian."""
    if int(n) != n or n < 3:
        raise GeometryError("dimension must be an integer >= 3")
    return Fraction(n - 2, 4 * (n - 1))


def boundary_coupling(n: int) -> Fraction:
    """``(n-2)/(2(n-1))``, the mean-curvature coefficient of the conformal Robin operator."""
    if int(n) != n or n < 3:
        raise GeometryError("dimension must be an integer >= 3")
    return Fraction(n - 2, 2 * (n - 1))


# ---------------------------------------------------------------------------
# boundary descriptors


@dataclass(frozen=True)
class BoundaryDescriptor:
    """Implicit surface approximated by the mesh boundary.

    ``kind`` is ``"ball"`` (``radius``), ``"box"`` (``lo``, ``hi``) or
    ``"shell"`` (``inner``, ``outer``); balls and shells are centred at the
    origin.
    """

    kind: str = "ball"
    radius: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    inner: float = 0.5
    outer: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ball", "box", "shell"):
            raise GeometryError(f"unknown boundary kind {self.kind!r}")

    @classmethod
    def ball(cls, radius=1.0):
        return cls("ball", radius=float(radius))

    @classmethod
    def box(cls, lo=0.0, hi=1.0):
        return cls("box", lo=float(lo), hi=float(hi))

    @classmethod
    def shell(cls, inner=0.5, outer=1.0):
        return cls("shell", inner=float(inner), outer=float(outer))

    def to_dict(self):
        if self.kind == "ball":
            return {"kind": "ball", "radius": self.radius}
        if self.kind == "box":
            return {"kind": "box", "lo": self.lo, "hi": self.hi}
        return {"kind": "shell", "inner": self.inner, "outer": self.outer}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, **{k: float(v) for k, v in d.items()})

    def _shell_side(self, r):
        return np.abs(r - self.outer) <= np.abs(r - self.inner)

    def distance(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        if self.kind == "box":
            d = np.minimum(np.abs(p - self.lo), np.abs(p - self.hi))
            inside = np.all((p >= self.lo - 1e-12) & (p <= self.hi + 1e-12), axis=1)
            return np.where(inside, d.min(axis=1), np.inf)
        r = np.linalg.norm(p, axis=1)
        if self.kind == "ball":
            return np.abs(r - self.radius)
        return np.minimum(np.abs(r - self.outer), np.abs(r - self.inner))

    def normal(self, points) -> np.ndarray:
        """Outward Euclidean unit normal of the nearest boundary piece."""
        p = np.atleast_2d(points)
        if self.kind == "box":
            d = np.concatenate([np.abs(p - self.lo), np.abs(p - self.hi)], axis=1)
            face = np.argmin(d, axis=1)
            n = np.zeros_like(p)
            axis = face % 3
            n[np.arange(len(p)), axis] = np.where(face >= 3, 1.0, -1.0)
            return n
        r = np.linalg.norm(p, axis=1)
        n = p / r[:, None]
        if self.kind == "shell":
            n = np.where(self._shell_side(r)[:, None], n, -n)
        return n

    def mean_curvature(self, points, n: int = 3) -> np.ndarray:
        """Euclidean mean curvature ``tr II`` for the outward normal."""
        p = np.atleast_2d(points)
        if self.kind == "box":
            return np.zeros(len(p))
        if self.kind == "ball":
            return np.full(len(p), (n - 1) / self.radius)
        r = np.linalg.norm(p, axis=1)
        return np.where(self._shell_side(r), (n - 1) / self.outer, -(n - 1) / self.inner)


# ---------------------------------------------------------------------------
# base metrics


class EuclideanBase:
    is_euclidean = True
    has_metric = False

    def to_dict(self):
        return "euclidean"

    def scalar_curvature(self, pts):
        return np.zeros(len(pts))

    def mean_curvature(self, pts, boundary, n):
        return boundary.mean_curvature(pts, n)


class TrustedBase:
    """User-supplied base data, taken at face value.

    ``metric`` is a 3x3 nested sequence of fields (only ``i <= j`` entries are
    read) or ``None`` for the Euclidean metric. ``scalar_curvature`` and
    ``mean_curvature`` default to the curvature of the metric itself and to
    the Euclidean mean curvature of the boundary descriptor.
    """

    is_euclidean = False

    def __init__(self, metric=None, scalar_curvature: ScalarField | None = None,
                 mean_curvature: ScalarField | None = None):
        self.metric = None
        if metric is not None:
            rows = [[_as_field(metric[min(i, j)][max(i, j)]) for j in range(3)] for i in range(3)]
            self.metric = rows
        self.has_metric = self.metric is not None
        if scalar_curvature is None and self.metric is not None:
            scalar_curvature = MetricScalarCurvature(self.metric)
        self.R = None if scalar_curvature is None else _as_field(scalar_curvature)
        self.h = None if mean_curvature is None else _as_field(mean_curvature)

    def to_dict(self):
        d = {"kind": "trusted"}
        if self.metric is not None:
            d["metric"] = [[field_to_spec(self.metric[i][j]) for j in range(3)] for i in range(3)]
        if self.R is not None and not isinstance(self.R, MetricScalarCurvature):
            d["scalar_curvature"] = field_to_spec(self.R)
        if self.h is not None:
            d["mean_curvature"] = field_to_spec(self.h)
        return d

    def scalar_curvature(self, pts):
        if self.R is None:
            return np.zeros(len(pts))
        return self.R.value(pts)

    def mean_curvature(self, pts, boundary, n):
        if self.h is None:
            return boundary.mean_curvature(pts, n)
        return self.h.value(pts)

    def metric_jets(self, pts):
        """Metric values (N,3,3), first derivatives (N,3,3,3) indexed [n,k,i,j]
        and second derivatives (N,3,3,3,3) indexed [n,k,l,i,j]."""
        n = len(pts)
        g = np.empty((n, 3, 3))
        dg = np.empty((n, 3, 3, 3))
        ddg = np.empty((n, 3, 3, 3, 3))
        for i in range(3):
            for j in range(i, 3):
                jt = self.metric[i][j].jet(pts)
                for a, b in {(i, j), (j, i)}:
                    g[:, a, b] = jt.v
                    dg[:, :, a, b] = jt.g
                    ddg[:, :, :, a, b] = jt.h
        return g, dg, ddg


def _as_field(f):
    if isinstance(f, ScalarField):
        return f
    if isinstance(f, (int, float)):
        return parse(repr(float(f)))
    return field_from_spec(f)


class MetricScalarCurvature(ScalarField):
    """Scalar curvature of a coordinate metric, from exact second-order jets."""

    def __init__(self, metric):
        self.base = TrustedBase(metric=metric, scalar_curvature=0.0)

    def __repr__(self):
        return "MetricScalarCurvature(...)"

    def value(self, points, params=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g, dg, ddg = self.base.metric_jets(pts)
        gi = np.linalg.inv(g)
        # Christoffel symbols of the first kind: G1[n,l,i,j]
        G1 = 0.5 * (np.einsum("nilj->nlij", dg) + np.einsum("njil->nlij", dg) - dg)
        Gam = np.einsum("nkl,nlij->nkij", gi, G1)
        dgi = -np.einsum("nka,nmab,nbl->nmkl", gi, dg, gi)
        # dG1[n,m,l,i,j] = d_m of G1[n,l,i,j]
        dG1 = 0.5 * (np.einsum("nmilj->nmlij", ddg) + np.einsum("nmjil->nmlij", ddg)
                     - ddg)
        dGam = np.einsum("nmkl,nlij->nmkij", dgi, G1) + np.einsum("nkl,nmlij->nmkij", gi, dG1)
        ric = (np.einsum("nkkij->nij", dGam) - np.einsum("njkik->nij", dGam)
               + np.einsum("nkkp,npij->nij", Gam, Gam) - np.einsum("nkjp,npik->nij", Gam, Gam))
        return np.einsum("nij,nij->n", gi, ric)

    def jet(self, points, params=None):
        raise NotImplementedError("only values of the metric scalar curvature are available")


# ---------------------------------------------------------------------------
# field specs (JSON)


def field_from_spec(spec) -> ScalarField:
    if isinstance(spec, ScalarField):
        return spec
    if isinstance(spec, str):
        return parse(spec)
    if isinstance(spec, (int, float)):
        return parse(repr(float(spec)))
    if "expr" in spec:
        params = spec.get("params", {})
        e = parse(spec["expr"], params=tuple(params))
        return e.bind(**params) if params else e
    if "bump" in spec:
        b = spec["bump"]
        return Bump(b["center"], b["radius"], b.get("amplitude", 1.0))
    if "sum" in spec:
        terms = [field_from_spec(t) for t in spec["sum"]]
        out = terms[0]
        for t in terms[1:]:
            out = out + t
        return out
    raise GeometryError(f"unrecognised field spec {spec!r}")


def field_to_spec(f):
    if isinstance(f, Bump):
        return {"bump": {"center": f.center.tolist(), "radius": f.radius, "amplitude": f.amplitude}}
    try:
        return {"expr": to_string(f)}
    except Exception:
        pass
    if isinstance(f, BinOp) and f.op == "+":
        terms = []
        for c in (f.a, f.b):
            s = field_to_spec(c)
            terms.extend(s["sum"] if "sum" in s else [s])
        return {"sum": terms}
    return {"repr": repr(f)}


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class PointData:
    """Pointwise data of a geometry at a batch of interior points."""

    omega: Jet
    sqrt_det: np.ndarray      # volume density w.r.t. Lebesgue measure
    stiffness: np.ndarray     # sqrt(det g) g^{-1}, (N,3,3)
    scalar_curvature: np.ndarray


@dataclass(frozen=True)
class Geometry:
    """Base metric plus an ordered stack of conformal factors."""

    n: int = 3
    base: object = field(default_factory=EuclideanBase)
    boundary: BoundaryDescriptor = field(default_factory=BoundaryDescriptor)
    conformal: tuple = ()

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise GeometryError("dimension must be an integer >= 3")
        object.__setattr__(self, "conformal", tuple(_as_field(w) for w in self.conformal))

    # -- construction -------------------------------------------------------
    def push_conformal(self, omega) -> "Geometry":
        return Geometry(self.n, self.base, self.boundary, self.conformal + (_as_field(omega),))

    @property
    def c_n(self) -> float:
        return float(conformal_coupling(self.n))

    @property
    def b_n(self) -> float:
        return float(boundary_coupling(self.n))

    def to_dict(self):
        return {
            "n": self.n,
            "base": self.base.to_dict(),
            "boundary": self.boundary.to_dict(),
            "conformal": [field_to_spec(w) for w in self.conformal],
        }

    @classmethod
    def from_dict(cls, d):
        base = d.get("base", "euclidean")
        if base == "euclidean":
            base = EuclideanBase()
        elif isinstance(base, dict) and base.get("kind") == "trusted":
            metric = base.get("metric")
            if metric is not None:
                metric = [[field_from_spec(s) for s in row] for row in metric]
            R = base.get("scalar_curvature")
            h = base.get("mean_curvature")
            base = TrustedBase(metric, None if R is None else field_from_spec(R),
                               None if h is None else field_from_spec(h))
        else:
            raise GeometryError(f"unsupported base metric {base!r}")
        boundary = BoundaryDescriptor.from_dict(d.get("boundary", {"kind": "ball", "radius": 1.0}))
        conformal = []
        for w in d.get("conformal", []):
            conformal.append(field_from_spec(w))
        return cls(int(d.get("n", 3)), base, boundary, tuple(conformal))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- pointwise pieces ---------------------------------------------------
    def omega(self, pts) -> Jet:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = Jet.const(0.0, len(pts))
        for w in self.conformal:
            out = out + w.jet(pts)
        return out

    def omega_value(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts))
        for w in self.conformal:
            out = out + w.value(pts)
        return out

    def _base_metric(self, pts):
        """Base metric, inverse, sqrt det and the first-order Laplacian coefficient."""
        n = len(pts)
        if not self.base.has_metric:
            eye = np.broadcast_to(np.eye(3), (n, 3, 3))
            return eye, eye, np.ones(n), np.zeros((n, 3))
        g, dg, _ = self.base.metric_jets(pts)
        gi = np.linalg.inv(g)
        det = np.linalg.det(g)
        if np.any(det <= 0) or np.any(np.linalg.eigvalsh(g)[:, 0] <= 0):
            raise GeometryError("base metric is not positive definite")
        # b^j = (1/sqrt g) d_i (sqrt g g^{ij})
        dlog = 0.5 * np.einsum("nab,nkba->nk", gi, dg)
        dgi = -np.einsum("nia,nkab,nbj->nkij", gi, dg, gi)
        b = np.einsum("ni,nij->nj", dlog, gi) + np.einsum("niij->nj", dgi)
        return g, gi, np.sqrt(det), b

    def _base_laplacian(self, jet: Jet, gi, b):
        return -(np.einsum("nij,nij->n", gi, jet.h) + np.einsum("nj,nj->n", b, jet.g))

    def laplacian(self, f: ScalarField | Jet, pts) -> np.ndarray:
        """Non-negative Laplacian of a field in the queried metric."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        fj = f if isinstance(f, Jet) else f.jet(pts)
        _, gi, _, b = self._base_metric(pts)
        om = self.omega(pts)
        lap_b = self._base_laplacian(fj, gi, b)
        cross = np.einsum("ni,nij,nj->n", om.g, gi, fj.g)
        return np.exp(-2.0 * om.v) * (lap_b - (self.n - 2) * cross)

    def metric(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        g, _, sq, _ = self._base_metric(pts)
        om = self.omega_value(pts)
        return np.exp(2.0 * om)[:, None, None] * g, np.exp(self.n * om) * sq

    def scalar_curvature(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        _, gi, _, b = self._base_metric(pts)
        R = self.base.scalar_curvature(pts)
        if not self.conformal:
            return R
        om = self.omega(pts)
        n = self.n
        lap = self._base_laplacian(om, gi, b)
        grad2 = np.einsum("ni,nij,nj->n", om.g, gi, om.g)
        return np.exp(-2.0 * om.v) * (R + 2 * (n - 1) * lap - (n - 1) * (n - 2) * grad2)

    def point_data(self, pts) -> PointData:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        g, gi, sq, b = self._base_metric(pts)
        om = self.omega(pts) if self.conformal else Jet.const(0.0, len(pts))
        n = self.n
        R = self.base.scalar_curvature(pts)
        if self.conformal:
            lap = self._base_laplacian(om, gi, b)
            grad2 = np.einsum("ni,nij,nj->n", om.g, gi, om.g)
            R = np.exp(-2.0 * om.v) * (R + 2 * (n - 1) * lap - (n - 1) * (n - 2) * grad2)
        stiff = (np.exp((n - 2) * om.v) * sq)[:, None, None] * gi
        return PointData(om, np.exp(n * om.v) * sq, stiff, R)

    # -- boundary -----------------------------------------------------------
    def _base_normal(self, pts, nE=None):
        nE = self.boundary.normal(pts) if nE is None else nE
        if not self.base.has_metric:
            return nE, np.ones(len(pts)), np.ones(len(pts))
        _, gi, sq, _ = self._base_metric(pts)
        v = np.einsum("nij,nj->ni", gi, nE)
        s = np.sqrt(np.einsum("ni,ni->n", nE, v))
        return v / s[:, None], s, sq

    def normal_derivative(self, f: ScalarField | Jet, pts) -> np.ndarray:
        """Derivative along the outward unit normal of the queried metric."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        fj = f if isinstance(f, Jet) else f.jet(pts)
        nu, _, _ = self._base_normal(pts)
        return np.exp(-self.omega_value(pts)) * np.einsum("ni,ni->n", fj.g, nu)

    def mean_curvature(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        hb = self.base.mean_curvature(pts, self.boundary, self.n)
        if not self.conformal:
            return hb
        om = self.omega(pts)
        nu, _, _ = self._base_normal(pts)
        dnu = np.einsum("ni,ni->n", om.g, nu)
        return np.exp(-om.v) * ((self.n - 1) * dnu + hb)

    def area_density(self, pts, normals=None) -> np.ndarray:
        """Induced boundary area element relative to Euclidean area.

        ``normals`` are the Euclidean unit normals of the discrete surface.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        _, s, sq = self._base_normal(pts, normals)
        return np.exp((self.n - 1) * self.omega_value(pts)) * sq * s

    def conformal_operator(self, v: ScalarField, pts) -> np.ndarray:
        """Pointwise ``P v = Laplacian(v) + c_n R v`` for a smooth field ``v``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        vj = v.jet(pts)
        return self.laplacian(vj, pts) + self.c_n * self.scalar_curvature(pts) * vj.v

    def robin_operator(self, v: ScalarField, pts) -> np.ndarray:
        """Pointwise ``B v = d_nu v + (n-2)/(2(n-1)) h v`` on the boundary."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        vj = v.jet(pts)
        return self.normal_derivative(vj, pts) + self.b_n * self.mean_curvature(pts) * vj.v


# ---------------------------------------------------------------------------
# single-point queries


def push_conformal(G: Geometry, omega) -> Geometry:
    return G.push_conformal(omega)


def metric_at(G: Geometry, p):
    g, sq = G.metric(np.asarray(p, dtype=float)[None, :])
    if np.any(np.linalg.eigvalsh(g[0]) <= 0):
        raise GeometryError("metric is not positive definite")
    return g[0], float(sq[0])


def scalar_curvature_at(G: Geometry, p) -> float:
    return float(G.scalar_curvature(np.asarray(p, dtype=float)[None, :])[0])


def mean_curvature_at(G: Geometry, p, tol: float = 1e-9) -> float:
    p = np.asarray(p, dtype=float)[None, :]
    if G.boundary.distance(p)[0] > tol:
        raise GeometryError("point is not on the boundary")
    return float(G.mean_curvature(p)[0])
