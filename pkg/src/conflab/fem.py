"""P1 finite-element assembly of the conformal Laplacian and its boundary forms.

The Robin form is

    a_s(u, v) = int (<du, dv>_g + c_n R u v) dv_g + int_bdry (2 c_n h + s) u v dsigma_g

and the Dirichlet pair is its interior block.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Geometry
from .mesh import Mesh
from .quadrature import tet_rule, tri_rule

__all__ = [
    "AssemblyError",
    "BoundaryCondition",
    "Forms",
    "OperatorPair",
    "assemble",
    "assemble_forms",
    "rayleigh_quotient",
    "integrate_interior",
    "integrate_boundary",
    "interpolate",
    "covariance_residual",
]

# elements are processed in fixed-size blocks in index order, so the
# floating-point summation order never depends on scheduling
CHUNK = 20000


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str = "robin"
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "robin"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if not np.isfinite(self.s):
            raise ValueError("Robin parameter must be finite")

    @classmethod
    def parse(cls, bc, s=0.0):
        if isinstance(bc, cls):
            return bc
        return cls(str(bc), float(s))

    def __str__(self):
        return f"robin({self.s:g})" if self.kind == "robin" else self.kind


def _p1_gradients(vertices, tets):
    """Gradients of the four barycentric functions, shape (T, 4, 3)."""
    X = vertices[tets]
    J = (X[:, 1:] - X[:, :1]).transpose(0, 2, 1)  # columns are edges
    Jinv = np.linalg.inv(J)
    g = np.empty((len(tets), 4, 3))
    g[:, 1:] = Jinv
    g[:, 0] = -Jinv.sum(axis=1)
    return g


def p1_gradients(mesh: Mesh) -> np.ndarray:
    return _p1_gradients(mesh.vertices, mesh.tets)


def _coo(idx, vals, n):
    rows = np.repeat(idx, idx.shape[1], axis=1).ravel()
    cols = np.tile(idx, (1, idx.shape[1])).ravel()
    return sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


def _symmetrize(A):
    A = A.tocsr()
    A = (A + A.T) * 0.5
    A.sum_duplicates()
    A.sort_indices()
    return A.tocsr()


@dataclass
class Forms:
    """Full-size (all vertices) bilinear forms of one geometry on one mesh."""

    mesh: Mesh
    geometry: Geometry
    stiffness: sp.csr_matrix
    potential: sp.csr_matrix   # c_n * int R u v
    mass: sp.csr_matrix
    bmass: sp.csr_matrix       # int_bdry u v
    bcurv: sp.csr_matrix       # 2 c_n * int_bdry h u v
    degree: int = 2

    def operator(self, bc: str = "robin", s: float = 0.0):
        bc = BoundaryCondition.parse(bc, s)
        A = self.stiffness + self.potential
        if bc.kind == "robin":
            A = A + self.bcurv + bc.s * self.bmass
        A = _symmetrize(A)
        M = self.mass
        if bc.kind == "dirichlet":
            dofs = self.mesh.interior_vertices
            A = A[dofs][:, dofs]
            M = M[dofs][:, dofs]
        else:
            dofs = np.arange(self.mesh.n_vertices)
        return OperatorPair(bc, A.tocsr(), M.tocsr(), dofs, self.bmass, self.mesh.n_vertices,
                            {"quadrature_degree": self.degree,
                             "geometry_hash": self.geometry.fingerprint()})


@dataclass
class OperatorPair:
    """Symmetric pencil ``(A, M)`` on the degrees of freedom ``dofs``."""

    bc: BoundaryCondition
    A: sp.csr_matrix
    M: sp.csr_matrix
    dofs: np.ndarray
    Mb: sp.csr_matrix        # boundary mass on all vertices
    n_vertices: int
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def lift(self, x):
        """Extend a DOF vector (or columns) to all vertices by zero."""
        x = np.asarray(x)
        out = np.zeros((self.n_vertices,) + x.shape[1:])
        out[self.dofs] = x
        return out

    def restrict(self, u):
        return np.asarray(u)[self.dofs]

    def shifted(self, lam: float) -> "OperatorPair":
        """The pencil ``(A - lam M, M)``."""
        return OperatorPair(self.bc, (self.A - lam * self.M).tocsr(), self.M, self.dofs,
                            self.Mb, self.n_vertices, dict(self.meta, shift=lam))

    def check(self, rtol=1e-14):
        for name, X in (("A", self.A), ("M", self.M)):
            scale = abs(X).max() if X.nnz else 1.0
            asym = abs(X - X.T).max() if X.nnz else 0.0
            if asym > rtol * scale:
                raise AssemblyError(f"{name} is not symmetric ({asym:.3g})")
        if self.M.diagonal().min() <= 0:
            raise AssemblyError("mass matrix is not positive definite")
        return True


def _interior_data(mesh: Mesh, G: Geometry, degree: int, need_curv=True):
    bary, w = tet_rule(degree)
    V, T = mesh.vertices, mesh.tets
    vol = mesh.volumes
    for lo in range(0, len(T), CHUNK):
        t = T[lo:lo + CHUNK]
        pts = np.einsum("qa,tad->tqd", bary, V[t]).reshape(-1, 3)
        yield lo, t, vol[lo:lo + CHUNK], pts, bary, w


def assemble_forms(mesh: Mesh, G: Geometry, degree: int = 2) -> Forms:
    """Assemble every form of the conformal Laplacian on ``mesh``."""
    n = mesh.n_vertices
    c_n = G.c_n
    K_parts, V_parts, M_parts = [], [], []
    grads_all = p1_gradients(mesh)
    for lo, t, vol, pts, bary, w in _interior_data(mesh, G, degree):
        nt, nq = len(t), len(w)
        try:
            pd = G.point_data(pts)
        except (ArithmeticError, ValueError) as exc:
            raise AssemblyError(f"geometry evaluation failed at a quadrature point: {exc}") from exc
        grads = grads_all[lo:lo + nt]
        S = (pd.stiffness.reshape(nt, nq, 3, 3) * w[None, :, None, None]).sum(axis=1)
        Ke = np.einsum("tad,tde,tbe->tab", grads, S, grads) * vol[:, None, None]
        rho = pd.sqrt_det.reshape(nt, nq) * w[None, :] * vol[:, None]
        Me = np.einsum("tq,qa,qb->tab", rho, bary, bary)
        Ve = np.einsum("tq,qa,qb->tab", rho * pd.scalar_curvature.reshape(nt, nq), bary, bary)
        if not (np.all(np.isfinite(Ke)) and np.all(np.isfinite(Ve)) and np.all(np.isfinite(Me))):
            raise AssemblyError("non-finite values in element matrices")
        K_parts.append(_coo(t, Ke, n))
        M_parts.append(_coo(t, Me, n))
        V_parts.append(_coo(t, c_n * Ve, n))
    K = _symmetrize(sum(K_parts[1:], K_parts[0]).tocsr())
    Vp = _symmetrize(sum(V_parts[1:], V_parts[0]).tocsr())
    M = _symmetrize(sum(M_parts[1:], M_parts[0]).tocsr())

    F = mesh.boundary_faces
    bary, w = tri_rule(degree)
    X = mesh.vertices[F]
    pts = np.einsum("qa,fad->fqd", bary, X).reshape(-1, 3)
    nq = len(w)
    normals = np.repeat(mesh.boundary_normals, nq, axis=0)
    try:
        dens = G.area_density(pts, normals)
        h = G.mean_curvature(pts)
    except (ArithmeticError, ValueError) as exc:
        raise AssemblyError(f"geometry evaluation failed on the boundary: {exc}") from exc
    rho = dens.reshape(-1, nq) * w[None, :] * mesh.boundary_areas[:, None]
    Be = np.einsum("fq,qa,qb->fab", rho, bary, bary)
    He = np.einsum("fq,qa,qb->fab", rho * h.reshape(-1, nq), bary, bary)
    Mb = _symmetrize(_coo(F, Be, n).tocsr())
    H = _symmetrize(_coo(F, G.b_n * He, n).tocsr())
    return Forms(mesh, G, K, Vp, M, Mb, H, degree)


def assemble(mesh: Mesh, G: Geometry, bc="robin", s: float = 0.0, degree: int = 2) -> OperatorPair:
    """Assemble the pencil for ``bc`` in {"dirichlet", "neumann", "robin"}."""
    pair = assemble_forms(mesh, G, degree).operator(bc, s)
    pair.check()
    return pair


def rayleigh_quotient(mesh: Mesh, G: Geometry, u, pair: OperatorPair | None = None) -> float:
    """``u^T A u / u^T M u`` for the Robin(0) pencil; ``u`` is a vertex vector."""
    if pair is None:
        pair = assemble(mesh, G, "robin", 0.0)
    u = np.asarray(u, dtype=float)
    if u.shape[0] == pair.n_vertices and pair.size != pair.n_vertices:
        u = pair.restrict(u)
    den = float(u @ (pair.M @ u))
    if den <= 0.0:
        raise ZeroDivisionError("Rayleigh quotient of the zero vector")
    return float(u @ (pair.A @ u)) / den


# ---------------------------------------------------------------------------
# integration


def _field_values(f, pts, mesh: Mesh, cells, bary):
    """Evaluate a field given as a ScalarField, a callable or a vertex vector."""
    if isinstance(f, (int, float)):
        return np.full(len(pts), float(f))
    if isinstance(f, np.ndarray) and f.ndim == 1 and f.shape[0] == mesh.n_vertices:
        vals = f[cells]  # (C, k)
        return np.einsum("ck,qk->cq", vals, bary).ravel()
    if hasattr(f, "value"):
        return f.value(pts)
    return np.asarray(f(pts), dtype=float)


def integrate_interior(mesh: Mesh, G: Geometry, f, degree: int = 2, tets=None,
                       weights=None) -> float:
    """``int f dv_g``, optionally over the tets listed in ``tets`` with per-tet ``weights``."""
    bary, w = tet_rule(degree)
    T = mesh.tets if tets is None else mesh.tets[tets]
    vol = mesh.volumes if tets is None else mesh.volumes[tets]
    total = 0.0
    for lo in range(0, len(T), CHUNK):
        t = T[lo:lo + CHUNK]
        pts = np.einsum("qa,tad->tqd", bary, mesh.vertices[t]).reshape(-1, 3)
        _, sq = G.metric(pts)
        vals = _field_values(f, pts, mesh, t, bary) * sq
        per = (vals.reshape(len(t), -1) * w[None, :]).sum(axis=1) * vol[lo:lo + CHUNK]
        if weights is not None:
            per = per * weights[lo:lo + CHUNK]
        total += float(per.sum())
    return total


def integrate_boundary(mesh: Mesh, G: Geometry, f, degree: int = 2, faces=None) -> float:
    """``int_bdry f dsigma_g`` over all boundary triangles or the listed ones."""
    bary, w = tri_rule(degree)
    F = mesh.boundary_faces if faces is None else mesh.boundary_faces[faces]
    nrm = mesh.boundary_normals if faces is None else mesh.boundary_normals[faces]
    area = mesh.boundary_areas if faces is None else mesh.boundary_areas[faces]
    pts = np.einsum("qa,fad->fqd", bary, mesh.vertices[F]).reshape(-1, 3)
    dens = G.area_density(pts, np.repeat(nrm, len(w), axis=0))
    vals = _field_values(f, pts, mesh, F, bary) * dens
    return float(((vals.reshape(len(F), -1) * w[None, :]).sum(axis=1) * area).sum())


def interpolate(mesh: Mesh, f) -> np.ndarray:
    """Nodal P1 interpolant of a field."""
    if hasattr(f, "value"):
        return f.value(mesh.vertices)
    return np.asarray(f(mesh.vertices), dtype=float)


def load_vector(mesh: Mesh, G: Geometry, f_interior=None, f_boundary=None, degree: int = 4):
    """``b_j = int f_i phi_j dv_g + int_bdry f_b phi_j dsigma_g`` for callables of points."""
    n = mesh.n_vertices
    b = np.zeros(n)
    if f_interior is not None:
        bary, w = tet_rule(degree)
        for lo in range(0, mesh.n_tets, CHUNK):
            t = mesh.tets[lo:lo + CHUNK]
            pts = np.einsum("qa,tad->tqd", bary, mesh.vertices[t]).reshape(-1, 3)
            _, sq = G.metric(pts)
            vals = (f_interior(pts) * sq).reshape(len(t), -1) * w[None, :]
            contrib = np.einsum("tq,qa->ta", vals, bary) * mesh.volumes[lo:lo + CHUNK, None]
            b += np.bincount(t.ravel(), contrib.ravel(), minlength=n)
    if f_boundary is not None:
        bary, w = tri_rule(degree)
        F = mesh.boundary_faces
        pts = np.einsum("qa,fad->fqd", bary, mesh.vertices[F]).reshape(-1, 3)
        dens = G.area_density(pts, np.repeat(mesh.boundary_normals, len(w), axis=0))
        vals = (f_boundary(pts) * dens).reshape(len(F), -1) * w[None, :]
        contrib = np.einsum("fq,qa->fa", vals, bary) * mesh.boundary_areas[:, None]
        b += np.bincount(F.ravel(), contrib.ravel(), minlength=n)
    return b


def covariance_residual(mesh: Mesh, G: Geometry, omega, f, degree: int = 4) -> dict:
    """Weak residual of the covariance law for the Robin problem.

    With ``G_hat = push_conformal(G, omega)`` and ``a = n/2 - 1`` the law reads
    ``P_hat(e^{-a w} f) = e^{-(a+2) w} P f`` inside and
    ``B_hat(e^{-a w} f) = e^{-(a+1) w} B f`` on the boundary. The residual is
    ``r = A_hat I_h(e^{-a w} f) - b`` with ``b`` the load of the right-hand
    sides in the measures of ``G_hat``. Returned norms: the dual H^1 norm
    (``r^T (K + M)^{-1} r``, square root) and the ``M^{-1}`` norm.
    """
    Gh = G.push_conformal(omega)
    a = G.n / 2.0 - 1.0
    pair = assemble(mesh, Gh, "robin", 0.0)
    U = np.exp(-a * omega.value(mesh.vertices)) * f.value(mesh.vertices)
    b = load_vector(
        mesh, Gh,
        lambda p: np.exp(-(a + 2) * omega.value(p)) * G.conformal_operator(f, p),
        lambda p: np.exp(-(a + 1) * omega.value(p)) * G.robin_operator(f, p),
        degree,
    )
    r = pair.A @ U - b
    forms = assemble_forms(mesh, Gh)
    H1 = (forms.stiffness + forms.mass).tocsc()
    dual = float(np.sqrt(max(r @ spla.spsolve(H1, r), 0.0)))
    l2 = float(np.sqrt(max(r @ spla.spsolve(pair.M.tocsc(), r), 0.0)))
    return {"dual_h1": dual, "l2": l2, "h": mesh.h}
