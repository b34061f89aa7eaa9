"""Nodal domains of P1 functions and the integral identities of kernel elements.

A nodal domain is a connected component (through mesh edges) of vertices of
one strict sign. Its region is the exact sign set of the piecewise-linear
interpolant: tets are clipped along the zero level set, giving sub-tets,
interface triangles and clipped boundary triangles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .fem import p1_gradients
from .geometry import Geometry
from .mesh import TET_FACES, Mesh
from .quadrature import tet_rule, tri_rule

__all__ = [
    "NodalError",
    "NodalDomain",
    "NodalDecomposition",
    "decompose",
    "lp_exponent",
    "prescription_residual",
    "nodal_identity_residual",
    "obstruction_check",
    "ObstructionResult",
    "boundary_flux_invariant",
    "lp_density",
    "boundary_nodal_limit_check",
]

SIGN_TOL = 1e-9


class NodalError(ValueError):
    pass


@dataclass
class NodalDomain:
    label: int
    sign: int
    vertices: np.ndarray
    sub_tets: np.ndarray       # (S, 4, 3) coordinates
    sub_vals: np.ndarray       # (S, 4) values of u at the corners
    sub_parent: np.ndarray     # (S,) parent tet
    iface: np.ndarray          # (I, 3, 3) interface triangles
    iface_parent: np.ndarray   # (I,) tet whose gradient is used on this side
    bdry: np.ndarray           # (B, 3, 3) clipped boundary triangles
    bdry_vals: np.ndarray      # (B, 3)
    bdry_normal: np.ndarray    # (B, 3) Euclidean outward normals

    @property
    def volume(self) -> float:
        return float(np.sum(_tet_vol(self.sub_tets)))

    @property
    def interface_area(self) -> float:
        return float(np.sum(_tri_area(self.iface)))


@dataclass
class NodalDecomposition:
    u: np.ndarray
    sign: np.ndarray           # per vertex, -1/0/+1
    labels: np.ndarray         # per vertex domain id, -1 for zero vertices
    domains: list
    tol: float
    mesh: Mesh = field(repr=False, default=None)
    crossings: np.ndarray = field(repr=False, default=None)   # interior zero-set points

    @property
    def count(self) -> int:
        return len(self.domains)

    def domain_of_vertex(self, v: int) -> int:
        return int(self.labels[v])

    def cell_labels(self) -> np.ndarray:
        """Domain id per tet (domain of its first signed vertex; -1 if none)."""
        L = self.labels[self.mesh.tets]
        out = np.full(len(L), -1)
        for j in range(3, -1, -1):
            col = L[:, j]
            out = np.where(col >= 0, col, out)
        return out


def _tet_vol(T):
    a = T[:, 1] - T[:, 0]
    b = T[:, 2] - T[:, 0]
    c = T[:, 3] - T[:, 0]
    return np.abs(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0


def _tri_area(T):
    return 0.5 * np.linalg.norm(np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]), axis=1)


def _cross(pa, pb, ua, ub):
    t = ua / (ua - ub)
    return pa + t * (pb - pa)


def _clip_tet(P, U, s):
    """Sub-tets (coords, values) of the part of a tet where ``s*U > 0``.

    ``U`` already has near-zero values set to exactly 0.
    """
    S = s * U
    pos = [i for i in range(4) if S[i] > 0]
    neg = [i for i in range(4) if S[i] < 0]
    zer = [i for i in range(4) if S[i] == 0]
    if not pos:
        return []
    if not neg:
        return [(P, U)]

    def c(i, j):
        return _cross(P[i], P[j], U[i], U[j])

    out = []
    if len(pos) == 1:
        a = pos[0]
        pts = [P[a]] + [P[z] for z in zer] + [c(a, n) for n in neg]
        vals = [U[a]] + [0.0] * (len(zer) + len(neg))
        out.append((np.array(pts), np.array(vals)))
    elif len(pos) == 2 and len(neg) == 2:
        a, b = pos
        m, n = neg
        am, an, bm, bn = c(a, m), c(a, n), c(b, m), c(b, n)
        # prism with triangles (a, am, an) and (b, bm, bn)
        out.append((np.array([P[a], am, an, P[b]]), np.array([U[a], 0, 0, U[b]])))
        out.append((np.array([am, an, P[b], bm]), np.array([0, 0, U[b], 0])))
        out.append((np.array([an, P[b], bm, bn]), np.array([0, U[b], 0, 0])))
    elif len(pos) == 2 and len(neg) == 1:
        a, b = pos
        n = neg[0]
        z = zer[0]
        an, bn = c(a, n), c(b, n)
        # pyramid over quad (a, b, bn, an) with apex z
        out.append((np.array([P[a], P[b], bn, P[z]]), np.array([U[a], U[b], 0, 0])))
        out.append((np.array([P[a], bn, an, P[z]]), np.array([U[a], 0, 0, 0])))
    elif len(pos) == 3:
        a, b, d = pos
        n = neg[0]
        an, bn, dn = c(a, n), c(b, n), c(d, n)
        # prism with triangles (a, b, d) and (an, bn, dn)
        out.append((np.array([P[a], P[b], P[d], an]), np.array([U[a], U[b], U[d], 0])))
        out.append((np.array([P[b], P[d], an, bn]), np.array([U[b], U[d], 0, 0])))
        out.append((np.array([P[d], an, bn, dn]), np.array([U[d], 0, 0, 0])))
    return out


def _zero_polygon(P, U):
    """Triangles of the zero level set inside a tet with both signs present."""
    pos = [i for i in range(4) if U[i] > 0]
    neg = [i for i in range(4) if U[i] < 0]
    zer = [i for i in range(4) if U[i] == 0]
    pts = [P[z] for z in zer] + [_cross(P[a], P[b], U[a], U[b]) for a in pos for b in neg]
    if len(pts) == 3:
        return [np.array(pts)]
    if len(pts) == 4:
        # two positive and two negative vertices: quad (a-m, a-n, b-n, b-m)
        a, b = pos
        m, n = neg
        q = [_cross(P[a], P[m], U[a], U[m]), _cross(P[a], P[n], U[a], U[n]),
             _cross(P[b], P[n], U[b], U[n]), _cross(P[b], P[m], U[b], U[m])]
        return [np.array([q[0], q[1], q[2]]), np.array([q[0], q[2], q[3]])]
    return []


def _clip_tri(P, U, s):
    S = s * U
    pos = [i for i in range(3) if S[i] > 0]
    neg = [i for i in range(3) if S[i] < 0]
    zer = [i for i in range(3) if S[i] == 0]
    if not pos:
        return []
    if not neg:
        return [(P, U)]
    if len(pos) == 1:
        a = pos[0]
        pts = [P[a]] + [P[z] for z in zer] + [_cross(P[a], P[n], U[a], U[n]) for n in neg]
        return [(np.array(pts), np.array([U[a], 0.0, 0.0]))]
    a, b = pos
    n = neg[0]
    an, bn = _cross(P[a], P[n], U[a], U[n]), _cross(P[b], P[n], U[b], U[n])
    return [(np.array([P[a], P[b], bn]), np.array([U[a], U[b], 0.0])),
            (np.array([P[a], bn, an]), np.array([U[a], 0.0, 0.0]))]


def decompose(mesh: Mesh, u, tol: float = SIGN_TOL) -> NodalDecomposition:
    """Nodal domains of the P1 function with vertex values ``u``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_vertices,):
        raise NodalError("u must have one value per vertex")
    umax = np.max(np.abs(u))
    if umax == 0.0:
        raise NodalError("u vanishes identically")
    tau_u = tol * umax
    sign = np.where(u > tau_u, 1, np.where(u < -tau_u, -1, 0))
    uz = np.where(sign == 0, 0.0, u)

    E = mesh.edges
    same = (sign[E[:, 0]] == sign[E[:, 1]]) & (sign[E[:, 0]] != 0)
    Es = E[same]
    n = mesh.n_vertices
    adj = sp.coo_matrix((np.ones(len(Es)), (Es[:, 0], Es[:, 1])), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    signed = np.flatnonzero(sign != 0)
    # relabel components by smallest vertex index so numbering is canonical
    # for a fixed vertex order
    roots = {}
    labels = np.full(n, -1)
    for v in signed:
        c = comp[v]
        if c not in roots:
            roots[c] = len(roots)
        labels[v] = roots[c]
    nd = len(roots)
    dom_sign = np.zeros(nd, dtype=int)
    dom_sign[labels[signed]] = sign[signed]

    V = mesh.vertices
    T = mesh.tets
    S = sign[T]
    sub = [[] for _ in range(nd)]
    iface = [[] for _ in range(nd)]
    crossings = []

    # whole tets: no sign change
    has_pos = (S > 0).any(axis=1)
    has_neg = (S < 0).any(axis=1)
    whole = has_pos ^ has_neg
    L = labels[T]
    first = np.where(L >= 0, L, np.iinfo(np.int64).max).min(axis=1)
    for d, t in zip(first[whole], np.flatnonzero(whole)):
        sub[d].append((V[T[t]], uz[T[t]], t))

    mixed = np.flatnonzero(has_pos & has_neg)
    for t in mixed:
        P = V[T[t]]
        U = uz[T[t]]
        for s in (1, -1):
            d = L[t][S[t] == s][0]
            for Pc, Uc in _clip_tet(P, U, s):
                sub[d].append((Pc, Uc, t))
        dp = L[t][S[t] == 1][0]
        dn = L[t][S[t] == -1][0]
        for tri in _zero_polygon(P, U):
            iface[dp].append((tri, t))
            iface[dn].append((tri, t))
            crossings.append(tri)

    # faces that are entirely zero between tets of opposite sign
    Fz = _zero_faces(mesh, sign)
    for tri_idx, tp, tn in Fz:
        tri = V[tri_idx]
        dp = first[tp]
        dn = first[tn]
        iface[dp].append((tri, tp))
        iface[dn].append((tri, tn))
        crossings.append(tri)

    # boundary triangles
    bd = [[] for _ in range(nd)]
    BF = mesh.boundary_faces
    BN = mesh.boundary_normals
    SB = sign[BF]
    LB = labels[BF]
    for f in np.flatnonzero((SB != 0).any(axis=1)):
        P = V[BF[f]]
        U = uz[BF[f]]
        for s in (1, -1):
            if not (SB[f] == s).any():
                continue
            d = LB[f][SB[f] == s][0]
            for Pc, Uc in _clip_tri(P, U, s):
                bd[d].append((Pc, Uc, BN[f]))

    domains = []
    for d in range(nd):
        st = sub[d]
        it = iface[d]
        bt = bd[d]
        domains.append(NodalDomain(
            d, int(dom_sign[d]), np.flatnonzero(labels == d),
            np.array([x[0] for x in st]).reshape(-1, 4, 3),
            np.array([x[1] for x in st], dtype=float).reshape(-1, 4),
            np.array([x[2] for x in st], dtype=np.int64),
            np.array([x[0] for x in it]).reshape(-1, 3, 3),
            np.array([x[1] for x in it], dtype=np.int64),
            np.array([x[0] for x in bt]).reshape(-1, 3, 3),
            np.array([x[1] for x in bt], dtype=float).reshape(-1, 3),
            np.array([x[2] for x in bt]).reshape(-1, 3),
        ))
    cr = np.array(crossings).reshape(-1, 3, 3)
    return NodalDecomposition(u, sign, labels, domains, tau_u, mesh, cr)


def _zero_faces(mesh: Mesh, sign):
    """Interior faces with three zero vertices separating opposite signs."""
    T = mesh.tets
    faces = T[:, TET_FACES]                        # (nt, 4, 3)
    fs = sign[faces]
    zero_face = (fs == 0).all(axis=2)
    if not zero_face.any():
        return []
    tt, ff = np.nonzero(zero_face)
    opp = T[tt, ff]  # vertex opposite face ff is vertex ff (TET_FACES omits it)
    s_opp = sign[opp]
    keys = np.sort(faces[tt, ff], axis=1)
    out = []
    by = {}
    for k, t, s in zip(map(tuple, keys), tt, s_opp):
        by.setdefault(k, []).append((t, s))
    for k, lst in by.items():
        if len(lst) != 2:
            continue
        (t1, s1), (t2, s2) = lst
        if s1 * s2 < 0:
            tp, tn = (t1, t2) if s1 > 0 else (t2, t1)
            out.append((np.array(k), tp, tn))
    return out


# ---------------------------------------------------------------------------
# integration helpers over clipped pieces


def _sub_integral(G: Geometry, T, Uv, f, degree):
    """``sum over sub-tets of int f(points, u) dv_g``."""
    if len(T) == 0:
        return 0.0
    bary, w = tet_rule(degree)
    pts = np.einsum("qa,tad->tqd", bary, T).reshape(-1, 3)
    uq = np.einsum("qa,ta->tq", bary, Uv).ravel()
    _, sq = G.metric(pts)
    vals = f(pts, uq) * sq
    return float(((vals.reshape(len(T), -1) * w[None, :]).sum(axis=1) * _tet_vol(T)).sum())


def _tri_integral(G: Geometry, T, Uv, normals, f, degree):
    if len(T) == 0:
        return 0.0
    bary, w = tri_rule(degree)
    pts = np.einsum("qa,tad->tqd", bary, T).reshape(-1, 3)
    uq = np.einsum("qa,ta->tq", bary, Uv).ravel() if Uv is not None else None
    dens = G.area_density(pts, np.repeat(normals, len(w), axis=0))
    vals = f(pts, uq) * dens
    return float(((vals.reshape(len(T), -1) * w[None, :]).sum(axis=1) * _tri_area(T)).sum())


def _iface_normals(T):
    n = np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0])
    return n / np.linalg.norm(n, axis=1)[:, None]


def _grad_norm_g(G: Geometry, grads, pts):
    """Metric norm of Euclidean covectors ``grads`` at ``pts``: sqrt(g^{ij} d_i u d_j u)."""
    g, _ = G.metric(pts)
    gi = np.linalg.inv(g)
    return np.sqrt(np.einsum("ni,nij,nj->n", grads, gi, grads))


def _iface_flux(mesh: Mesh, G: Geometry, dom: NodalDomain, u, weight, degree=2, grads=None):
    """``int_interface weight |du|_g dsigma_g`` over the domain's interface."""
    if len(dom.iface) == 0:
        return 0.0
    if grads is None:
        grads = p1_gradients(mesh)
    gu = np.einsum("tad,ta->td", grads[dom.iface_parent], u[mesh.tets[dom.iface_parent]])
    nq = len(tri_rule(degree)[1])
    gq = np.repeat(gu, nq, axis=0)

    def f(pts, _):
        return weight(pts) * _grad_norm_g(G, gq, pts)

    return _tri_integral(G, dom.iface, None, _iface_normals(dom.iface), f, degree)


def _domain(dec: NodalDecomposition, Omega):
    if isinstance(Omega, NodalDomain):
        if Omega.label >= dec.count or dec.domains[Omega.label] is not Omega:
            raise NodalError("domain does not belong to this decomposition")
        return Omega
    i = int(Omega)
    if not 0 <= i < dec.count:
        raise NodalError(f"no nodal domain {i}")
    return dec.domains[i]


def _const(c):
    return lambda pts: np.full(len(pts), float(c))


# ---------------------------------------------------------------------------
# identities


def lp_exponent(n: int) -> float:
    """``2n/(n-2)``."""
    if n < 3:
        raise ValueError("dimension must be >= 3")
    return 2.0 * n / (n - 2)


def _near_kernel_check(mesh, G, u, pair, tau):
    if pair is None:
        return
    from .fem import rayleigh_quotient
    rq = rayleigh_quotient(mesh, G, u, pair)
    if abs(rq) > 10 * tau:
        raise NodalError(f"u is not a near-kernel element (Rayleigh quotient {rq:.3g})")


def prescription_residual(mesh: Mesh, G: Geometry, u, degree: int = 5, pair=None,
                          tau: float | None = None) -> float:
    """``c_n int R u dv_g + 2 c_n int_bdry h u dsigma_g``, integrated to ``degree``.

    If ``pair`` (the Robin(0) pencil) is given, ``u`` is first checked to be
    a near-kernel element at tolerance ``tau``.
    """
    u = np.asarray(u, dtype=float)
    if pair is not None:
        from .eigenlin import default_tau
        _near_kernel_check(mesh, G, u, pair, default_tau(pair.A, pair.M) if tau is None else tau)
    T = mesh.vertices[mesh.tets]
    vol = _sub_integral(G, T, u[mesh.tets], lambda p, uq: G.scalar_curvature(p) * uq, degree)
    F = mesh.boundary_faces
    bd = _tri_integral(G, mesh.vertices[F], u[F], mesh.boundary_normals,
                       lambda p, uq: G.mean_curvature(p) * uq, degree)
    return G.c_n * vol + G.b_n * bd


def nodal_identity_residual(mesh: Mesh, G: Geometry, u, v, Omega, dec: NodalDecomposition | None = None,
                            degree: int = 4) -> float:
    """Residual of the nodal-domain identity for a kernel element ``u``.

    ``int_Om |u| P(v) dv + int_{interface} v |du| dsigma + int_{Om cap bdry} |u| B(v) dsigma``
    with ``P v = Lap_g v + c_n R v`` and ``B v = d_nu v + 2 c_n h v`` taken
    pointwise from the jets of the smooth test field ``v``.
    """
    u = np.asarray(u, dtype=float)
    dec = decompose(mesh, u) if dec is None else dec
    dom = _domain(dec, Omega)
    interior = _sub_integral(G, dom.sub_tets, dom.sub_vals,
                             lambda p, uq: np.abs(uq) * G.conformal_operator(v, p), degree)
    flux = _iface_flux(mesh, G, dom, u, lambda p: v.value(p), degree)
    bdry = _tri_integral(G, dom.bdry, dom.bdry_vals, dom.bdry_normal,
                         lambda p, uq: np.abs(uq) * G.robin_operator(v, p), degree)
    return interior + flux + bdry


@dataclass
class ObstructionResult:
    lhs: float                 # boundary weight with the exponent as printed, (n+1)/2
    lhs_alt: float             # boundary weight with exponent n/2
    margin: float
    strictly_negative: bool    # judged on lhs
    strictly_negative_alt: bool

    def __iter__(self):
        return iter((self.lhs, self.strictly_negative))


def obstruction_check(mesh: Mesh, G: Geometry, omega, u, Omega, dec: NodalDecomposition | None = None,
                      C: float = 0.1, degree: int = 4, M=None) -> ObstructionResult:
    """Weighted curvature integral of ``push_conformal(G, omega)`` over a nodal domain.

    ``lhs = int_Om Q |u| w_i dv_g + int_{Om cap bdry} f |u| w_b dsigma_g`` with
    ``(Q, f)`` the scalar and mean curvature of the deformed metric,
    ``w_i = c_n exp((n/2 + 1) omega)`` and ``w_b = b_n exp(e omega)``; ``lhs``
    uses ``e = (n+1)/2`` and ``lhs_alt`` uses ``e = n/2``. A value counts as
    strictly negative when below ``-C h ||u||`` (``M``-norm if ``M`` given,
    else the ``L^2(g)`` norm of the P1 function).
    """
    u = np.asarray(u, dtype=float)
    dec = decompose(mesh, u) if dec is None else dec
    dom = _domain(dec, Omega)
    Gh = G.push_conformal(omega)
    n = G.n
    c_n, b_n = G.c_n, G.b_n
    vol = _sub_integral(G, dom.sub_tets, dom.sub_vals,
                        lambda p, uq: Gh.scalar_curvature(p) * np.abs(uq) * c_n
                        * np.exp((n / 2 + 1) * omega.value(p)), degree)

    def bd(e):
        return _tri_integral(G, dom.bdry, dom.bdry_vals, dom.bdry_normal,
                             lambda p, uq: Gh.mean_curvature(p) * np.abs(uq) * b_n
                             * np.exp(e * omega.value(p)), degree)

    lhs = vol + bd((n + 1) / 2)
    alt = vol + bd(n / 2)
    if M is not None:
        norm = float(np.sqrt(u @ (M @ u)))
    else:
        norm = float(np.sqrt(_sub_integral_all(mesh, G, u)))
    margin = C * mesh.h * norm
    return ObstructionResult(lhs, alt, margin, bool(lhs < -margin), bool(alt < -margin))


def _sub_integral_all(mesh, G, u, degree=2):
    bary, w = tet_rule(degree)
    pts = np.einsum("qa,tad->tqd", bary, mesh.vertices[mesh.tets]).reshape(-1, 3)
    uq = np.einsum("qa,ta->tq", bary, u[mesh.tets]).ravel()
    _, sq = G.metric(pts)
    return float(((uq**2 * sq).reshape(mesh.n_tets, -1) * w).sum(axis=1) @ mesh.volumes)


def boundary_flux_invariant(mesh: Mesh, G: Geometry, omega, u, Omega,
                            dec: NodalDecomposition | None = None, degree: int = 4):
    """``(lhs, rhs)`` of the conformally invariant interface flux.

    ``lhs = -int_interface exp((1 - n/2) omega) |d u_hat|_{g_hat} dsigma_{g_hat}``
    at ``G_hat = push_conformal(G, omega)`` with ``u_hat`` the vertexwise
    transport ``exp(-(n/2-1) omega) u``; ``rhs`` is the curvature side at ``G``.
    """
    u = np.asarray(u, dtype=float)
    dec = decompose(mesh, u) if dec is None else dec
    dom = _domain(dec, Omega)
    n = G.n
    Gh = G.push_conformal(omega)
    uh = np.exp(-(n / 2 - 1) * omega.value(mesh.vertices)) * u
    lhs = -_iface_flux(mesh, Gh, dom, uh, lambda p: np.exp((1 - n / 2) * omega.value(p)), degree)
    vol = _sub_integral(G, dom.sub_tets, dom.sub_vals,
                        lambda p, uq: np.abs(uq) * G.scalar_curvature(p), degree)
    bd = _tri_integral(G, dom.bdry, dom.bdry_vals, dom.bdry_normal,
                       lambda p, uq: np.abs(uq) * G.mean_curvature(p), degree)
    rhs = G.c_n * vol + G.b_n * bd
    return float(lhs), float(rhs)


def lp_density(mesh: Mesh, G: Geometry, u, region=None, dec: NodalDecomposition | None = None,
               degree: int = 6) -> float:
    """``int_region |u|^p dv_g`` with ``p = 2n/(n-2)``; region is None (all of M) or a domain."""
    u = np.asarray(u, dtype=float)
    p = lp_exponent(G.n)
    if region is None:
        T = mesh.vertices[mesh.tets]
        return _sub_integral(G, T, u[mesh.tets], lambda x, uq: np.abs(uq) ** p, degree)
    dec = decompose(mesh, u) if dec is None else dec
    dom = _domain(dec, region)
    return _sub_integral(G, dom.sub_tets, dom.sub_vals, lambda x, uq: np.abs(uq) ** p, degree)


def boundary_nodal_limit_check(mesh: Mesh, G: Geometry, u, dec: NodalDecomposition | None = None,
                               factor: float = 2.0) -> bool:
    """Every boundary vertex where ``|u| <= tau_u`` lies within ``factor * h`` of
    the interior zero level set."""
    u = np.asarray(u, dtype=float)
    dec = decompose(mesh, u) if dec is None else dec
    bz = mesh.boundary_vertices[dec.sign[mesh.boundary_vertices] == 0]
    if len(bz) == 0:
        return True
    pts = dec.crossings.reshape(-1, 3)
    if len(pts):
        # keep only points off the boundary surface
        bset = cKDTree(mesh.vertices[mesh.boundary_vertices])
        d, _ = bset.query(pts)
        pts = pts[d > 1e-12]
    iz = mesh.interior_vertices[dec.sign[mesh.interior_vertices] == 0]
    pts = np.vstack([pts, mesh.vertices[iz]]) if len(iz) else pts
    if len(pts) == 0:
        return False
    d, _ = cKDTree(pts).query(mesh.vertices[bz])
    return bool(np.all(d <= factor * mesh.h))
