"""Tetrahedral meshes of the supported solids, plus Gmsh/VTK file I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh",
    "MeshError",
    "LoadReport",
    "make_box",
    "make_ball",
    "make_shell",
    "ball_divisions",
    "load_gmsh",
    "write_gmsh",
    "write_vtk",
]

# local vertex triples of the four faces; face k is opposite vertex k
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


class MeshError(ValueError):
    pass


def _signed_volumes(vertices, tets):
    p = vertices[tets]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    c = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


class Mesh:
    """Tetrahedral complex with positively oriented tets.

    Derived connectivity (boundary faces, edges, adjacency) is computed lazily
    and cached; the arrays themselves are treated as read-only.
    """

    def __init__(self, vertices, tets):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (N, 3)")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise MeshError("tets must have shape (M, 4)")
        vol = _signed_volumes(self.vertices, self.tets)
        if np.any(vol <= 0):
            raise MeshError(f"{int(np.sum(vol <= 0))} tets with non-positive volume")
        self.vertices.setflags(write=False)
        self.tets.setflags(write=False)

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_tets={self.n_tets}, h={self.h:.4g})"

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    @cached_property
    def volumes(self) -> np.ndarray:
        return _signed_volumes(self.vertices, self.tets)

    @cached_property
    def _faces(self):
        all_faces = self.tets[:, TET_FACES].reshape(-1, 3)
        owner = np.repeat(np.arange(self.n_tets), 4)
        key = np.sort(all_faces, axis=1)
        _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        once = counts[inverse] == 1
        if np.any(counts > 2):
            raise MeshError("non-manifold mesh: a face is shared by more than two tets")
        faces = all_faces[once]
        own = owner[once]
        # orient outward: normal must point away from the opposite vertex
        p = self.vertices
        n = np.cross(p[faces[:, 1]] - p[faces[:, 0]], p[faces[:, 2]] - p[faces[:, 0]])
        opp = self.tets[own, np.nonzero(once.reshape(-1, 4))[1]]
        flip = np.einsum("ij,ij->i", n, p[opp] - p[faces[:, 0]]) > 0
        faces[flip] = faces[flip][:, [0, 2, 1]]
        n_interior = int(np.sum(counts == 2))
        return faces, own, n_interior

    @property
    def boundary_faces(self) -> np.ndarray:
        return self._faces[0]

    @property
    def face_owner(self) -> np.ndarray:
        return self._faces[1]

    @property
    def n_interior_faces(self) -> int:
        return self._faces[2]

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        p = self.vertices
        f = self.boundary_faces
        n = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    @cached_property
    def boundary_areas(self) -> np.ndarray:
        p = self.vertices
        f = self.boundary_faces
        n = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
        return 0.5 * np.linalg.norm(n, axis=1)

    @cached_property
    def is_boundary(self) -> np.ndarray:
        flag = np.zeros(self.n_vertices, dtype=bool)
        flag[self.boundary_faces.ravel()] = True
        return flag

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.nonzero(self.is_boundary)[0]

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.nonzero(~self.is_boundary)[0]

    @cached_property
    def edges(self) -> np.ndarray:
        pairs = self.tets[:, [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]].reshape(-1, 2)
        return np.unique(np.sort(pairs, axis=1), axis=0)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e), dtype=np.int8)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def h(self) -> float:
        e = self.edges
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    def permuted(self, perm) -> "Mesh":
        """Relabel vertices: new vertex ``i`` is old vertex ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Mesh(self.vertices[perm], inv[self.tets])


# ---------------------------------------------------------------------------
# structured generators


def _kuhn_tets(d, mirrored):
    """Split a d^3 grid of cells into 6 tets each, along one diagonal per cell.

    With ``mirrored`` the diagonal of every cell points away from the grid
    centre, which keeps the complex conforming and reflection symmetric.
    """
    idx = np.arange(d)
    I, J, K = np.meshgrid(idx, idx, idx, indexing="ij")
    cells = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
    if mirrored:
        start = (cells < d // 2).astype(np.int64)
        step = 1 - 2 * start
    else:
        start = np.zeros_like(cells)
        step = np.ones_like(cells)

    def vid(c):
        return (c[:, 0] * (d + 1) + c[:, 1]) * (d + 1) + c[:, 2]

    tets = []
    for perm in ([0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]):
        c = cells + start
        path = [vid(c)]
        for a in perm:
            c = c.copy()
            c[:, a] += step[:, a]
            path.append(vid(c))
        tets.append(np.stack(path, axis=1))
    return np.concatenate(tets, axis=0)


def _grid(d, lo, hi):
    t = np.linspace(lo, hi, d + 1)
    X, Y, Z = np.meshgrid(t, t, t, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


def _orient(vertices, tets):
    tets = tets.copy()
    neg = _signed_volumes(vertices, tets) < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    return tets


def _compact(vertices, tets):
    used = np.unique(tets)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return vertices[used], remap[tets]


def make_box(divisions: int, lo=0.0, hi=1.0) -> Mesh:
    """Cube ``[lo, hi]^3`` with ``divisions`` cells per axis, 6 tets per cell."""
    d = int(divisions)
    if d < 1:
        raise MeshError("divisions must be >= 1")
    v = _grid(d, lo, hi)
    return Mesh(v, _orient(v, _kuhn_tets(d, mirrored=False)))


def ball_divisions(level: int) -> int:
    if level < 0:
        raise MeshError("refinement level must be >= 0")
    return 2 ** (level + 1)


def make_ball(level: int | None = None, *, divisions: int | None = None, radius: float = 1.0) -> Mesh:
    """Ball mesh from the cube ``[-1, 1]^3`` by radial max-norm scaling.

    A grid point ``p`` maps to ``radius * p * |p|_inf / |p|_2``, the only
    mapping used here: cube faces land exactly on the sphere. Refinement
    ``level`` uses ``2**(level+1)`` cells per axis.
    """
    d = ball_divisions(level if level is not None else 2) if divisions is None else int(divisions)
    if d < 2 or d % 2:
        raise MeshError("ball divisions must be even and >= 2")
    v = _grid(d, -1.0, 1.0)
    tets = _kuhn_tets(d, mirrored=True)
    r2 = np.linalg.norm(v, axis=1)
    rinf = np.max(np.abs(v), axis=1)
    scale = np.divide(rinf, r2, out=np.zeros_like(r2), where=r2 > 0)
    v = radius * v * scale[:, None]
    on_sphere = rinf == 1.0
    v[on_sphere] *= radius / np.linalg.norm(v[on_sphere], axis=1)[:, None]
    return Mesh(v, _orient(v, tets))


def make_shell(level: int | None = None, *, divisions: int | None = None,
               inner: float = 0.5, outer: float = 1.0) -> Mesh:
    """Spherical shell ``inner <= |p| <= outer``.

    Built from the cube grid with the inner half-cube removed; the max-norm
    shell ``[1/2, 1]`` is mapped linearly onto ``[inner, outer]`` radially.
    """
    d = 2 ** (level + 2) if divisions is None else int(divisions)
    if level is None and divisions is None:
        d = 8
    if d < 4 or d % 4:
        raise MeshError("shell divisions must be a positive multiple of 4")
    if not 0 < inner < outer:
        raise MeshError("need 0 < inner < outer")
    v = _grid(d, -1.0, 1.0)
    tets = _kuhn_tets(d, mirrored=True)
    rinf = np.max(np.abs(v), axis=1)
    keep = np.max(rinf[tets], axis=1) > 0.5 + 1e-12
    v, tets = _compact(v, tets[keep])
    rinf = np.max(np.abs(v), axis=1)
    r = inner + (rinf - 0.5) * 2.0 * (outer - inner)
    v = v * (r / np.linalg.norm(v, axis=1))[:, None]
    return Mesh(v, _orient(v, tets))


# ---------------------------------------------------------------------------
# file formats


@dataclass
class LoadReport:
    n_nodes: int = 0
    n_tets: int = 0
    n_triangles: int = 0
    flipped: list = field(default_factory=list)

    @property
    def orientation_fixed(self) -> bool:
        return bool(self.flipped)


def _section(lines, name):
    try:
        start = lines.index(f"${name}")
        end = lines.index(f"$End{name}", start)
    except ValueError:
        raise MeshError(f"missing ${name} section") from None
    return lines[start + 1:end]


def load_gmsh(text: str):
    """Read Gmsh MSH 2.2 ASCII (tets, optionally boundary triangles).

    Returns ``(mesh, report)``. Inverted tets are repaired by swapping two
    vertices and listed in the report; provided triangles must be boundary
    faces of the rebuilt mesh.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    fmt = _section(lines, "MeshFormat")
    parts = fmt[0].split()
    if not parts or not parts[0].startswith("2."):
        raise MeshError(f"unsupported MSH version {parts[0] if parts else '?'}")
    if len(parts) > 1 and parts[1] != "0":
        raise MeshError("binary MSH files are not supported")

    nodes = _section(lines, "Nodes")
    n_nodes = int(nodes[0])
    ids = np.empty(n_nodes, dtype=np.int64)
    coords = np.empty((n_nodes, 3))
    for i, ln in enumerate(nodes[1:1 + n_nodes]):
        f = ln.split()
        ids[i] = int(f[0])
        coords[i] = [float(t) for t in f[1:4]]
    index = {int(k): i for i, k in enumerate(ids)}

    elems = _section(lines, "Elements")
    n_el = int(elems[0])
    tets, tet_ids, tris = [], [], []
    for ln in elems[1:1 + n_el]:
        f = [int(t) for t in ln.split()]
        etype, ntags = f[1], f[2]
        conn = f[3 + ntags:]
        try:
            conn = [index[c] for c in conn]
        except KeyError as exc:
            raise MeshError(f"element {f[0]} references unknown node {exc.args[0]}") from None
        if etype == 4:
            tets.append(conn[:4])
            tet_ids.append(f[0])
        elif etype == 2:
            tris.append(conn[:3])
        else:
            raise MeshError(f"unsupported element type {etype}")
    if not tets:
        raise MeshError("no tetrahedra in file")
    tets = np.array(tets, dtype=np.int64)
    report = LoadReport(n_nodes=n_nodes, n_tets=len(tets), n_triangles=len(tris))
    vol = _signed_volumes(coords, tets)
    if np.any(vol == 0):
        raise MeshError("degenerate tet with zero volume")
    bad = np.nonzero(vol < 0)[0]
    report.flipped = [int(tet_ids[i]) for i in bad]
    tets = _orient(coords, tets)
    mesh = Mesh(coords, tets)
    if tris:
        have = {tuple(sorted(t)) for t in mesh.boundary_faces.tolist()}
        for t in tris:
            if tuple(sorted(t)) not in have:
                raise MeshError(f"inconsistent boundary: triangle {t} is not a boundary face")
    return mesh, report


def write_gmsh(mesh: Mesh, with_boundary: bool = True) -> str:
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    out += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.vertices.tolist())]
    out += ["$EndNodes", "$Elements"]
    tris = mesh.boundary_faces if with_boundary else np.zeros((0, 3), dtype=np.int64)
    out.append(str(len(tris) + mesh.n_tets))
    k = 1
    for t in (tris + 1).tolist():
        out.append(f"{k} 2 2 1 1 {t[0]} {t[1]} {t[2]}")
        k += 1
    for t in (mesh.tets + 1).tolist():
        out.append(f"{k} 4 2 2 1 {t[0]} {t[1]} {t[2]} {t[3]}")
        k += 1
    out.append("$EndElements")
    return "\n".join(out) + "\n"


def write_vtk(mesh: Mesh, point_data=None, cell_data=None, title="conflab") -> str:
    """Legacy ASCII VTK unstructured grid with optional scalar fields."""
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_vertices} double"]
    out += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out.append(f"CELLS {mesh.n_tets} {5 * mesh.n_tets}")
    out += [f"4 {a} {b} {c} {d}" for a, b, c, d in mesh.tets.tolist()]
    out.append(f"CELL_TYPES {mesh.n_tets}")
    out += ["10"] * mesh.n_tets
    for header, size, data in (("POINT_DATA", mesh.n_vertices, point_data),
                               ("CELL_DATA", mesh.n_tets, cell_data)):
        if not data:
            continue
        out.append(f"{header} {size}")
        for name, values in data.items():
            values = np.asarray(values)
            if values.shape != (size,):
                raise MeshError(f"field {name!r} has shape {values.shape}, expected ({size},)")
            kind = "int" if np.issubdtype(values.dtype, np.integer) else "double"
            out += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
            out += [repr(v) if kind == "double" else str(v) for v in values.tolist()]
    return "\n".join(out) + "\n"
