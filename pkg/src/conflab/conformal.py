"""Boundary value problems of the conformal Laplacian built from assembled forms.

Robin families, the conformal Dirichlet-to-Robin map (and its repaired
version when the Dirichlet problem has a kernel), kernel extraction,
kernel tuning and the negative-eigenvalue counts relating all of them.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq, linear_sum_assignment

from .eigenlin import (
    SpectralResult,
    default_tau,
    eigs,
    negative_inertia,
)
from .fem import Forms, OperatorPair, assemble_forms
from .fieldexpr import ScalarField
from .geometry import Geometry, TrustedBase
from .mesh import Mesh

__all__ = [
    "RobinFamily",
    "robin_family",
    "SteklovOperator",
    "steklov",
    "kernel_of",
    "PotentialFamily",
    "TuneResult",
    "TuningError",
    "tune_to_kernel",
    "FriedlanderCounts",
    "friedlander_counts",
]


def _forms(mesh, G, forms):
    return forms if forms is not None else assemble_forms(mesh, G)


# ---------------------------------------------------------------------------
# Robin family


@dataclass
class RobinFamily:
    s_values: np.ndarray
    results: list           # SpectralResult per s, columns ordered by curve
    curves: np.ndarray      # (len(s), k) eigenvalue curves

    def strictly_increasing(self, curve: int = 0) -> bool:
        return bool(np.all(np.diff(self.curves[:, curve]) > 0))


def robin_family(mesh: Mesh, G: Geometry, s_values, k: int = 1, forms: Forms | None = None,
                 track: bool = True) -> RobinFamily:
    """Spectra of the Robin(s) pencils, with curves matched across ``s``.

    Consecutive spectra are matched by the assignment maximising the
    ``M``-overlap of eigenvectors; ties are broken by eigenvalue proximity.
    """
    s_values = np.asarray(list(s_values), dtype=float)
    if not np.all(np.isfinite(s_values)):
        raise ValueError("Robin parameters must be finite")
    F = _forms(mesh, G, forms)
    kk = k + 2 if track else k
    results, curves = [], []
    prev = None
    for s in s_values:
        pair = F.operator("robin", s)
        r = eigs(pair, min(kk, pair.size))
        if prev is not None and track:
            O = np.abs(prev.vectors.T @ (pair.M @ r.vectors))
            prox = np.abs(prev.values[:, None] - r.values[None, :])
            cost = -O + 1e-6 * prox / (1.0 + np.abs(prev.values[:, None]))
            rows, cols = linear_sum_assignment(cost)
            perm = cols[np.argsort(rows)]
            r = SpectralResult(r.values[perm], r.vectors[:, perm], r.residuals[perm], r.solver, r.tau)
        results.append(r)
        curves.append(r.values[:k])
        prev = r
    return RobinFamily(s_values, results, np.array(curves))


# ---------------------------------------------------------------------------
# Dirichlet-to-Robin map


@dataclass
class SteklovOperator:
    D: np.ndarray                 # symmetric, on the boundary coordinates
    Mb: np.ndarray                # boundary mass in the same coordinates
    hat: bool                     # repaired construction used
    boundary: np.ndarray          # boundary vertex indices
    kernel_basis: np.ndarray      # near-kernel of the Dirichlet pencil (interior DOFs)
    S_basis: np.ndarray           # columns span S in boundary coordinates
    tau: float

    def spectrum(self):
        return sl.eigh(self.D, self.Mb, eigvals_only=True)

    def eig(self):
        return sl.eigh(self.D, self.Mb)

    def negative_count(self, tau: float | None = None) -> int:
        tau = self.tau_default if tau is None else tau
        return int(negative_inertia(self.D, self.Mb, tau).n_neg)

    @property
    def tau_default(self) -> float:
        return default_tau(self.D, self.Mb)

    @property
    def codim(self) -> int:
        """Dimension of the complement of S in the boundary space."""
        return len(self.boundary) - self.S_basis.shape[1]


def steklov(mesh: Mesh, G: Geometry, tau: float | None = None, forms: Forms | None = None,
            check_ambiguity: bool = True) -> SteklovOperator:
    """Schur complement of the Robin(0) form onto the boundary DOFs.

    When the interior block has a near-kernel ``W`` (``|lam| <= tau``) the
    map is restricted to ``S = {y : y^T A_bi W = 0}`` and the interior solve
    is done on the complement of ``W`` through a bordered system.
    """
    F = _forms(mesh, G, forms)
    robin = F.operator("robin", 0.0)
    dirich = F.operator("dirichlet")
    A = robin.A.tocsr()
    I = mesh.interior_vertices
    B = mesh.boundary_vertices
    Aii = dirich.A.tocsc()
    Mii = dirich.M
    Aib = A[I][:, B]
    Abb = A[B][:, B].toarray()
    Mb = F.bmass.tocsr()[B][:, B].toarray()
    if tau is None:
        tau = default_tau(dirich.A, dirich.M)
    W = kernel_of(dirich, tau, check_ambiguity=check_ambiguity)
    Aib_d = Aib.toarray()
    if W.shape[1] == 0:
        X = spla.splu(Aii).solve(Aib_d)
        D = Abb - Aib_d.T @ X
        Z = np.eye(len(B))
        hat = False
        Mz = Mb
    else:
        C = Aib_d.T @ W                      # (nb, k): discrete conormal traces
        Z = sl.null_space(C.T)               # S basis
        MW = Mii @ W
        k = W.shape[1]
        bord = sp.bmat([[Aii, sp.csc_matrix(MW)], [sp.csc_matrix(MW.T), None]]).tocsc()
        Y = Aib_d @ Z
        rhs = np.vstack([Y, np.zeros((k, Y.shape[1]))])
        X = spla.splu(bord).solve(rhs)[: len(I)]
        D = Z.T @ Abb @ Z - Y.T @ X
        Mz = Z.T @ Mb @ Z
        hat = True
    D = 0.5 * (D + D.T)
    Mz = 0.5 * (Mz + Mz.T)
    return SteklovOperator(D, Mz, hat, B, W, Z, float(tau))


# ---------------------------------------------------------------------------
# kernels and tuning


def kernel_of(pair: OperatorPair, tau: float | None = None, check_ambiguity: bool = True) -> np.ndarray:
    """``M``-orthonormal eigenvectors with ``|lam| <= tau`` (DOF numbering); maybe empty."""
    if tau is None:
        tau = default_tau(pair.A, pair.M)
    ni = negative_inertia(pair, tau=tau, check_ambiguity=check_ambiguity)
    if ni.n_zero == 0:
        return np.zeros((pair.size, 0))
    r = eigs(pair, ni.n_neg + ni.n_zero, tau=tau)
    sel = np.abs(r.values) <= tau
    return r.vectors[:, sel]


# below this size the dense solver is faster than shift-invert iterations
SMALL = 600


class TuningError(RuntimeError):
    pass


class PotentialFamily:
    """Geometries whose base scalar curvature is ``R0 + t * well``.

    The metric does not depend on ``t``, so every form except the potential
    is assembled once and the potential is affine in ``t``.
    """

    def __init__(self, mesh: Mesh, base: Geometry, well: ScalarField):
        self.mesh = mesh
        self.base = base
        self.well = well
        self._f0 = assemble_forms(mesh, self.geometry(0.0))
        f1 = assemble_forms(mesh, self.geometry(1.0))
        self._dV = (f1.potential - self._f0.potential).tocsr()

    def geometry(self, t: float) -> Geometry:
        b = self.base.base
        R0 = getattr(b, "R", None)
        metric = getattr(b, "metric", None)
        R = self.well * float(t) if R0 is None else R0 + self.well * float(t)
        h = getattr(b, "h", None)
        tb = TrustedBase(metric, R, h)
        return Geometry(self.base.n, tb, self.base.boundary, self.base.conformal)

    def forms(self, t: float) -> Forms:
        return replace(self._f0, potential=(self._f0.potential + float(t) * self._dV).tocsr(),
                       geometry=self.geometry(t))

    def pair(self, t: float, bc="robin", s: float = 0.0) -> OperatorPair:
        return self.forms(t).operator(bc, s)


@dataclass
class TuneResult:
    t: float
    value: float              # lambda_k at t
    vector: np.ndarray        # eigenvector at t (DOF numbering)
    bracket: tuple
    bracket_values: tuple
    pair: OperatorPair
    index: int


def tune_to_kernel(mesh: Mesh, family, k: int = 1, bracket=None, bc="robin", tol: float = 1e-9,
                   t_start: float = 1.0, max_doublings: int = 40) -> TuneResult:
    """Find ``t`` with ``lambda_k(t) = 0`` by bracketing and Brent's method.

    ``family`` is a :class:`PotentialFamily`, or a callable returning an
    :class:`OperatorPair` or a :class:`Geometry` for each ``t``. Without a
    bracket one is found by doubling ``t`` from ``t_start`` away from 0.
    """
    if isinstance(family, PotentialFamily):
        def pair_of(t):
            return family.pair(t, bc)
    else:
        def pair_of(t):
            out = family(t)
            if isinstance(out, Geometry):
                return assemble_forms(mesh, out).operator(bc)
            return out

    cache = {}
    low = []

    def lam(t):
        if t not in cache:
            p = pair_of(t)
            hint = None
            if low:
                # shift guess below the lowest eigenvalue seen at the nearest t
                l1 = low[int(np.argmin([abs(t - s) for s, _ in low]))][1]
                hint = l1 - 0.5 * abs(l1) - 1.0
            r = eigs(p, k, dense=p.size <= SMALL, sigma=hint)
            low.append((t, r.values[0]))
            cache[t] = (r.values[k - 1], r.vectors[:, k - 1], p)
        return cache[t][0]

    if bracket is None:
        a = 0.0
        fa = lam(a)
        b = t_start
        for _ in range(max_doublings):
            fb = lam(b)
            if np.sign(fb) != np.sign(fa):
                break
            a, fa = b, fb
            b *= 2.0
        else:
            raise TuningError("no sign change found while doubling the parameter")
    else:
        a, b = map(float, bracket)
        fa, fb = lam(a), lam(b)
    if np.sign(fa) == np.sign(fb):
        raise TuningError(f"lambda_{k} does not change sign on [{a}, {b}]")
    scale = max(abs(fa), abs(fb), 1.0)
    t = brentq(lam, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    best = min(cache, key=lambda s: abs(cache[s][0]))
    if abs(cache[t][0]) > tol * scale and abs(cache[best][0]) <= tol * scale:
        t = best
    val, vec, p = cache[t]
    if abs(val) > tol * scale:
        raise TuningError(f"tuning stalled at |lambda| = {abs(val):.3g}")
    return TuneResult(float(t), float(val), vec, (a, b), (float(fa), float(fb)), p, k)


# ---------------------------------------------------------------------------
# counting identity


@dataclass
class FriedlanderCounts:
    N_R: int
    N_D: int
    dim_ker_D: int
    N_steklov: int
    identity_holds: bool
    tau: float
    tau_steklov: float
    hat: bool

    def as_tuple(self):
        return (self.N_R, self.N_D, self.dim_ker_D, self.N_steklov, self.identity_holds)

    def to_dict(self):
        return {
            "N_R": self.N_R,
            "N_D": self.N_D,
            "dim_ker_D": self.dim_ker_D,
            "N_neg_steklov": self.N_steklov,
            "identity_holds": self.identity_holds,
            "tau": self.tau,
            "tau_steklov": self.tau_steklov,
            "repaired_map": self.hat,
        }


def friedlander_counts(mesh: Mesh, G: Geometry, tau: float | None = None,
                       forms: Forms | None = None) -> FriedlanderCounts:
    """Negative counts of the Robin, Dirichlet and Dirichlet-to-Robin problems.

    Raises :class:`TauAmbiguityError` when any count is tolerance-ambiguous.
    """
    F = _forms(mesh, G, forms)
    robin = F.operator("robin", 0.0)
    dirich = F.operator("dirichlet")
    if tau is None:
        tau = default_tau(robin.A, robin.M)
    nr = negative_inertia(robin, tau=tau)
    nd = negative_inertia(dirich, tau=tau)
    st = steklov(mesh, G, tau=tau, forms=F)
    ts = st.tau_default
    ns = negative_inertia(st.D, st.Mb, ts)
    holds = nr.n_neg - nd.n_neg == ns.n_neg + nd.n_zero
    return FriedlanderCounts(nr.n_neg, nd.n_neg, nd.n_zero, ns.n_neg, bool(holds), float(tau),
                             float(ts), st.hat)
