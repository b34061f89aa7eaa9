"""Generalized symmetric eigenproblems ``A x = lam M x`` and inertia counts.

Small pencils are solved densely. Larger ones use a shift-invert Lanczos
iteration in the ``M`` inner product with full reorthogonalisation; converged
pairs are locked and the run is repeated until Sylvester inertia at a shift
just above the wanted eigenvalues confirms that none were missed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "DENSE_LIMIT",
    "FactorizationError",
    "ConvergenceError",
    "TauAmbiguityError",
    "SpectralResult",
    "Inertia",
    "LDLFactor",
    "ldl_factor",
    "inertia",
    "default_tau",
    "eigs",
    "dense_eigenvalues",
    "negative_inertia",
    "count_below",
]

DENSE_LIMIT = 3000
DENSE_LDL_LIMIT = 400


class FactorizationError(RuntimeError):
    def __init__(self, message, shift=None):
        super().__init__(message if shift is None else f"{message} (shift {shift:.6g})")
        self.shift = shift


class ConvergenceError(RuntimeError):
    pass


class TauAmbiguityError(RuntimeError):
    """Eigenvalues lie within a factor 10 of the kernel tolerance."""

    def __init__(self, tau, values):
        self.tau = float(tau)
        self.values = list(map(float, values))
        super().__init__(f"kernel tolerance {tau:.3g} is ambiguous: |lambda| in (tau/10, 10 tau]"
                         + (f" for {self.values}" if self.values else ""))


@dataclass
class SpectralResult:
    values: np.ndarray
    vectors: np.ndarray          # columns, M-orthonormal, in DOF numbering
    residuals: np.ndarray        # ||A x - lam M x||_{M^-1}
    solver: str
    tau: float

    def __len__(self):
        return len(self.values)

    def kernel(self):
        sel = np.abs(self.values) <= self.tau
        return self.vectors[:, sel]


@dataclass(frozen=True)
class Inertia:
    neg: int
    zero: int
    pos: int


def _as_sparse(A):
    return A.tocsc() if sp.issparse(A) else sp.csc_matrix(np.asarray(A, dtype=float))


def _as_dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


class LDLFactor:
    """Symmetric indefinite factorization with an inertia count.

    Dense matrices use Bunch-Kaufman (LAPACK ``sytrf`` via scipy). Sparse
    ones use SuperLU in symmetric mode with diagonal pivoting only, so the
    row and column permutations coincide and ``A = P^T L D L^T P``; the
    inertia is then read from the signs of ``D``. The factor is checked by
    a solve residual and rejected if unstable.
    """

    def __init__(self, A, shift_label=None, dense=None):
        n = A.shape[0]
        self.n = n
        dense = n <= DENSE_LDL_LIMIT if dense is None else dense
        self.method = "dense-bunch-kaufman" if dense else "sparse-symmetric-lu"
        if dense:
            Ad = _as_dense(A)
            lu, d, perm = sl.ldl(Ad, lower=True)
            ev = _block_eigs(d)
            self._dense = (Ad, lu, d)
            self._lu = None
        else:
            As = _as_sparse(A)
            try:
                lu = spla.splu(As, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                               options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise FactorizationError(f"sparse factorization failed: {exc}", shift_label) from exc
            if not np.array_equal(lu.perm_r, lu.perm_c):
                raise FactorizationError("symmetric factorization pivoted off the diagonal", shift_label)
            ev = lu.U.diagonal()
            self._lu = lu
            self._dense = None
            rng = np.random.default_rng(12345)
            b = rng.standard_normal(n)
            x = lu.solve(b)
            res = np.linalg.norm(As @ x - b)
            scale = abs(As).max() * np.linalg.norm(x) + np.linalg.norm(b)
            if not np.isfinite(res) or res > 1e-6 * scale:
                raise FactorizationError("unstable symmetric factorization", shift_label)
        scale = np.max(np.abs(ev)) if len(ev) else 1.0
        zero = np.abs(ev) <= 1e-14 * scale
        if np.any(zero):
            raise FactorizationError("exactly singular pivot", shift_label)
        self.pivots = ev
        self.inertia = Inertia(int(np.sum(ev < 0)), 0, int(np.sum(ev > 0)))

    def solve(self, b):
        if self._lu is not None:
            return self._lu.solve(b)
        Ad = self._dense[0]
        if not hasattr(self, "_dlu"):
            self._dlu = sl.lu_factor(Ad)
        return sl.lu_solve(self._dlu, b)


def _block_eigs(d):
    """Eigenvalues of the 1x1 / 2x2 block diagonal from Bunch-Kaufman."""
    n = d.shape[0]
    out = []
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            out.extend(np.linalg.eigvalsh(d[i:i + 2, i:i + 2]))
            i += 2
        else:
            out.append(d[i, i])
            i += 1
    return np.asarray(out)


def ldl_factor(A, shift_label=None) -> LDLFactor:
    return LDLFactor(A, shift_label)


def inertia(A) -> Inertia:
    return LDLFactor(A).inertia


def default_tau(A, M) -> float:
    """``1e-7 * ||A||_inf / ||M||_inf``."""
    na = abs(A).sum(axis=1).max() if sp.issparse(A) else np.abs(A).sum(axis=1).max()
    nm = abs(M).sum(axis=1).max() if sp.issparse(M) else np.abs(M).sum(axis=1).max()
    return 1e-7 * float(na) / float(nm)


def _pencil(pair_or_A, M=None):
    if M is None:
        return pair_or_A.A, pair_or_A.M
    return pair_or_A, M


def count_below(A, M, mu: float) -> int:
    """Number of eigenvalues of ``(A, M)`` strictly below ``mu``.

    If ``mu`` is numerically an eigenvalue the shift is nudged upward by a
    relative 1e-12 until the factorization is regular.
    """
    scale = max(abs(mu), 1.0)
    for k in range(6):
        m = mu + (0.0 if k == 0 else scale * 1e-12 * 10 ** k)
        try:
            return LDLFactor((A - m * M) if m else A, m).inertia.neg
        except FactorizationError as exc:
            if "singular" not in str(exc):
                raise
    raise FactorizationError("pivot stays singular under refinement of the shift", mu)


# ---------------------------------------------------------------------------
# eigensolvers


class _MSolver:
    """Solves with the mass matrix: Cholesky when dense, Jacobi-CG when sparse."""

    def __init__(self, M):
        self.M = M
        if sp.issparse(M):
            self._d = M.diagonal()
            self.solve = self._cg
        else:
            c = sl.cho_factor(M)
            self.solve = lambda b: sl.cho_solve(c, b)

    def _cg(self, b):
        if b.ndim == 2:
            return np.column_stack([self._cg(b[:, j]) for j in range(b.shape[1])])
        P = spla.LinearOperator(self.M.shape, matvec=lambda x: x / self._d)
        x, info = spla.cg(self.M, b, rtol=1e-13, atol=0.0, M=P, maxiter=2000)
        if info:
            x = spla.splu(self.M.tocsc()).solve(b)
        return x

    def resid_norm(self, A, x, lam):
        r = A @ x - self.M @ (x * lam)
        z = self.solve(r)
        return np.sqrt(np.maximum(np.einsum("i...,i...->...", r, z), 0.0))


def _dense_eigs(A, M, k, tau):
    Ad, Md = _as_dense(A), _as_dense(M)
    n = Ad.shape[0]
    k = min(k, n)
    w, V = sl.eigh(Ad, Md, subset_by_index=[0, k - 1])
    ms = _MSolver(Md)
    res = np.array([ms.resid_norm(Ad, V[:, i], w[i]) for i in range(k)])
    return SpectralResult(w, V, res, "dense", tau)


def dense_eigenvalues(pair_or_A, M=None) -> np.ndarray:
    """All generalized eigenvalues by the dense solver (values only)."""
    A, M = _pencil(pair_or_A, M)
    return sl.eigh(_as_dense(A), _as_dense(M), eigvals_only=True)


def _lanczos_run(solve, M, n, m, locked, rng):
    """One M-orthogonal Lanczos run of ``Op = (A - sigma M)^{-1} M``."""
    V = np.zeros((n, m + 1))
    alpha = np.zeros(m)
    beta = np.zeros(m)
    L = locked

    def orth(w):
        for _ in range(2):
            if L is not None and L.shape[1]:
                w = w - L @ (L.T @ (M @ w))
            if j_cur[0] > 0:
                Vj = V[:, :j_cur[0]]
                w = w - Vj @ (Vj.T @ (M @ w))
        return w

    j_cur = [0]
    v = orth(rng.standard_normal(n))
    v /= np.sqrt(v @ (M @ v))
    V[:, 0] = v
    size = m
    for j in range(m):
        j_cur[0] = j + 1
        w = solve(M @ V[:, j])
        alpha[j] = V[:, j] @ (M @ w)
        w = orth(w)
        b = np.sqrt(max(w @ (M @ w), 0.0))
        beta[j] = b
        if j + 1 == m:
            V[:, j + 1] = w / b if b > 0 else 0.0
            break
        if b <= 1e-12 * max(abs(alpha[j]), 1e-300):
            # invariant subspace: continue from a fresh direction
            j_cur[0] = j + 1
            w = orth(rng.standard_normal(n))
            nb = np.sqrt(w @ (M @ w))
            if nb <= 1e-14:
                size = j + 1
                beta[j] = 0.0
                break
            beta[j] = 0.0
            V[:, j + 1] = w / nb
        else:
            V[:, j + 1] = w / b
    return V[:, :size], alpha[:size], beta[:size]


def lanczos_smallest(A, M, k, tau=0.0, tol=1e-10, max_restarts=40, seed=0, sigma=None):
    """``k`` smallest eigenpairs by shift-invert Lanczos with locking."""
    A = _as_sparse(A).tocsr()
    M = _as_sparse(M).tocsr()
    n = A.shape[0]
    k = min(k, n)
    rng = np.random.default_rng(seed)
    ms = _MSolver(M.tocsc())

    # shift below the spectrum: the hint (or -1), then doubling downwards
    sigma = -1.0 if sigma is None else float(sigma)
    step = max(1.0, abs(sigma))
    fac = None
    for _ in range(80):
        try:
            fac = LDLFactor(A - sigma * M, sigma, dense=False)
            if fac.inertia.neg == 0:
                break
        except FactorizationError as exc:
            if "singular" not in str(exc):
                raise
        step *= 2.0
        sigma = min(sigma, 0.0) - step
    else:
        raise ConvergenceError("could not place a shift below the spectrum")

    locked_X = np.zeros((n, 0))
    locked_l = np.zeros(0)
    m = min(n, max(2 * k + 30, 60))
    for _ in range(max_restarts):
        room = n - locked_X.shape[1]
        if room <= 0:
            break
        V, a, b = _lanczos_run(fac.solve, M, n, min(m, room), locked_X, rng)
        T = np.diag(a) + np.diag(b[:-1], 1) + np.diag(b[:-1], -1)
        theta, S = np.linalg.eigh(T)
        est = np.abs(b[-1] * S[-1, :])  # ||Op x - theta x||_M of each Ritz pair
        new_X, unconverged = [], []
        for i in np.argsort(-np.abs(theta)):
            if theta[i] == 0.0:
                continue
            guess = sigma + 1.0 / theta[i]
            if est[i] > 1e-4 * abs(theta[i]):
                unconverged.append(guess)
                continue
            x = V @ S[:, i]
            nx = x @ (M @ x)
            lam = (x @ (A @ x)) / nx   # Rayleigh refinement
            x = x / np.sqrt(nx)
            if ms.resid_norm(A, x, lam) <= tol * (1.0 + abs(lam)):
                new_X.append(x)
            else:
                unconverged.append(lam)
        if new_X:
            X = np.column_stack(new_X)
            # orthonormalise against locked vectors and among themselves
            X = X - locked_X @ (locked_X.T @ (M @ X))
            G = X.T @ (M @ X)
            w, U = np.linalg.eigh(G)
            keep = w > 1e-8
            X = X @ (U[:, keep] / np.sqrt(w[keep]))
            if X.shape[1]:
                H = X.T @ (A @ X)
                lw, Y = np.linalg.eigh((H + H.T) / 2)
                X = X @ Y
                locked_X = np.column_stack([locked_X, X])
                locked_l = np.concatenate([locked_l, lw])
        order = np.argsort(locked_l)
        locked_l, locked_X = locked_l[order], locked_X[:, order]
        if len(locked_l) >= k:
            # place the check shift past the whole cluster containing lambda_k
            lk = locked_l[k - 1]
            c = k
            while c < len(locked_l) and locked_l[c] - lk <= 1e-8 * max(1.0, abs(lk)):
                c += 1
            top = locked_l[c - 1]
            gap = (locked_l[c] - top) if c < len(locked_l) else abs(top) + 1.0
            mu = top + min(0.5 * gap, 1e-6 * max(1.0, abs(top)))
            if count_below(A, M, mu) == np.sum(locked_l < mu):
                X = locked_X[:, :k]
                res = ms.resid_norm(A, X, locked_l[:k])
                return SpectralResult(locked_l[:k].copy(), X, np.atleast_1d(res),
                                      "shift-invert Lanczos", tau)
        # move the shift next to the lowest pair still missing
        if unconverged:
            target = min(unconverged)
            trial = target - 1e-3 * max(1.0, abs(target))
            try:
                fac = LDLFactor(A - trial * M, trial, dense=False)
                sigma = trial
            except FactorizationError:
                pass
        m = min(int(m * 1.5), n, 500)
    raise ConvergenceError(f"Lanczos did not certify {k} eigenpairs after {max_restarts} restarts")


def eigs(pair_or_A, k: int, M=None, tau: float | None = None, dense: bool | None = None,
         dense_limit: int = DENSE_LIMIT, sigma: float | None = None) -> SpectralResult:
    """The ``k`` smallest eigenpairs of the pencil, ascending.

    ``sigma`` is an optional guess of a shift below the spectrum for the
    iterative path; a wrong guess only costs extra factorizations.
    """
    A, M = _pencil(pair_or_A, M)
    n = A.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must lie in [1, {n}]")
    if tau is None:
        tau = default_tau(A, M)
    if dense is None:
        dense = n <= dense_limit
    if dense:
        return _dense_eigs(A, M, k, tau)
    return lanczos_smallest(A, M, k, tau, sigma=sigma)


@dataclass(frozen=True)
class NegativeInertia:
    n_neg: int       # eigenvalues below -tau
    n_zero: int      # eigenvalues with |lam| <= tau
    tau: float
    n_neg_raw: int   # negative pivots of A itself

    def __iter__(self):
        return iter((self.n_neg, self.n_zero))


def tau_window_count(A, M, tau):
    """Eigenvalues with ``tau/10 < |lam| <= 10 tau``."""
    outer = count_below(A, M, 10 * tau) - count_below(A, M, -10 * tau)
    inner = count_below(A, M, tau / 10) - count_below(A, M, -tau / 10)
    return outer - inner


def negative_inertia(pair_or_A, M=None, tau: float | None = None, check_ambiguity=True) -> NegativeInertia:
    """Negative and near-zero eigenvalue counts from Sylvester inertia.

    ``n_neg`` counts eigenvalues below ``-tau``; ``n_zero`` counts
    ``|lam| <= tau``. With ``tau = 0`` the counts are the raw pivot signs of
    ``A``. Raises :class:`TauAmbiguityError` when eigenvalues sit in the
    window ``(tau/10, 10 tau]`` in absolute value.
    """
    A, M = _pencil(pair_or_A, M)
    if tau is None:
        tau = default_tau(A, M)
    raw = count_below(A, M, 0.0)
    if tau == 0:
        return NegativeInertia(raw, 0, 0.0, raw)
    lo = count_below(A, M, -tau)
    hi = count_below(A, M, tau)
    if check_ambiguity:
        amb = tau_window_count(A, M, tau)
        if amb:
            vals = []
            try:
                vals = _window_values(A, M, tau)
            except Exception:
                pass
            raise TauAmbiguityError(tau, vals)
    return NegativeInertia(lo, hi - lo, float(tau), raw)


def _window_values(A, M, tau):
    k = count_below(A, M, 10 * tau)
    if k == 0:
        return []
    r = eigs(A, k, M=M, tau=tau)
    v = r.values
    return [x for x in v if tau / 10 < abs(x) <= 10 * tau]
