"""Transition matrix of the macro chain and its spectral analysis.

States are flattened with the site count varying fastest::

    k = j * (N + 1) + i

so a measure vector reshapes to a ``(C + 1, N + 1)`` array, transposed by
:attr:`MeasureGrid.grid` into the ``[i, j]`` layout used everywhere else.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from ._io import write_csv
from ._validation import check_int, check_state
from .core import MacroState, ModelParams, n_arcs
from .kernel import macro_step_distribution

__all__ = [
    "MeasureGrid",
    "SpectralSummary",
    "NumericalError",
    "n_states",
    "state_index",
    "index_state",
    "assemble_matrix",
    "stationary_measure",
    "spectrum",
    "spectral_gap",
    "second_eigenvector",
    "spectral_summary",
    "mixing_half_life",
    "propagate_measure",
    "variation_distance",
    "point_mass",
    "write_matrix_csv",
    "write_measure_csv",
    "write_spectrum_csv",
]

DENSE_LIMIT = 2000


class NumericalError(RuntimeError):
    """An eigensolve or linear solve did not reach the requested accuracy."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


def n_states(N: int) -> int:
    return (N + 1) * (n_arcs(N) + 1)


def state_index(i: int, j: int, N: int) -> int:
    i, j = check_state(i, j, N)
    return j * (N + 1) + i


def index_state(k: int, N: int) -> MacroState:
    k = check_int(k, "k", minimum=0, maximum=n_states(N) - 1)
    j, i = divmod(k, N + 1)
    return MacroState(i, j)


def _infer_N(dim: int) -> int:
    N = 1
    while n_states(N) < dim:
        N += 1
    if n_states(N) != dim:
        raise ValueError(f"dimension {dim} is not (N+1)(C(N,2)+1) for any N")
    return N


@dataclass
class MeasureGrid:
    """A (possibly signed) measure on the macro state space.

    Attributes
    ----------
    values : ndarray
        Flat vector in state-index order.
    N : int
    kind : {"probability", "signed"}
    residual : float, optional
        ``||mu M - lambda mu||_inf`` when produced by a solver.
    eigenvalue : float, optional
    multiplicity_warning : bool
        Set when the eigenvalue could not be separated from its neighbour.
    """

    values: np.ndarray
    N: int
    kind: str = "probability"
    residual: float | None = None
    eigenvalue: float | None = None
    multiplicity_warning: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (n_states(self.N),):
            raise ValueError(f"expected {n_states(self.N)} values, got shape {self.values.shape}")
        if self.kind not in ("probability", "signed"):
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def grid(self) -> np.ndarray:
        """Values as an ``(N + 1, C + 1)`` array indexed ``[i, j]``."""
        return self.values.reshape(n_arcs(self.N) + 1, self.N + 1).T

    def at(self, i: int, j: int) -> float:
        return float(self.values[state_index(i, j, self.N)])

    def argmax_state(self) -> MacroState:
        return index_state(int(np.argmax(self.values)), self.N)

    def rows(self):
        for k, v in enumerate(self.values):
            i, j = index_state(k, self.N)
            yield i, j, v


def point_mass(state, N: int) -> MeasureGrid:
    v = np.zeros(n_states(N))
    v[state_index(*state, N)] = 1.0
    return MeasureGrid(v, N)


def assemble_matrix(params: ModelParams, exact: bool = False, sparse: bool = False):
    """Row-stochastic transition matrix of the macro chain.

    Parameters
    ----------
    params : ModelParams
    exact : bool
        Return a nested list of :class:`~fractions.Fraction` instead of floats.
    sparse : bool
        Return a ``scipy.sparse.csr_array`` (ignored when ``exact``).
    """
    N = params.N
    dim = n_states(N)
    rows, cols, vals = [], [], []
    for k in range(dim):
        i, j = index_state(k, N)
        d = macro_step_distribution(i, j, params, exact=exact)
        for (u, v), p in d.entries:
            rows.append(k)
            cols.append(v * (N + 1) + u)
            vals.append(p)
    if exact:
        M = [[Fraction(0)] * dim for _ in range(dim)]
        for r, c, p in zip(rows, cols, vals):
            M[r][c] += p
        return M
    S = scipy.sparse.csr_array((np.asarray(vals, dtype=float), (rows, cols)), shape=(dim, dim))
    return S if sparse else S.toarray()


def _as_dense(M) -> np.ndarray:
    if scipy.sparse.issparse(M):
        return M.toarray()
    return np.asarray(M, dtype=float)


def _dim(M) -> int:
    return M.shape[0]


def _left_residual(M, mu: np.ndarray, lam: float = 1.0) -> float:
    return float(np.max(np.abs(mu @ M - lam * mu))) if mu.size else 0.0


def stationary_measure(M, tol: float = 1e-10, N: int | None = None,
                       check_multiplicity: bool = True) -> MeasureGrid:
    """Invariant probability vector of a row-stochastic matrix.

    Solves ``mu (M - I) = 0`` with the normalisation substituted for the last
    balance equation, followed by one step of iterative refinement.  When the
    eigenvalue one is numerically repeated (spectral gap below ``1e-12``) the
    result is one member of the invariant family and
    ``multiplicity_warning`` is set.

    Raises
    ------
    NumericalError
        If the residual stays above ``tol``.
    """
    dim = _dim(M)
    N = _infer_N(dim) if N is None else N
    sparse = scipy.sparse.issparse(M)
    if sparse:
        A = (M.T - scipy.sparse.identity(dim, format="csr")).tolil()
        A[dim - 1, :] = np.ones(dim)
        A = A.tocsc()
        solve = scipy.sparse.linalg.factorized(A)
    else:
        A = _as_dense(M).T - np.eye(dim)
        A[dim - 1, :] = 1.0
        with warnings.catch_warnings():
            # a singular factor means several closed classes; handled below
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(A, check_finite=False)

        def solve(b):
            return scipy.linalg.lu_solve(lu, b, check_finite=False)

    b = np.zeros(dim)
    b[-1] = 1.0
    with np.errstate(all="ignore"):
        mu = solve(b)
        mu = mu + solve(b - A @ mu)
    if not np.all(np.isfinite(mu)):
        mu = _stationary_by_eig(M)
    mu = np.where(np.abs(mu) < 1e-15, 0.0, mu)
    if mu.min() < -1e-9:
        # several closed classes: the solve mixes them; fall back to an eigenvector
        mu = _stationary_by_eig(M)
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    residual = _left_residual(M, mu)
    if residual > tol:
        raise NumericalError(f"stationary residual {residual:.3e} exceeds {tol:.1e}", residual)
    repeated = False
    if check_multiplicity and dim > 1:
        repeated = (1.0 - spectrum(M, count=2)[1]) < 1e-12
    return MeasureGrid(mu, N, "probability", residual=residual, eigenvalue=1.0,
                       multiplicity_warning=bool(repeated))


def _stationary_by_eig(M) -> np.ndarray:
    if _dim(M) > DENSE_LIMIT:
        w, v = scipy.sparse.linalg.eigs(scipy.sparse.csr_array(M).T, k=1, sigma=1.0 + 1e-9)
    else:
        w, v = scipy.linalg.eig(_as_dense(M).T)
    k = int(np.argmin(np.abs(w - 1.0)))
    mu = np.real(v[:, k])
    return mu / mu.sum()


def _eig_left(M):
    """All eigenpairs of ``M.T``, ordered by decreasing modulus."""
    w, v = scipy.linalg.eig(_as_dense(M).T)
    order = np.lexsort((-w.real, -np.abs(w)))
    return w[order], v[:, order]


def spectrum(M, count: int | None = None) -> np.ndarray:
    """The ``count`` largest eigenvalue moduli, in decreasing order."""
    dim = _dim(M)
    count = dim if count is None else check_int(count, "count", minimum=1, maximum=dim)
    if dim <= DENSE_LIMIT:
        w = scipy.linalg.eigvals(_as_dense(M), check_finite=False)
        return np.sort(np.abs(w))[::-1][:count]
    if count >= dim - 1:
        raise ValueError("full spectra above the dense limit are not supported")
    try:
        w = scipy.sparse.linalg.eigs(scipy.sparse.csr_array(M), k=count, which="LM",
                                     return_eigenvectors=False, tol=1e-12)
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise NumericalError(f"Arnoldi iteration did not converge: {exc}") from exc
    return np.sort(np.abs(w))[::-1]


def spectral_gap(M) -> float:
    moduli = spectrum(M, count=min(2, _dim(M)))
    if moduli.size < 2:
        return 1.0
    return float(max(0.0, 1.0 - moduli[1]))


def _sign_normalise(v: np.ndarray) -> np.ndarray:
    v = v / np.max(np.abs(v))
    # largest-|entry| component positive; first occurrence breaks ties
    if v[int(np.argmax(np.abs(v)))] < 0:
        v = -v
    return v


def second_eigenvector(M, N: int | None = None) -> MeasureGrid:
    """Left eigenvector of the second-largest eigenvalue modulus.

    Normalised to unit sup-norm with the largest-magnitude entry positive.
    For a complex ``lambda_2`` the real part of the eigenvector is returned.
    """
    dim = _dim(M)
    if dim < 2:
        raise ValueError("need at least two states")
    N = _infer_N(dim) if N is None else N
    if dim > DENSE_LIMIT:
        w, v = scipy.sparse.linalg.eigs(scipy.sparse.csr_array(M).T, k=3, which="LM")
        order = np.argsort(-np.abs(w))
        w, v = w[order], v[:, order]
    else:
        w, v = _eig_left(M)
    lam = w[1]
    vec = v[:, 1]
    vec = np.real(vec * np.exp(-1j * np.angle(vec[np.argmax(np.abs(vec))])))
    vec = _sign_normalise(vec)
    warn = bool(abs(np.abs(w[1]) - np.abs(w[0])) < 1e-10
                or (w.size > 2 and abs(np.abs(w[1]) - np.abs(w[2])) < 1e-10))
    residual = float(np.max(np.abs(vec @ M - lam.real * vec))) if abs(lam.imag) < 1e-12 else None
    return MeasureGrid(vec, N, "signed", residual=residual, eigenvalue=float(np.abs(lam)),
                       multiplicity_warning=warn)


@dataclass
class SpectralSummary:
    eigenvalue_moduli: np.ndarray
    lambda2: float
    gap: float
    stationary: MeasureGrid
    second_vector: MeasureGrid | None = None
    notes: list[str] = field(default_factory=list)


def spectral_summary(M, N: int | None = None, with_vector: bool = True) -> SpectralSummary:
    dim = _dim(M)
    N = _infer_N(dim) if N is None else N
    moduli = spectrum(M, count=None if dim <= DENSE_LIMIT else min(20, dim - 2))
    lam2 = float(moduli[1]) if moduli.size > 1 else 0.0
    mu = stationary_measure(M, N=N)
    notes = []
    if mu.multiplicity_warning:
        notes.append("numerically non-ergodic: eigenvalue 1 is repeated to 1e-12")
    vec = second_eigenvector(M, N=N) if with_vector and dim > 1 else None
    return SpectralSummary(moduli, lam2, max(0.0, 1.0 - lam2), mu, vec, notes)


def mixing_half_life(lambda2: float) -> float:
    """Steps needed to halve the sup-norm distance, ``ceil(ln 2 / -ln lambda2)``.

    Returns ``math.inf`` for ``lambda2 >= 1``.
    """
    lambda2 = float(lambda2)
    if not lambda2 > 0:
        raise ValueError(f"lambda2 must be positive, got {lambda2}")
    if lambda2 >= 1.0:
        return math.inf
    return math.ceil(math.log(2.0) / -math.log(lambda2))


def propagate_measure(M, mu0, n: int) -> MeasureGrid:
    """``mu0 M^n``."""
    n = check_int(n, "n", minimum=0)
    if isinstance(mu0, MeasureGrid):
        N, v = mu0.N, mu0.values.copy()
    else:
        v = np.asarray(mu0, dtype=float).copy()
        N = _infer_N(v.size)
    if v.size != _dim(M):
        raise ValueError(f"measure has {v.size} entries, matrix has dimension {_dim(M)}")
    if scipy.sparse.issparse(M) or n < 64:
        MT = M.T
        for _ in range(n):
            v = MT @ v
    else:
        v = v @ np.linalg.matrix_power(_as_dense(M), n)
    return MeasureGrid(v, N)


def variation_distance(mu, nu) -> float:
    """Sup-norm distance between two measures of equal dimension."""
    a = mu.values if isinstance(mu, MeasureGrid) else np.asarray(mu, dtype=float)
    b = nu.values if isinstance(nu, MeasureGrid) else np.asarray(nu, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def write_matrix_csv(M, path):
    S = scipy.sparse.coo_array(M)
    order = np.lexsort((S.col, S.row))
    return write_csv(path, ["row", "col", "value"],
                     zip(S.row[order], S.col[order], S.data[order]))


def write_measure_csv(measure: MeasureGrid, path):
    return write_csv(path, ["i", "j", "value"], measure.rows())


def write_spectrum_csv(M, path):
    w = scipy.linalg.eigvals(_as_dense(M))
    order = np.lexsort((-w.real, -np.abs(w)))
    w = w[order]
    return write_csv(path, ["rank", "modulus", "real", "imag"],
                     ((r + 1, abs(x), x.real, x.imag) for r, x in enumerate(w)))
