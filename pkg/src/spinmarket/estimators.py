"""scikit-learn style wrappers around the chain and R/S tools."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import ModelParams, TiePolicy
from .kernel import macro_step_distribution
from .longmem import DegenerateStatisticError, rs_index
from .skeleton import analyze_attractors, ca_step, drift_field
from .spectral import (
    assemble_matrix,
    mixing_half_life,
    second_eigenvector,
    spectrum,
    state_index,
    stationary_measure,
)

_MOVES = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [0, 0]])


def _check_states(X, N: int) -> np.ndarray:
    X = check_array(X, dtype=np.int64, ensure_min_samples=1)
    if X.shape[1] != 2:
        raise ValueError(f"expected states of shape (n, 2), got {X.shape}")
    A = N * (N - 1) // 2
    if X.min(initial=0) < 0 or (X[:, 0] > N).any() or (X[:, 1] > A).any():
        raise ValueError("state outside the lattice")
    return X


class MacroChain(BaseEstimator):
    """Frozen-limit macro chain for one ``(N, alpha)``.

    ``fit`` ignores its data and builds the transition matrix and its
    spectral summary.  ``predict_proba`` returns the five move probabilities
    ``(up_site, down_site, up_arc, down_arc, hold)`` for each state and
    ``score`` the mean one-step log-likelihood of an observed path.

    Attributes
    ----------
    transition_matrix_ : ndarray
    stationary_ : MeasureGrid
    eigenvalues_ : ndarray
        Eigenvalue moduli, decreasing.
    lambda2_, gap_ : float
    half_life_ : float
    second_vector_ : MeasureGrid
    """

    def __init__(self, N: int = 10, alpha: float = 3.0, tie_policy: str = "paper-kernel"):
        self.N = N
        self.alpha = alpha
        self.tie_policy = tie_policy

    def _params(self) -> ModelParams:
        return ModelParams(self.N, self.alpha, tie_policy=TiePolicy(self.tie_policy))

    def fit(self, X=None, y=None):
        params = self._params()
        M = assemble_matrix(params)
        self.transition_matrix_ = M
        self.stationary_ = stationary_measure(M, N=params.N)
        self.eigenvalues_ = spectrum(M)
        self.lambda2_ = float(self.eigenvalues_[1])
        self.gap_ = max(0.0, 1.0 - self.lambda2_)
        self.half_life_ = mixing_half_life(self.lambda2_) if self.lambda2_ > 0 else 0
        self.second_vector_ = second_eigenvector(M, N=params.N)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "transition_matrix_")
        params = self._params()
        X = _check_states(X, params.N)
        out = np.empty((X.shape[0], 5))
        for k, (i, j) in enumerate(X):
            d = macro_step_distribution(int(i), int(j), params)
            out[k] = (d.up_site, d.down_site, d.up_arc, d.down_arc, d.hold)
        return out

    def predict(self, X) -> np.ndarray:
        """Most likely next state for each row of ``X``."""
        X = _check_states(X, self.N)
        return X + _MOVES[np.argmax(self.predict_proba(X), axis=1)]

    def score(self, X, y=None) -> float:
        """Mean log-probability of the transitions along path ``X``."""
        check_is_fitted(self, "transition_matrix_")
        X = _check_states(X, self.N)
        if X.shape[0] < 2:
            raise ValueError("need at least two states")
        a = [state_index(int(i), int(j), self.N) for i, j in X[:-1]]
        b = [state_index(int(i), int(j), self.N) for i, j in X[1:]]
        p = self.transition_matrix_[a, b]
        with np.errstate(divide="ignore"):
            return float(np.mean(np.log(p)))


class DriftSkeleton(BaseEstimator):
    """Cellular-automaton skeleton; ``predict`` applies one automaton step."""

    def __init__(self, N: int = 10, alpha: float = 3.0, radius: int = 1, max_steps: int = 8):
        self.N = N
        self.alpha = alpha
        self.radius = radius
        self.max_steps = max_steps

    def fit(self, X=None, y=None):
        self.field_ = drift_field(ModelParams(self.N, self.alpha))
        self.report_ = analyze_attractors(self.field_, self.radius, self.max_steps)
        self.attractors_ = [(a["states"], a["class"]) for a in self.report_.attractors]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "field_")
        X = _check_states(X, self.N)
        return np.array([tuple(ca_step((int(i), int(j)), self.field_)) for i, j in X], dtype=np.int64)


class RSIndexTransformer(TransformerMixin, BaseEstimator):
    """Map each row (one path) to its R/S indices at the given windows.

    Rows whose windows are all degenerate give ``nan``.
    """

    def __init__(self, taus=(50, 100, 500), method: str = "classic", differences: bool = True):
        self.taus = taus
        self.method = method
        self.differences = differences

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        taus = list(self.taus)
        if not taus or min(taus) < 2:
            raise ValueError("taus must be integers >= 2")
        if 2 * max(taus) > X.shape[1]:
            raise ValueError(f"paths of length {X.shape[1]} are too short for tau={max(taus)}")
        self.n_features_in_ = X.shape[1]
        self.taus_ = np.asarray(sorted(taus), dtype=int)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "taus_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected paths of length {self.n_features_in_}, got {X.shape[1]}")
        out = np.full((X.shape[0], self.taus_.size), np.nan)
        for r, row in enumerate(X):
            for c, t in enumerate(self.taus_):
                try:
                    out[r, c] = rs_index(row, int(t), method=self.method, differences=self.differences)
                except DegenerateStatisticError:
                    pass
        return out

    def get_feature_names_out(self, input_features=None):
        return np.array([f"rs_tau{t}" for t in self.taus_], dtype=object)
