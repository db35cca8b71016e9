"""Rescaled-range (R/S) persistence statistics for macro paths.

``rs_index`` is ``log(R/S) / log(tau)``: 0.5 for memoryless increments,
larger for persistent and smaller for anti-persistent ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from ._io import write_csv
from ._validation import check_int, check_path

__all__ = [
    "DegenerateStatisticError",
    "RsCurve",
    "rs_statistic",
    "rs_index",
    "rs_curve",
    "lo_bandwidth",
    "persistence_summary",
    "write_rs_csv",
]


class DegenerateStatisticError(ValueError):
    """Every window had zero variance, so R/S is undefined."""


def lo_bandwidth(x: np.ndarray) -> int:
    """Andrews' data-driven lag for the Lo-corrected denominator."""
    n = x.size
    if n < 3:
        return 0
    y = x - x.mean()
    denom = float(y @ y)
    if denom == 0:
        return 0
    rho = float(y[1:] @ y[:-1]) / denom
    rho = min(max(rho, -0.99), 0.99)
    q = (1.5 * n) ** (1 / 3) * (2 * rho / (1 - rho * rho)) ** (2 / 3) if rho > 0 else 0.0
    return int(min(max(math.floor(q), 0), n - 1))


def _lo_scale(y: np.ndarray, q: int) -> float:
    n = y.size
    var = float(y @ y) / n
    for k in range(1, q + 1):
        w = 1 - k / (q + 1)
        var += 2 * w * float(y[k:] @ y[:-k]) / n
    return math.sqrt(max(var, 0.0))


def rs_statistic(path, tau: int, method: str = "classic", q: int | None = None,
                 return_skipped: bool = False, differences: bool = True):
    """Mean rescaled range over non-overlapping windows of ``tau`` increments.

    Parameters
    ----------
    path : array_like
        Path values; increments are taken with :func:`numpy.diff`.
    tau : int
        Window length in increments, at least 2.
    method : {"classic", "lo"}
        ``"lo"`` replaces the window standard deviation by the
        autocovariance-corrected scale with Bartlett weights.
    q : int, optional
        Lag for ``method="lo"``; chosen per window by Andrews' rule if omitted.
    return_skipped : bool
        Also return the number of zero-variance windows that were dropped.
    differences : bool
        Analyse the increments of ``path`` (default).  With ``False`` the
        path values themselves are treated as the series.

    Raises
    ------
    DegenerateStatisticError
        If every window has zero variance.
    """
    tau = check_int(tau, "tau", minimum=2)
    x = check_path(path, min_length=2 * tau)
    if differences:
        x = np.diff(x)
    if method not in ("classic", "lo"):
        raise ValueError(f"unknown method {method!r}")
    n_win = x.size // tau
    windows = x[: n_win * tau].reshape(n_win, tau)
    ratios = []
    skipped = 0
    for w in windows:
        y = w - w.mean()
        z = np.cumsum(y)
        r = max(z.max(), 0.0) - min(z.min(), 0.0)
        if method == "classic":
            s = math.sqrt(float(y @ y) / tau)
        else:
            s = _lo_scale(y, lo_bandwidth(w) if q is None else check_int(q, "q", minimum=0))
        if s <= 1e-12 * (1 + abs(w).max()):
            skipped += 1
            continue
        ratios.append(r / s)
    if not ratios:
        raise DegenerateStatisticError(f"all {n_win} windows of length {tau} have zero variance")
    value = float(np.mean(ratios))
    return (value, skipped) if return_skipped else value


def rs_index(path, tau: int, method: str = "classic", q: int | None = None,
             differences: bool = True) -> float:
    """Hurst-style exponent ``log(R/S) / log(tau)``."""
    stat = rs_statistic(path, tau, method=method, q=q, differences=differences)
    return math.log(stat) / math.log(tau)


@dataclass
class RsCurve:
    taus: np.ndarray
    index_values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def at(self, tau: int) -> float:
        hits = np.flatnonzero(self.taus == tau)
        if hits.size == 0:
            raise KeyError(f"tau={tau} not in curve")
        return float(self.index_values[hits[0]])


def rs_curve(path, taus: Sequence[int], method: str = "classic", label: str = "",
             differences: bool = True, **meta) -> RsCurve:
    taus = [check_int(t, "tau", minimum=2) for t in taus]
    if len(set(taus)) != len(taus):
        raise ValueError("duplicate tau values")
    taus = sorted(taus)
    arr = check_path(path)
    if taus and max(taus) > arr.size // 2:
        raise ValueError(f"largest tau {max(taus)} exceeds half the path length {arr.size}")
    values = [rs_index(arr, t, method=method, differences=differences) for t in taus]
    return RsCurve(np.asarray(taus, dtype=int), np.asarray(values), label, dict(meta))


def persistence_summary(runs: Sequence[RsCurve], tau: int) -> dict:
    """Mean, standard deviation and share of runs above 0.5 at one window."""
    if not runs:
        raise ValueError("no runs")
    vals = []
    for r in runs:
        try:
            vals.append(r.at(tau))
        except KeyError:
            raise ValueError(f"run {r.label!r} lacks tau={tau}") from None
    vals = np.asarray(vals)
    above = int(np.sum(vals > 0.5))
    return {
        "mean": float(vals.mean()),
        "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
        "fraction_above_half": Fraction(above, vals.size),
        "n": int(vals.size),
    }


def write_rs_csv(rows, path):
    """Rows of ``(run_id, tau, index, alpha, N, seed)``."""
    return write_csv(path, ["run_id", "tau", "index", "alpha", "N", "seed"], rows)
