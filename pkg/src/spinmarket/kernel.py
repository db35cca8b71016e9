"""Exact frozen-limit transition probabilities of the macro chain ``(S+, A+)``.

The four "stay" probabilities are hypergeometric tail sums:

* ``p_plus_plus``   -- a chosen +1 site keeps spin +1
* ``p_minus_minus`` -- a chosen -1 site keeps spin -1
* ``q_plus_plus``   -- a chosen +1 arc keeps spin +1
* ``q_minus_minus`` -- a chosen -1 arc keeps spin -1

A zero potential counts as a flip (strict inequalities throughout). Every
function takes ``exact=True`` to evaluate on :class:`fractions.Fraction` with
big-integer binomials instead of the log-gamma float path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator

import numpy as np

from ._validation import as_generator, check_int, check_state
from .core import MacroState, ModelParams, n_arcs

__all__ = [
    "StepDistribution",
    "log_binomial",
    "contrarian_threshold",
    "p_plus_plus",
    "p_minus_minus",
    "q_plus_plus",
    "q_minus_minus",
    "stay_probabilities",
    "macro_step_distribution",
    "brute_force_flip_oracle",
    "simulate_macro_chain",
    "is_trapping",
]

ORACLE_MAX_N = 6


@lru_cache(maxsize=None)
def _log_factorial(n: int) -> float:
    return math.lgamma(n + 1)


def log_binomial(n: int, k: int) -> float:
    """``log C(n, k)``, or ``-inf`` when ``k`` is outside ``[0, n]``."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if k < 0 or k > n:
        return -math.inf
    return _log_factorial(n) - _log_factorial(k) - _log_factorial(n - k)


def contrarian_threshold(i: int, j: int, params: ModelParams) -> Fraction:
    """Exact value of ``alpha * G(i, j)``, the contrarian term's magnitude."""
    N = params.N
    return params.alpha_exact * abs(4 * (i + j) - N * (N + 1)) / (2 * N * (N + 1))


def _floor_half(x: Fraction) -> int:
    return math.floor(x / 2)


def _ceil_half(x: Fraction) -> int:
    return math.ceil(x / 2)


class _Accumulator:
    """Sum of hypergeometric-product terms, in floats or exact rationals."""

    def __init__(self, exact: bool):
        self.exact = exact
        self.terms: list = []

    def add(self, *factors):
        # each factor: (n, k) for C(n,k) in the numerator, or ("/", n, k) in the denominator
        if self.exact:
            num, den = 1, 1
            for f in factors:
                if f[0] == "/":
                    den *= math.comb(f[1], f[2])
                else:
                    if f[1] < 0 or f[1] > f[0]:
                        return
                    num *= math.comb(f[0], f[1])
            if num:
                self.terms.append(Fraction(num, den))
            return
        log_t = 0.0
        for f in factors:
            if f[0] == "/":
                log_t -= log_binomial(f[1], f[2])
            else:
                log_t += log_binomial(f[0], f[1])
        if log_t != -math.inf:
            self.terms.append(log_t)

    def total(self, weight=1):
        if self.exact:
            return weight * sum(self.terms, Fraction(0))
        if not self.terms:
            return 0.0
        shift = max(self.terms)
        return float(weight) * _unit(math.exp(shift) * math.fsum(math.exp(t - shift) for t in self.terms))


def _unit(p: float) -> float:
    # log-gamma rounding can push a tail sum a few ulps past [0, 1]
    return min(1.0, max(0.0, p))


def _check_args(i, j, params):
    if not isinstance(params, ModelParams):
        raise TypeError("params must be a ModelParams instance")
    return check_state(i, j, params.N)


def _neighbor_counts(N: int, j: int) -> Iterator[int]:
    # outer hypergeometric range: N-1 draws from C(N,2) arcs, j of them positive
    lo = max(0, j - (N - 1) * (N - 2) // 2)
    hi = min(j, N - 1)
    return iter(range(lo, hi + 1))


def p_plus_plus(i: int, j: int, params: ModelParams, exact: bool = False):
    """Probability that a chosen +1 site stays +1 in state ``(i, j)``."""
    i, j = _check_args(i, j, params)
    if i < 1:
        raise ValueError(f"P++ needs a +1 site, got i={i}")
    N, A = params.N, params.n_arcs
    a = contrarian_threshold(i, j, params)
    acc = _Accumulator(exact)
    for ell in _neighbor_counts(N, j):
        k_lo = 1 + _floor_half(ell + a)
        for k in range(k_lo, min(ell, i - 1) + 1):
            acc.add((j, ell), (A - j, N - 1 - ell), ("/", A, N - 1),
                    (i - 1, k), (N - i, ell - k), ("/", N - 1, ell))
    return acc.total()


def p_minus_minus(i: int, j: int, params: ModelParams, exact: bool = False):
    """Probability that a chosen -1 site stays -1 in state ``(i, j)``."""
    i, j = _check_args(i, j, params)
    N, A = params.N, params.n_arcs
    if i > N - 1:
        raise ValueError(f"P-- needs a -1 site, got i={i} with N={N}")
    a = contrarian_threshold(i, j, params)
    acc = _Accumulator(exact)
    for ell in _neighbor_counts(N, j):
        k_hi = _ceil_half(ell - a) - 1
        for k in range(max(0, i + ell + 1 - N), k_hi + 1):
            acc.add((j, ell), (A - j, N - 1 - ell), ("/", A, N - 1),
                    (i, k), (N - i - 1, ell - k), ("/", N - 1, ell))
    return acc.total()


def _endpoint_weights(i: int, N: int, exact: bool):
    den = N * (N - 1)
    one, two = 2 * i * (N - i), i * (i - 1)
    if exact:
        return Fraction(one, den), Fraction(two, den)
    return one / den, two / den


def q_plus_plus(i: int, j: int, params: ModelParams, exact: bool = False):
    """Probability that a chosen +1 arc stays +1 in state ``(i, j)``."""
    i, j = _check_args(i, j, params)
    if j < 1:
        raise ValueError(f"Q++ needs a +1 arc, got j={j}")
    N, A = params.N, params.n_arcs
    a = contrarian_threshold(i, j, params)
    w_one, w_two = _endpoint_weights(i, N, exact)
    total = Fraction(0) if exact else 0.0
    # one positive endpoint: N-2 neighbors; two: 2N-4 neighbors
    for w, size in ((w_one, N - 2), (w_two, 2 * N - 4)):
        if not w:
            continue
        k_lo = max(1 + _floor_half(size + a), j - (A - size))
        acc = _Accumulator(exact)
        for k in range(k_lo, min(j - 1, size) + 1):
            acc.add((j - 1, k), (A - j, size - k), ("/", A - 1, size))
        total += acc.total(w)
    return total if exact else _unit(total)


def q_minus_minus(i: int, j: int, params: ModelParams, exact: bool = False):
    """Probability that a chosen -1 arc stays -1 in state ``(i, j)``."""
    i, j = _check_args(i, j, params)
    N, A = params.N, params.n_arcs
    if j > A - 1:
        raise ValueError(f"Q-- needs a -1 arc, got j={j} with C(N,2)={A}")
    a = contrarian_threshold(i, j, params)
    w_one, w_two = _endpoint_weights(i, N, exact)
    total = Fraction(0) if exact else 0.0
    for w, size in ((w_one, N - 2), (w_two, 2 * N - 4)):
        if not w:
            continue
        k_hi = _ceil_half(size - a) - 1
        acc = _Accumulator(exact)
        for k in range(max(0, j - (A - 1 - size)), k_hi + 1):
            acc.add((j, k), (A - j - 1, size - k), ("/", A - 1, size))
        total += acc.total(w)
    return total if exact else _unit(total)


def stay_probabilities(i: int, j: int, params: ModelParams, exact: bool = False) -> dict:
    """The four stay probabilities, with ``None`` where the element kind is absent."""
    i, j = _check_args(i, j, params)
    N, A = params.N, params.n_arcs
    return {
        "p_plus_plus": p_plus_plus(i, j, params, exact) if i >= 1 else None,
        "p_minus_minus": p_minus_minus(i, j, params, exact) if i <= N - 1 else None,
        "q_plus_plus": q_plus_plus(i, j, params, exact) if j >= 1 else None,
        "q_minus_minus": q_minus_minus(i, j, params, exact) if j <= A - 1 else None,
    }


@dataclass(frozen=True)
class StepDistribution:
    """One-step law of the macro chain from ``state``.

    ``up_site``/``down_site`` move ``i`` by +-1, ``up_arc``/``down_arc`` move
    ``j``; ``hold`` is the probability of staying put.
    """

    state: MacroState
    up_site: float | Fraction
    down_site: float | Fraction
    up_arc: float | Fraction
    down_arc: float | Fraction
    hold: float | Fraction

    @property
    def entries(self) -> list[tuple[MacroState, float | Fraction]]:
        i, j = self.state
        moves = [
            ((i + 1, j), self.up_site),
            ((i - 1, j), self.down_site),
            ((i, j + 1), self.up_arc),
            ((i, j - 1), self.down_arc),
            ((i, j), self.hold),
        ]
        return [(MacroState(*s), p) for s, p in moves if p != 0]

    def as_dict(self) -> dict[MacroState, float | Fraction]:
        return dict(self.entries)

    def total(self):
        return self.up_site + self.down_site + self.up_arc + self.down_arc + self.hold


def macro_step_distribution(i: int, j: int, params: ModelParams, exact: bool = False) -> StepDistribution:
    """One-step transition law of ``(S+, A+)`` in the frozen limit.

    The hold mass is ``2L(i,j)/(N(N+1))`` with
    ``L = (N-i)P-- + iP++ + (C-j)Q-- + jQ++``; stay probabilities whose
    selection weight is zero are not evaluated.
    """
    i, j = _check_args(i, j, params)
    N, A = params.N, params.n_arcs
    s = stay_probabilities(i, j, params, exact)
    den = N * (N + 1)
    if exact:
        def w(k):
            return Fraction(k, den)
        one = Fraction(1)
    else:
        def w(k):
            return k / den
        one = 1.0

    def stay(key):
        p = s[key]
        return 0 if p is None else p

    up_site = w(2 * (N - i)) * (one - stay("p_minus_minus")) if i < N else 0 * one
    down_site = w(2 * i) * (one - stay("p_plus_plus")) if i > 0 else 0 * one
    up_arc = w(2 * (A - j)) * (one - stay("q_minus_minus")) if j < A else 0 * one
    down_arc = w(2 * j) * (one - stay("q_plus_plus")) if j > 0 else 0 * one
    L = ((N - i) * stay("p_minus_minus") + i * stay("p_plus_plus")
         + (A - j) * stay("q_minus_minus") + j * stay("q_plus_plus"))
    hold = w(2) * L
    return StepDistribution(MacroState(i, j), up_site, down_site, up_arc, down_arc, hold)


def is_trapping(i: int, j: int, params: ModelParams) -> bool:
    """True when the exact hold probability at ``(i, j)`` equals one."""
    return macro_step_distribution(i, j, params, exact=True).hold == 1


def _hypergeom_pmf(pop: int, succ: int, draws: int) -> dict[int, Fraction]:
    den = math.comb(pop, draws)
    out = {}
    for k in range(0, draws + 1):
        num = math.comb(succ, k) * math.comb(pop - succ, draws - k)
        if num:
            out[k] = Fraction(num, den)
    return out


def brute_force_flip_oracle(i: int, j: int, params: ModelParams, element_kind: str) -> Fraction:
    """Exact stay probability by enumerating every neighborhood outcome.

    Independent of the closed-form summation bounds: each outcome's potential
    is formed directly and tested for the sign that keeps the spin. Only for
    ``N <= 6``.

    Parameters
    ----------
    element_kind : {"site+", "site-", "arc+", "arc-"}
        Which kind of element is picked and its current spin.
    """
    i, j = _check_args(i, j, params)
    N, A = params.N, params.n_arcs
    if N > ORACLE_MAX_N:
        raise ValueError(f"oracle refuses N={N} > {ORACLE_MAX_N}")
    kinds = {"site+": 1, "site-": -1, "arc+": 1, "arc-": -1}
    if element_kind not in kinds:
        raise ValueError(f"unknown element kind {element_kind!r}")
    spin = kinds[element_kind]
    G = Fraction(abs(4 * (i + j) - N * (N + 1)), 2 * N * (N + 1))
    contrarian = params.alpha_exact * spin * G

    def keeps(local_sum) -> bool:
        h = local_sum - contrarian
        return h > 0 if spin == 1 else h < 0

    total = Fraction(0)
    if element_kind.startswith("site"):
        if (spin == 1 and i < 1) or (spin == -1 and i > N - 1):
            raise ValueError(f"no {element_kind} element in state ({i}, {j})")
        other_pos = i - 1 if spin == 1 else i
        for size, p_size in _hypergeom_pmf(A, j, N - 1).items():
            for k, p_k in _hypergeom_pmf(N - 1, other_pos, size).items():
                if keeps(2 * k - size):
                    total += p_size * p_k
        return total

    if (spin == 1 and j < 1) or (spin == -1 and j > A - 1):
        raise ValueError(f"no {element_kind} element in state ({i}, {j})")
    other_pos = j - 1 if spin == 1 else j
    for red, p_red in _hypergeom_pmf(N, i, 2).items():
        size = red * (N - 2)
        for k, p_k in _hypergeom_pmf(A - 1, other_pos, size).items():
            if keeps(2 * k - size):
                total += p_red * p_k
    return total


def simulate_macro_chain(start, params: ModelParams, steps: int, rng=None) -> np.ndarray:
    """Sample a path of the macro chain; returns the ``steps`` states after ``start``."""
    check_int(steps, "steps", minimum=0)
    i, j = check_state(*start, params.N)
    rng = as_generator(rng)
    cache: dict[tuple[int, int], np.ndarray] = {}
    out = np.empty((steps, 2), dtype=np.int64)
    # inverse-CDF sampling from one block of uniforms keeps runs reproducible
    u = rng.random(steps)
    moves = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [0, 0]])
    for n in range(steps):
        key = (i, j)
        if key not in cache:
            d = macro_step_distribution(i, j, params)
            cdf = np.cumsum([d.up_site, d.down_site, d.up_arc, d.down_arc, d.hold])
            cache[key] = cdf / cdf[-1]
        idx = int(np.searchsorted(cache[key], u[n], side="right"))
        idx = min(idx, 4)
        i += moves[idx, 0]
        j += moves[idx, 1]
        out[n] = (i, j)
    return out


def _kernel_table(params: ModelParams) -> list[dict]:
    # one row per state, in flat-index order
    N, A = params.N, n_arcs(params.N)
    rows = []
    for j in range(A + 1):
        for i in range(N + 1):
            d = macro_step_distribution(i, j, params)
            rows.append({"i": i, "j": j, "p_up_site": d.up_site, "p_down_site": d.down_site,
                         "p_up_arc": d.up_arc, "p_down_arc": d.down_arc, "p_hold": d.hold})
    return rows
