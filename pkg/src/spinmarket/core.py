"""Microscopic site/arc spin model and its finite-beta heat-bath dynamics.

Sites are labelled ``0..N-1``. Arcs are the unordered pairs ``(x, y)`` with
``x < y``, stored in lexicographic order, so ``arc_spins[arc_index(x, y, N)]``
is the spin of the arc joining ``x`` and ``y``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

import numpy as np

from ._validation import as_generator, check_int

__all__ = [
    "TiePolicy",
    "ModelParams",
    "MacroState",
    "MicroConfig",
    "n_arcs",
    "arc_index",
    "arc_pairs",
    "macro_counts",
    "global_imbalance",
    "sample_site_neighborhood",
    "sample_arc_neighborhood",
    "site_potential",
    "arc_potential",
    "spin_up_probability",
    "heat_bath_update",
    "run_micro",
    "random_config",
    "format_config",
    "parse_config",
]


class TiePolicy(str, enum.Enum):
    """How a frozen-limit update resolves a potential of exactly zero."""

    PAPER_KERNEL = "paper-kernel"  # zero potential flips the spin
    HEAT_BATH_HALF = "heat-bath-half"  # zero potential gives +1 with probability 1/2


def n_arcs(N: int) -> int:
    return N * (N - 1) // 2


@dataclass(frozen=True)
class ModelParams:
    """Parameterization of one model instance.

    ``beta=math.inf`` selects the frozen limit, where updates follow the sign
    of the interaction potential and randomness only enters through the
    neighborhood draws.
    """

    N: int
    alpha: float | int | Fraction = 0
    tie_policy: TiePolicy = TiePolicy.PAPER_KERNEL
    beta: float = math.inf

    def __post_init__(self):
        check_int(self.N, "N", minimum=2)
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha!r}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta!r}")
        object.__setattr__(self, "tie_policy", TiePolicy(self.tie_policy))

    @property
    def n_arcs(self) -> int:
        return n_arcs(self.N)

    @property
    def n_elements(self) -> int:
        return self.N * (self.N + 1) // 2

    @property
    def frozen(self) -> bool:
        return math.isinf(self.beta)

    @cached_property
    def alpha_exact(self) -> Fraction:
        # exact for ints, Fractions and binary floats alike
        return Fraction(self.alpha)


class MacroState(NamedTuple):
    """Counts ``(i, j)`` of positive sites and positive arcs."""

    i: int
    j: int


def arc_index(x: int, y: int, N: int) -> int:
    if x == y:
        raise ValueError("an arc needs two distinct endpoints")
    if x > y:
        x, y = y, x
    if x < 0 or y >= N:
        raise ValueError(f"arc ({x}, {y}) out of range for N={N}")
    return x * N - x * (x + 1) // 2 + (y - x - 1)


def arc_pairs(N: int) -> list[tuple[int, int]]:
    return [(x, y) for x in range(N) for y in range(x + 1, N)]


@dataclass(eq=False)
class MicroConfig:
    """Joint spin assignment of sites and arcs."""

    site_spins: np.ndarray
    arc_spins: np.ndarray
    _star_cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.site_spins = np.asarray(self.site_spins, dtype=np.int8).copy()
        self.arc_spins = np.asarray(self.arc_spins, dtype=np.int8).copy()
        N = self.site_spins.size
        if N < 2:
            raise ValueError("need at least two sites")
        if self.arc_spins.size != n_arcs(N):
            raise ValueError(
                f"expected {n_arcs(N)} arc spins for N={N}, got {self.arc_spins.size}"
            )
        for name, arr in (("site", self.site_spins), ("arc", self.arc_spins)):
            if not np.all(np.abs(arr) == 1):
                raise ValueError(f"{name} spins must be +1 or -1")

    @classmethod
    def uniform(cls, N: int, spin: int = -1) -> "MicroConfig":
        return cls(np.full(N, spin), np.full(n_arcs(N), spin))

    @property
    def N(self) -> int:
        return self.site_spins.size

    def arc_spin(self, x: int, y: int) -> int:
        return int(self.arc_spins[arc_index(x, y, self.N)])

    def star(self, x: int, exclude: int) -> np.ndarray:
        """Indices of the arcs at ``x``, leaving out the arc to ``exclude``."""
        key = (x, exclude)
        if key not in self._star_cache:
            self._star_cache[key] = np.array(
                [arc_index(x, k, self.N) for k in range(self.N) if k != x and k != exclude],
                dtype=np.intp,
            )
        return self._star_cache[key]

    def copy(self) -> "MicroConfig":
        return MicroConfig(self.site_spins, self.arc_spins)

    def __eq__(self, other):
        if not isinstance(other, MicroConfig):
            return NotImplemented
        return np.array_equal(self.site_spins, other.site_spins) and np.array_equal(
            self.arc_spins, other.arc_spins
        )


def macro_counts(config: MicroConfig) -> MacroState:
    return MacroState(int(np.count_nonzero(config.site_spins == 1)),
                      int(np.count_nonzero(config.arc_spins == 1)))


def _imbalance_numerator(i: int, j: int, N: int) -> int:
    # G = numerator / (2N(N+1))
    return abs(4 * (i + j) - N * (N + 1))


def global_imbalance(state, N: int) -> float:
    """Half the absolute deviation of ``4(i+j)/(N(N+1))`` from 1; lies in [0, 1/2]."""
    i, j = state
    return _imbalance_numerator(i, j, N) / (2 * N * (N + 1))


def sample_site_neighborhood(config: MicroConfig, y: int, rng=None) -> np.ndarray:
    """Random neighborhood of site ``y`` drawn from the arc urn.

    The size is hypergeometric (``N-1`` draws from the ``C(N,2)`` arcs, of
    which ``A+`` are positive) and the members are a uniform subset of the
    other sites.
    """
    rng = as_generator(rng)
    N = config.N
    n_pos = int(np.count_nonzero(config.arc_spins == 1))
    size = int(rng.hypergeometric(n_pos, n_arcs(N) - n_pos, N - 1)) if n_pos else 0
    others = np.delete(np.arange(N), y)
    if size == 0:
        return others[:0]
    return np.sort(rng.choice(others, size=size, replace=False))


def sample_arc_neighborhood(config: MicroConfig, arc: tuple[int, int], rng=None) -> np.ndarray:
    """Random neighborhood of ``arc`` drawn from the site urn.

    Two sites are drawn without replacement; each positive draw attaches the
    star of one endpoint (minus the base arc). Result sizes are 0, N-2 or 2N-4.
    """
    rng = as_generator(rng)
    x, y = arc
    N = config.N
    n_pos = int(np.count_nonzero(config.site_spins == 1))
    red = int(rng.hypergeometric(n_pos, N - n_pos, 2)) if n_pos else 0
    if red == 0:
        return np.empty(0, dtype=np.intp)
    if red == 2:
        return np.concatenate([config.star(x, y), config.star(y, x)])
    if rng.random() < 0.5:
        return config.star(x, y)
    return config.star(y, x)


def _scaled_potential(local_sum: int, spin: int, state, params: ModelParams) -> Fraction:
    # potential * 2N(N+1), exact
    N = params.N
    return local_sum * 2 * N * (N + 1) - spin * params.alpha_exact * _imbalance_numerator(*state, N)


def site_potential(config: MicroConfig, x: int, nbhd, alpha, state=None) -> float:
    """Local-majority sum over ``nbhd`` minus the contrarian term ``alpha*eta(x)*G``."""
    if state is None:
        state = macro_counts(config)
    local = int(config.site_spins[np.asarray(nbhd, dtype=np.intp)].sum()) if len(nbhd) else 0
    return local - alpha * int(config.site_spins[x]) * global_imbalance(state, config.N)


def arc_potential(config: MicroConfig, arc, nbhd, alpha, state=None) -> float:
    """Same as :func:`site_potential` for an arc and a set of arc indices."""
    if state is None:
        state = macro_counts(config)
    a = arc if isinstance(arc, (int, np.integer)) else arc_index(*arc, config.N)
    local = int(config.arc_spins[np.asarray(nbhd, dtype=np.intp)].sum()) if len(nbhd) else 0
    return local - alpha * int(config.arc_spins[a]) * global_imbalance(state, config.N)


def spin_up_probability(potential, params: ModelParams, spin: int = 1) -> float:
    """Probability that an update with the given potential sets the spin to +1.

    Finite ``beta`` gives the logistic ``1/(1+exp(-2*beta*potential))``. In
    the frozen limit the sign decides; a zero potential follows
    ``params.tie_policy`` (flip ``spin``, or a fair coin).
    """
    if params.frozen:
        if potential > 0:
            return 1.0
        if potential < 0:
            return 0.0
        if params.tie_policy is TiePolicy.PAPER_KERNEL:
            return 1.0 if spin < 0 else 0.0
        return 0.5
    z = -2.0 * params.beta * float(potential)
    # stays finite for large |potential|
    return 1.0 / (1.0 + math.exp(z)) if z < 700 else 0.0


def _new_spin(scaled_pot, spin: int, params: ModelParams, rng) -> int:
    if params.frozen:
        p_up = spin_up_probability(scaled_pot, params, spin)
        if p_up in (0.0, 1.0):
            return 1 if p_up == 1.0 else -1
    else:
        N = params.N
        p_up = spin_up_probability(float(scaled_pot) / (2 * N * (N + 1)), params, spin)
    return 1 if rng.random() < p_up else -1


_ARC_PAIRS: dict[int, list] = {}


def _update_in_place(config: MicroConfig, params: ModelParams, rng, counts: list, stir: bool):
    N = params.N
    A = params.n_arcs
    e = int(rng.integers(N + A))
    state = (counts[0], counts[1])
    if e < N:
        spin = int(config.site_spins[e])
        nbhd = sample_site_neighborhood(config, e, rng)
        if stir and nbhd.size:
            # neighbor spins come from a uniform relabelling of the other sites
            others = np.delete(config.site_spins, e)
            local = int(rng.choice(others, size=nbhd.size, replace=False).sum())
        else:
            local = int(config.site_spins[nbhd].sum()) if nbhd.size else 0
        new = _new_spin(_scaled_potential(local, spin, state, params), spin, params, rng)
        if new != spin:
            config.site_spins[e] = new
            counts[0] += (new - spin) // 2
        return
    a = e - N
    spin = int(config.arc_spins[a])
    arc = _ARC_PAIRS.setdefault(N, arc_pairs(N))[a]
    nbhd = sample_arc_neighborhood(config, arc, rng)
    if stir and nbhd.size:
        others = np.delete(config.arc_spins, a)
        local = int(rng.choice(others, size=nbhd.size, replace=False).sum())
    else:
        local = int(config.arc_spins[nbhd].sum()) if nbhd.size else 0
    new = _new_spin(_scaled_potential(local, spin, state, params), spin, params, rng)
    if new != spin:
        config.arc_spins[a] = new
        counts[1] += (new - spin) // 2


def heat_bath_update(config: MicroConfig, params: ModelParams, rng=None, stir: bool = True) -> MicroConfig:
    """One epoch: pick a site or arc uniformly and redraw its spin.

    The new spin is +1 with probability ``1/(1+exp(-2*beta*potential))``,
    evaluated on a freshly sampled neighborhood. With ``stir=True`` the spins
    read off the neighborhood members are taken from a uniform relabelling of
    the other elements of the same kind, which is what makes the macro counts
    evolve as the exact kernel chain. Returns a new configuration.
    """
    if config.N != params.N:
        raise ValueError(f"config has N={config.N}, params have N={params.N}")
    rng = as_generator(rng)
    out = config.copy()
    _update_in_place(out, params, rng, list(macro_counts(out)), stir)
    return out


def run_micro(config: MicroConfig, params: ModelParams, steps: int, rng=None, stir: bool = True) -> np.ndarray:
    """Apply ``steps`` heat-bath epochs and return the macro state after each.

    The initial state is not included. Output has shape ``(steps, 2)``.
    """
    check_int(steps, "steps", minimum=0)
    if config.N != params.N:
        raise ValueError(f"config has N={config.N}, params have N={params.N}")
    rng = as_generator(rng)
    work = config.copy()
    counts = list(macro_counts(work))
    out = np.empty((steps, 2), dtype=np.int64)
    for n in range(steps):
        _update_in_place(work, params, rng, counts, stir)
        out[n] = counts
    return out


def random_config(N: int, state, rng=None) -> MicroConfig:
    """Uniformly random configuration with the given macro counts."""
    rng = as_generator(rng)
    i, j = state
    A = n_arcs(N)
    if not (0 <= i <= N and 0 <= j <= A):
        raise ValueError(f"state {tuple(state)} outside [0,{N}]x[0,{A}]")
    sites = -np.ones(N, dtype=np.int8)
    sites[rng.choice(N, size=i, replace=False)] = 1
    arcs = -np.ones(A, dtype=np.int8)
    arcs[rng.choice(A, size=j, replace=False)] = 1
    return MicroConfig(sites, arcs)


def format_config(config: MicroConfig) -> str:
    """Two lines: site spins, then arc spins in lexicographic pair order."""
    return (" ".join(str(int(s)) for s in config.site_spins) + "\n"
            + " ".join(str(int(s)) for s in config.arc_spins) + "\n")


def parse_config(text: str) -> MicroConfig:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) != 2:
        raise ValueError(f"expected 2 non-empty lines, got {len(lines)}")
    sites, arcs = ([int(tok) for tok in ln.split()] for ln in lines)
    return MicroConfig(sites, arcs)
