"""Deterministic skeleton of the macro chain.

The drift functions ``f`` and ``g`` are rescaled conditional mean increments
of ``S+`` and ``A+``.  Stepping by their signs gives a cellular automaton on
the ``(N + 1) x (C + 1)`` lattice; its cycles are the candidate attractors,
classified by following every lattice neighbour for a few steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._io import write_csv, write_json
from ._validation import check_int, check_state
from .core import MacroState, ModelParams, n_arcs
from .kernel import StepDistribution, macro_step_distribution, stay_probabilities

__all__ = [
    "ZERO_TOL",
    "DriftField",
    "Cycle",
    "StabilityResult",
    "AttractorReport",
    "Excursion",
    "ExcursionSet",
    "SubmartingaleReport",
    "drift_f",
    "drift_g",
    "drift_field",
    "ca_step",
    "ca_orbit",
    "find_equilibria",
    "basin_map",
    "zero_crossings",
    "classify_stability",
    "analyze_attractors",
    "extract_excursions",
    "test_contingent_submartingale",
    "two_step_deviation",
    "discretization_deviation",
    "round_half_away",
]

ZERO_TOL = 1e-12


def _sign(x: float, tol: float = ZERO_TOL) -> int:
    if abs(x) < tol:
        return 0
    return 1 if x > 0 else -1


def _stay(i, j, params):
    s = stay_probabilities(i, j, params)
    return {k: (0.0 if v is None else float(v)) for k, v in s.items()}


def drift_f(i: int, j: int, params: ModelParams) -> float:
    """``(1 - i/N)(1 - P--) - (i/N)(1 - P++)``; zero-weight terms are dropped."""
    i, j = check_state(i, j, params.N)
    N = params.N
    s = _stay(i, j, params)
    up = (1 - i / N) * (1 - s["p_minus_minus"]) if i < N else 0.0
    down = (i / N) * (1 - s["p_plus_plus"]) if i > 0 else 0.0
    return up - down


def drift_g(i: int, j: int, params: ModelParams) -> float:
    """``(1 - j/C)(1 - Q--) - (j/C)(1 - Q++)`` with ``C = N(N-1)/2``."""
    i, j = check_state(i, j, params.N)
    A = params.n_arcs
    s = _stay(i, j, params)
    up = (1 - j / A) * (1 - s["q_minus_minus"]) if j < A else 0.0
    down = (j / A) * (1 - s["q_plus_plus"]) if j > 0 else 0.0
    return up - down


@dataclass
class DriftField:
    """Drift values and their signs on the whole lattice, indexed ``[i, j]``."""

    N: int
    f: np.ndarray
    g: np.ndarray
    alpha: float | None = None
    zero_tol: float = ZERO_TOL

    def __post_init__(self):
        shape = (self.N + 1, n_arcs(self.N) + 1)
        self.f = np.asarray(self.f, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.f.shape != shape or self.g.shape != shape:
            raise ValueError(f"drift grids must have shape {shape}")

    @property
    def n_arcs(self) -> int:
        return n_arcs(self.N)

    @property
    def shape(self) -> tuple[int, int]:
        return self.f.shape

    @property
    def sign_f(self) -> np.ndarray:
        return np.where(np.abs(self.f) < self.zero_tol, 0, np.sign(self.f)).astype(int)

    @property
    def sign_g(self) -> np.ndarray:
        return np.where(np.abs(self.g) < self.zero_tol, 0, np.sign(self.g)).astype(int)

    def contains(self, state) -> bool:
        i, j = state
        return 0 <= i <= self.N and 0 <= j <= self.n_arcs

    def states(self):
        for j in range(self.n_arcs + 1):
            for i in range(self.N + 1):
                yield MacroState(i, j)

    def rows(self):
        sf, sg = self.sign_f, self.sign_g
        for i, j in self.states():
            yield i, j, self.f[i, j], self.g[i, j], sf[i, j], sg[i, j]

    def to_csv(self, path):
        return write_csv(path, ["i", "j", "f", "g", "sign_f", "sign_g"], self.rows())

    @classmethod
    def zeros(cls, N: int) -> "DriftField":
        shape = (N + 1, n_arcs(N) + 1)
        return cls(N, np.zeros(shape), np.zeros(shape))


def drift_field(params: ModelParams, zero_tol: float = ZERO_TOL) -> DriftField:
    N, A = params.N, params.n_arcs
    f = np.empty((N + 1, A + 1))
    g = np.empty((N + 1, A + 1))
    for i in range(N + 1):
        for j in range(A + 1):
            f[i, j] = drift_f(i, j, params)
            g[i, j] = drift_g(i, j, params)
    return DriftField(N, f, g, alpha=params.alpha, zero_tol=zero_tol)


def ca_step(state, field: DriftField) -> MacroState:
    """``(i + sgn f, j + sgn g)``, clamped to the lattice."""
    i, j = check_state(*state, field.N)
    di = _sign(field.f[i, j], field.zero_tol)
    dj = _sign(field.g[i, j], field.zero_tol)
    return MacroState(min(max(i + di, 0), field.N), min(max(j + dj, 0), field.n_arcs))


def ca_orbit(state, field: DriftField, steps: int) -> list[MacroState]:
    """``state`` followed by ``steps`` automaton iterates."""
    out = [MacroState(*state)]
    for _ in range(check_int(steps, "steps", minimum=0)):
        out.append(ca_step(out[-1], field))
    return out


@dataclass(frozen=True)
class Cycle:
    """A periodic orbit of the automaton, listed in orbit order from its smallest state."""

    states: tuple[MacroState, ...]

    @property
    def period(self) -> int:
        return len(self.states)

    @property
    def kind(self) -> str:
        return {1: "fixed point", 2: "2-cycle"}.get(self.period, "long cycle")

    @property
    def beyond_scope(self) -> bool:
        return self.period > 2

    def __contains__(self, state) -> bool:
        return tuple(state) in {tuple(s) for s in self.states}

    def label(self) -> str:
        return " <-> ".join(f"({i},{j})" for i, j in self.states)


def _canonical_cycle(states: Sequence) -> Cycle:
    states = [MacroState(*s) for s in states]
    k = states.index(min(states))
    return Cycle(tuple(states[k:] + states[:k]))


def _cycle_through(state, field: DriftField) -> Cycle:
    seen: dict = {}
    s = MacroState(*state)
    while s not in seen:
        seen[s] = len(seen)
        s = ca_step(s, field)
    orbit = list(seen)
    return _canonical_cycle(orbit[seen[s]:])


def _terminal_cycles(field: DriftField) -> dict[MacroState, Cycle]:
    """Map every lattice state to the cycle its orbit ends in."""
    result: dict[MacroState, Cycle] = {}
    for start in field.states():
        if start in result:
            continue
        path = []
        on_path: set = set()
        s = start
        while s not in result and s not in on_path:
            path.append(s)
            on_path.add(s)
            s = ca_step(s, field)
        cyc = result[s] if s in result else _cycle_through(s, field)
        for p in path:
            result[p] = cyc
    return result


def find_equilibria(field: DriftField) -> list[Cycle]:
    """Every cycle of the automaton, fixed points first, then by position."""
    cycles = set(_terminal_cycles(field).values())
    return sorted(cycles, key=lambda c: (c.period, c.states))


def basin_map(field: DriftField) -> dict[MacroState, Cycle]:
    return _terminal_cycles(field)


def zero_crossings(field: DriftField) -> list[tuple[float, float]]:
    """Approximate real intersections of the level sets ``f = 0`` and ``g = 0``.

    Each lattice cell whose four corners see a sign change (or zero) in both
    ``f`` and ``g`` contributes one point: the intersection of the two
    straight lines fitted through the linearly interpolated edge crossings,
    falling back to the mean of those crossings when the lines are parallel
    or meet outside the cell.
    """
    out = []
    sf, sg = field.sign_f, field.sign_g
    for i in range(field.N):
        for j in range(field.n_arcs):
            corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            pf = _edge_zeros(field.f, sf, corners)
            pg = _edge_zeros(field.g, sg, corners)
            if not pf or not pg:
                continue
            out.append(_meet(pf, pg, (i, j)))
    return out


def _edge_zeros(vals, signs, corners):
    pts = []
    for a, b in zip(corners, corners[1:] + corners[:1]):
        sa, sb = signs[a], signs[b]
        if sa == 0:
            pts.append(tuple(map(float, a)))
        elif sa * sb < 0:
            t = vals[a] / (vals[a] - vals[b])
            pts.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
    return pts


def _meet(pf, pg, cell):
    cf = np.mean(pf, axis=0)
    cg = np.mean(pg, axis=0)
    if len(pf) >= 2 and len(pg) >= 2:
        d1 = np.subtract(pf[1], pf[0])
        d2 = np.subtract(pg[1], pg[0])
        den = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(den) > 1e-12:
            r = np.subtract(pg[0], pf[0])
            t = (r[0] * d2[1] - r[1] * d2[0]) / den
            p = np.asarray(pf[0]) + t * d1
            if cell[0] <= p[0] <= cell[0] + 1 and cell[1] <= p[1] <= cell[1] + 1:
                return float(p[0]), float(p[1])
    c = (cf + cg) / 2
    return float(c[0]), float(c[1])


@dataclass
class StabilityResult:
    """Outcome of the lattice-escape test around one attractor."""

    states: tuple[MacroState, ...]
    stability: str
    returned: list[MacroState]
    escaped: list[MacroState]
    exits: dict[MacroState, MacroState]
    escape_axis: str

    @property
    def escape_notes(self) -> str:
        if not self.escaped:
            return "no escapes"
        if not self.returned:
            return "escape from everywhere"
        gates = sorted(set(self.exits.values()))
        through = ", ".join(f"({i},{j})" for i, j in gates)
        return f"escape along {self.escape_axis} axis through {through}"


def _block(states, radius, field):
    block = set()
    for (i, j) in states:
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                s = (i + di, j + dj)
                if field.contains(s):
                    block.add(MacroState(*s))
    return block


def classify_stability(attractor, field: DriftField, radius: int = 1, max_steps: int = 8,
                       cycles: Sequence[Cycle] | None = None) -> StabilityResult:
    """Lattice-escape classification of a fixed point or cycle.

    Every off-attractor state within Chebyshev distance ``radius`` is followed
    for up to ``max_steps`` automaton steps.  It counts as returning if it
    reaches the attractor, or reaches another automaton cycle lying entirely
    inside the same neighbourhood (interleaved cycles trap each other's
    perturbations).  ``stable`` means every start returns, ``unstable`` that
    none does, ``saddle`` anything in between.

    Parameters
    ----------
    attractor : Cycle or sequence of states
    field : DriftField
    radius, max_steps : int
    cycles : sequence of Cycle, optional
        Precomputed :func:`find_equilibria` output.
    """
    radius = check_int(radius, "radius", minimum=1)
    max_steps = check_int(max_steps, "max_steps", minimum=1)
    states = tuple(MacroState(*s) for s in (attractor.states if isinstance(attractor, Cycle) else attractor))
    if not states:
        raise ValueError("attractor has no states")
    for s in states:
        check_state(*s, field.N)
    block = _block(states, radius, field)
    if cycles is None:
        cycles = find_equilibria(field)
    target = set(states)
    for c in cycles:
        if all(s in block for s in c.states):
            target.update(c.states)

    returned, escaped, exits = [], [], {}
    for start in sorted(block - set(states)):
        orbit = ca_orbit(start, field, max_steps)
        if any(s in target for s in orbit):
            returned.append(start)
            continue
        escaped.append(start)
        outside = next((s for s in orbit if s not in block), orbit[-1])
        exits[start] = outside
    if not escaped:
        stability = "stable"
    elif not returned:
        stability = "unstable"
    else:
        stability = "saddle"
    return StabilityResult(states, stability, returned, escaped, exits,
                           _escape_axis(states, returned, escaped))


def _escape_axis(states, returned, escaped) -> str:
    def offsets(group):
        out = set()
        for s in group:
            near = min(states, key=lambda a: max(abs(a[0] - s[0]), abs(a[1] - s[1])))
            out.add((s[0] != near[0], s[1] != near[1]))
        return out

    esc, ret = offsets(escaped), offsets(returned)
    if esc and all(di for di, _ in esc) and all(not di for di, _ in ret):
        return "horizontal"
    if esc and all(dj for _, dj in esc) and all(not dj for _, dj in ret):
        return "vertical"
    return "mixed"


@dataclass
class AttractorReport:
    """Automaton cycles with their stability class and basins."""

    N: int
    alpha: float | None
    attractors: list[dict]
    basins: dict[MacroState, Cycle]
    crossings: list[tuple[float, float]] = field(default_factory=list)

    def fixed_points(self) -> list[MacroState]:
        return [a["states"][0] for a in self.attractors if len(a["states"]) == 1]

    def two_cycles(self) -> list[tuple[MacroState, ...]]:
        return [a["states"] for a in self.attractors if len(a["states"]) == 2]

    def to_json(self, path):
        payload = {
            "N": self.N,
            "alpha": self.alpha,
            "attractors": [
                {"states": [list(s) for s in a["states"]], "kind": a["kind"], "class": a["class"],
                 "escape_notes": a["escape_notes"], "beyond_scope": a["beyond_scope"],
                 "basin_size": a["basin_size"]}
                for a in self.attractors
            ],
            "zero_crossings": [list(p) for p in self.crossings],
        }
        return write_json(path, payload)

    def basins_csv(self, path):
        labels = {c: k for k, c in enumerate(a["cycle"] for a in self.attractors)}
        rows = ((s.i, s.j, labels[c], c.label()) for s, c in sorted(self.basins.items(), key=lambda t: (t[0].j, t[0].i)))
        return write_csv(path, ["i", "j", "attractor", "cycle"], rows)


def analyze_attractors(field_or_params, radius: int = 1, max_steps: int = 8) -> AttractorReport:
    field = field_or_params if isinstance(field_or_params, DriftField) else drift_field(field_or_params)
    basins = basin_map(field)
    cycles = sorted(set(basins.values()), key=lambda c: (c.period, c.states))
    sizes: dict[Cycle, int] = {}
    for c in basins.values():
        sizes[c] = sizes.get(c, 0) + 1
    attractors = []
    for c in cycles:
        res = classify_stability(c, field, radius, max_steps, cycles=cycles)
        attractors.append({"cycle": c, "states": c.states, "kind": c.kind, "class": res.stability,
                           "escape_notes": res.escape_notes, "beyond_scope": c.beyond_scope,
                           "basin_size": sizes[c]})
    return AttractorReport(field.N, field.alpha, attractors, basins, zero_crossings(field))


@dataclass
class Excursion:
    """Monitored values from an entry time up to (not including) the next exit."""

    start: int
    values: np.ndarray
    exit_value: float | None = None

    def increments(self) -> np.ndarray:
        # the exit step belongs to the stopped process
        v = self.values if self.exit_value is None else np.append(self.values, self.exit_value)
        return np.diff(v)


@dataclass
class ExcursionSet:
    excursions: list[Excursion]

    def __len__(self):
        return len(self.excursions)

    def __iter__(self):
        return iter(self.excursions)


_COORD = {"S+": 0, "s+": 0, "S": 0, 0: 0, "A+": 1, "a+": 1, "A": 1, 1: 1}


def extract_excursions(path, monitored="S+", region=None) -> ExcursionSet:
    """Split a path into its visits to ``region``.

    Parameters
    ----------
    path : array of shape (n, 2)
        Successive macro states.
    monitored : {"S+", "A+"}
    region : callable ``(i, j) -> bool`` or boolean ``[i, j]`` grid
    """
    arr = np.asarray(path, dtype=np.int64).reshape(-1, 2)
    if monitored not in _COORD:
        raise ValueError(f"monitored must be 'S+' or 'A+', got {monitored!r}")
    col = arr[:, _COORD[monitored]].astype(float) if arr.size else np.empty(0)
    if region is None:
        raise ValueError("region is required")
    if callable(region):
        inside = np.array([bool(region(int(i), int(j))) for i, j in arr], dtype=bool)
    else:
        grid = np.asarray(region, dtype=bool)
        inside = grid[arr[:, 0], arr[:, 1]] if arr.size else np.zeros(0, dtype=bool)
    out = []
    n = len(arr)
    k = 0
    while k < n:
        if not inside[k]:
            k += 1
            continue
        entry = k
        while k < n and inside[k]:
            k += 1
        exit_value = col[k] if k < n else None
        out.append(Excursion(entry, col[entry:k].copy(), exit_value))
    return ExcursionSet(out)


@dataclass
class SubmartingaleReport:
    passed: bool
    pooled_mean: float
    stderr: float
    n_increments: int
    n_excursions: int
    epsilon: float
    conditional_means: dict[float, float]


def test_contingent_submartingale(excursions: ExcursionSet, epsilon: float = 0.0) -> SubmartingaleReport:
    """Empirical submartingale check on the pooled within-excursion increments.

    Passes when the pooled mean increment is at least ``-epsilon``.  Means
    conditioned on the excursion's starting value are reported alongside.
    """
    incs = [e.increments() for e in excursions]
    pooled = np.concatenate(incs) if incs else np.empty(0)
    if pooled.size == 0:
        return SubmartingaleReport(False, math.nan, math.nan, 0, len(excursions), epsilon, {})
    by_start: dict[float, list] = {}
    for e, d in zip(excursions, incs):
        if d.size:
            by_start.setdefault(float(e.values[0]), []).append(d)
    cond = {k: float(np.mean(np.concatenate(v))) for k, v in sorted(by_start.items())}
    mean = float(pooled.mean())
    se = float(pooled.std(ddof=1) / math.sqrt(pooled.size)) if pooled.size > 1 else math.nan
    return SubmartingaleReport(mean >= -epsilon, mean, se, int(pooled.size), len(excursions), epsilon, cond)


test_contingent_submartingale.__test__ = False  # keep pytest from collecting it


def round_half_away(x: float) -> int:
    """Nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _law_drift(law: StepDistribution, N: int) -> tuple[float, float]:
    f = (N + 1) / 2 * float(law.up_site - law.down_site)
    g = (N + 1) / (N - 1) * float(law.up_arc - law.down_arc)
    return f, g


def two_step_deviation(x: int, y: int, params: ModelParams,
                       step_law: Callable[[int, int], StepDistribution] | None = None):
    """Exact two-step mean of ``S+`` against its composed-drift approximation.

    ``exact`` averages ``S+`` over every two-step path of the chain; the
    estimate applies ``f`` once more at the nearest lattice point to the
    one-step mean.  Drifts are derived from ``step_law`` (default: the
    frozen-limit kernel), so a custom law gives a self-consistent pair.

    Returns
    -------
    (exact, ca_estimate, gap)
    """
    N, A = params.N, params.n_arcs
    x, y = check_state(x, y, N)
    if not (1 <= x <= N - 1 and 1 <= y <= A - 1):
        raise ValueError(f"({x}, {y}) is on the boundary; its neighbours leave the lattice")
    law = step_law or (lambda i, j: macro_step_distribution(i, j, params))

    exact = 0.0
    first = law(x, y)
    for (u, v), p in first.entries:
        for (s, _), q in law(u, v).entries:
            exact += float(p) * float(q) * s

    f0, g0 = _law_drift(first, N)
    xs = round_half_away(2 * f0 / (N + 1) + x)
    ys = round_half_away((N - 1) * g0 / (N + 1) + y)
    if not (0 <= xs <= N and 0 <= ys <= A):
        raise ValueError(f"shifted point ({xs}, {ys}) leaves the lattice")
    f1, _ = _law_drift(law(xs, ys), N)
    estimate = 2 * f1 / (N + 1) + 2 * f0 / (N + 1) + x
    return exact, estimate, exact - estimate


def discretization_deviation(x: int, y: int, params: ModelParams | None = None,
                             field: DriftField | None = None) -> tuple[float, float]:
    """``f`` at the rounded drift-shifted point versus at the sign-shifted point.

    Returns ``(f([x + f], [y + g]), f(x + sgn f, y + sgn g))`` with rounding
    half away from zero.
    """
    if field is None:
        if params is None:
            raise ValueError("need params or a drift field")
        field = drift_field(params)
    x, y = check_state(x, y, field.N)
    f0, g0 = field.f[x, y], field.g[x, y]
    rounded = (round_half_away(x + f0), round_half_away(y + g0))
    signed = (x + _sign(f0, field.zero_tol), y + _sign(g0, field.zero_tol))
    for p in (rounded, signed):
        if not field.contains(p):
            raise ValueError(f"shifted point {p} leaves the lattice")
    return float(field.f[rounded]), float(field.f[signed])
