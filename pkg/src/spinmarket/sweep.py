"""Parameter scans over ``(N, alpha)`` and the diagnostics computed on them."""

from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy
import scipy.optimize

from ._io import write_csv, write_json
from .core import MacroState, ModelParams, n_arcs
from .kernel import simulate_macro_chain
from .longmem import DegenerateStatisticError, rs_index
from .spectral import (
    MeasureGrid,
    assemble_matrix,
    index_state,
    mixing_half_life,
    n_states,
    spectrum,
    stationary_measure,
    write_measure_csv,
    write_spectrum_csv,
)

__all__ = [
    "ConfigError",
    "SweepConfig",
    "SweepRecord",
    "SweepResult",
    "compute_record",
    "classify_regime",
    "detect_alpha_star",
    "modality_analysis",
    "correlation_check",
    "gap_power_law_fit",
    "gaussian_limit_fit",
    "gaussian_limit_form",
    "sweep",
]

TRAP_THRESHOLD = 1 - 1e-6


class ConfigError(ValueError):
    """Invalid sweep configuration."""


@dataclass
class SweepConfig:
    N_list: list[int] = field(default_factory=list)
    alpha_list: list[float] = field(default_factory=list)
    seed: int = 0
    steps: int = 0
    taus: list[int] = field(default_factory=list)
    thresholds: dict = field(default_factory=lambda: {"trap": TRAP_THRESHOLD})

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - {"N_list", "alpha_list", "seed", "steps", "taus", "thresholds"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(
                N_list=[int(n) for n in data.get("N_list", [])],
                alpha_list=[float(a) for a in data.get("alpha_list", [])],
                seed=int(data.get("seed", 0)),
                steps=int(data.get("steps", 0)),
                taus=[int(t) for t in data.get("taus", [])],
                thresholds={"trap": TRAP_THRESHOLD, **dict(data.get("thresholds", {}))},
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if any(n < 2 for n in cfg.N_list):
            raise ConfigError("every N must be >= 2")
        if any(not math.isfinite(a) or a < 0 for a in cfg.alpha_list):
            raise ConfigError("every alpha must be finite and >= 0")
        if cfg.steps < 0 or any(t < 2 for t in cfg.taus):
            raise ConfigError("steps must be >= 0 and taus >= 2")
        if cfg.taus and cfg.steps < 2 * max(cfg.taus):
            raise ConfigError("steps must be at least twice the largest tau")
        if not 0 <= float(cfg.thresholds["trap"]) <= 1:
            raise ConfigError("trap threshold must lie in [0, 1]")
        return cfg

    @classmethod
    def load(cls, path) -> "SweepConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class SweepRecord:
    N: int
    alpha: float
    gap: float = math.nan
    lambda2: float = math.nan
    trap_mass: float = math.nan
    mode_count: int = 0
    mode_locations: list = field(default_factory=list)
    correlation_gap: float = math.nan
    half_life: float = math.nan
    argmin_state: tuple | None = None
    multiplicity_warning: bool = False
    rs: dict = field(default_factory=dict)
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def classify_regime(record: SweepRecord, trap_threshold: float = TRAP_THRESHOLD) -> str:
    """``"subcritical"`` when the trap state holds at least ``trap_threshold`` mass."""
    return "subcritical" if record.trap_mass >= trap_threshold else "supercritical"


def _trap_mass(measure: MeasureGrid) -> float:
    N = measure.N
    return measure.at(N, n_arcs(N))


def compute_record(N: int, alpha: float, seed=None, steps: int = 0, taus: Sequence[int] = (),
                   full: bool = True) -> tuple[SweepRecord, MeasureGrid | None, np.ndarray | None]:
    """Spectral and stationary diagnostics for one grid point.

    Numerical failures are caught and stored in ``record.error``.
    """
    rec = SweepRecord(N=int(N), alpha=float(alpha))
    try:
        params = ModelParams(int(N), alpha)
        M = assemble_matrix(params)
        mu = stationary_measure(M, N=params.N, check_multiplicity=False)
        rec.trap_mass = _trap_mass(mu)
        moduli = None
        if full:
            moduli = spectrum(M)
            rec.lambda2 = float(moduli[1]) if moduli.size > 1 else 0.0
            rec.gap = max(0.0, 1.0 - rec.lambda2)
            rec.multiplicity_warning = bool(rec.gap < 1e-12)
            rec.half_life = mixing_half_life(rec.lambda2) if rec.lambda2 > 0 else 0
            modes = modality_analysis(mu)
            rec.mode_count = modes["mode_count"]
            rec.mode_locations = [tuple(s) for s in modes["mode_locations"]]
            rec.correlation_gap = correlation_check(mu)
            rec.argmin_state = tuple(index_state(int(np.argmin(mu.values)), params.N))
        if steps and taus:
            rng = np.random.default_rng(seed)
            start = (int(rng.integers(0, N + 1)), int(rng.integers(0, n_arcs(N) + 1)))
            path = simulate_macro_chain(start, params, steps, rng)
            for name, col in (("S", 0), ("A", 1)):
                for t in taus:
                    try:
                        rec.rs[f"rs_{name}_tau{t}"] = rs_index(path[:, col], t)
                    except DegenerateStatisticError:
                        rec.rs[f"rs_{name}_tau{t}"] = math.nan
        return rec, mu, moduli
    except Exception as exc:  # recorded, the sweep continues
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec, None, None


def detect_alpha_star(N: int, alpha_grid: Sequence[float], trap_threshold: float = TRAP_THRESHOLD,
                      refine: bool = False) -> dict:
    """Bracket the coupling at which the trap stops holding the stationary mass.

    Returns a dict with ``interval`` (``None`` when no sign change is seen on
    the grid), per-point ``regimes``, monotonicity ``violations`` and a
    comparison with ``2N - 2``.
    """
    grid = [float(a) for a in alpha_grid]
    if grid != sorted(grid):
        raise ValueError("alpha_grid must be sorted")
    regimes = {}
    for a in grid:
        rec, _, _ = compute_record(N, a, full=False)
        if rec.error:
            raise RuntimeError(f"alpha={a}: {rec.error}")
        regimes[a] = classify_regime(rec, trap_threshold)
    interval = None
    for lo, hi in zip(grid, grid[1:]):
        if regimes[lo] == "subcritical" and regimes[hi] == "supercritical":
            interval = (lo, hi)
            break
    if interval and refine:
        lo, hi = math.ceil(interval[0]), math.floor(interval[1])
        lo, hi = (interval[0], interval[1]) if lo >= hi else (lo, hi)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            rec, _, _ = compute_record(N, mid, full=False)
            if classify_regime(rec, trap_threshold) == "subcritical":
                lo = mid
            else:
                hi = mid
        interval = (lo, hi)
    seen_super = False
    violations = []
    for a in grid:
        if regimes[a] == "supercritical":
            seen_super = True
        elif seen_super:
            violations.append(a)
    conj = 2 * N - 2
    agrees = interval is not None and interval[0] <= conj <= interval[1]
    return {"N": N, "interval": interval, "found": interval is not None, "regimes": regimes,
            "violations": violations, "conjecture": conj, "agrees": agrees}


def _prominences(grid: np.ndarray) -> dict[tuple[int, int], float]:
    """Topographic prominence of every cell that tops its own component.

    Cells are added from high to low; when two components meet, the one with
    the lower summit ends there and its prominence is summit minus meeting level.
    """
    n_j = grid.shape[1]
    parent: dict = {}
    summit: dict = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    prom = {}
    cell = None
    for flat in np.argsort(-grid, axis=None, kind="stable"):
        cell = divmod(int(flat), n_j)
        level = grid[cell]
        parent[cell] = cell
        summit[cell] = cell
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (cell[0] + di, cell[1] + dj)
            if nb not in parent:
                continue
            a, b = find(cell), find(nb)
            if a == b:
                continue
            sa, sb = summit[a], summit[b]
            hi, lo = (sa, sb) if (grid[sa], sa) > (grid[sb], sb) else (sb, sa)
            prom[lo] = grid[lo] - level
            parent[b] = a
            summit[a] = hi
    if cell is not None:
        top = summit[find(cell)]
        prom[top] = grid[top]
    return prom


def modality_analysis(measure: MeasureGrid, atol: float = 1e-12, min_prominence: float = 0.0) -> dict:
    """Strict local maxima on the lattice (4-neighbourhood), plateaus merged.

    Values below ``atol`` are treated as zero so solver noise on an
    otherwise empty region does not create spurious modes.  With
    ``min_prominence > 0`` maxima whose topographic prominence is below that
    fraction of the largest value are dropped; the default keeps every strict
    maximum.
    """
    grid = np.where(measure.grid < atol, 0.0, measure.grid)
    n_i, n_j = grid.shape
    seen = np.zeros_like(grid, dtype=bool)
    modes = []
    for i0 in range(n_i):
        for j0 in range(n_j):
            if seen[i0, j0]:
                continue
            v = grid[i0, j0]
            comp, stack = [], [(i0, j0)]
            seen[i0, j0] = True
            is_max = True
            while stack:
                i, j = stack.pop()
                comp.append((i, j))
                for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                    if not (0 <= a < n_i and 0 <= b < n_j):
                        continue
                    w = grid[a, b]
                    if w == v:
                        if not seen[a, b]:
                            seen[a, b] = True
                            stack.append((a, b))
                    elif w > v:
                        is_max = False
            if is_max and v > 0:
                modes.append((v, sorted(comp)))
    prom = _prominences(grid)
    peak = grid.max() if grid.size else 0.0
    scored = [(v, comp, max(prom.get(c, 0.0) for c in comp)) for v, comp in modes]
    if min_prominence > 0:
        scored = [m for m in scored if m[2] >= min_prominence * peak]
    scored.sort(key=lambda m: (-m[0], m[1]))
    return {
        "mode_count": len(scored),
        "mode_locations": [MacroState(*m[1][0]) for m in scored],
        "plateaus": [[MacroState(*c) for c in m[1]] for m in scored],
        "masses": [float(m[0] * len(m[1])) for m in scored],
        "prominences": [float(m[2] / peak) if peak else 0.0 for m in scored],
    }


def correlation_check(measure: MeasureGrid) -> float:
    """``E[S+ A+] - E[S+] E[A+]`` under ``measure``."""
    g = measure.grid
    i = np.arange(g.shape[0])[:, None]
    j = np.arange(g.shape[1])[None, :]
    total = g.sum()
    ei = float((g * i).sum() / total)
    ej = float((g * j).sum() / total)
    return float((g * (i - ei) * (j - ej)).sum() / total)


def _loglog_slope(alphas, gaps):
    x = np.log(np.asarray(alphas, dtype=float))
    y = np.log(np.asarray(gaps, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


def gap_power_law_fit(alphas: Sequence[float], gaps: Sequence[float], alpha_break: float) -> dict:
    """Log-log slopes of the spectral gap below and above ``alpha_break``."""
    a = np.asarray(alphas, dtype=float)
    g = np.asarray(gaps, dtype=float)
    if a.shape != g.shape:
        raise ValueError("alphas and gaps differ in length")
    sub = (a < alpha_break) & (a > 0) & (g > 0)
    sup = (a >= alpha_break) & (g > 0)
    if sub.sum() < 3 or sup.sum() < 3:
        raise ValueError("need at least three positive samples on each side of the break")
    c_sub, r_sub = _loglog_slope(a[sub], g[sub])
    c_sup, r_sup = _loglog_slope(a[sup], g[sup])
    order = np.argsort(a)
    violations = [(float(a[order[k]]), float(a[order[k + 1]]))
                  for k in range(len(a) - 1) if g[order[k + 1]] < g[order[k]]]
    return {"C_sub": c_sub, "C_super": c_sup, "residual_sub": r_sub, "residual_super": r_sup,
            "alpha_break": float(alpha_break), "ordering_holds": c_sub > c_sup,
            "monotone_violations": violations}


def gaussian_limit_form(N: int, sigma: float) -> np.ndarray:
    """The conjectured large-coupling profile on the ``[i, j]`` lattice."""
    i = np.arange(N + 1)[:, None]
    j = np.arange(n_arcs(N) + 1)[None, :]
    q = 4 * (2 * i - N) ** 2 + (4 * j - N * N + N) ** 2
    return np.exp(-q / (32 * sigma ** 2)) / (2 * math.pi * sigma ** 2)


def gaussian_limit_fit(measure: MeasureGrid, N: int | None = None) -> dict:
    """Least-squares ``sigma`` for :func:`gaussian_limit_form` and the sup residual."""
    N = measure.N if N is None else N
    target = measure.grid

    def loss(log_s):
        return float(np.sum((gaussian_limit_form(N, math.exp(log_s)) - target) ** 2))

    grid = np.linspace(math.log(0.05), math.log(10 * N * N), 200)
    k = int(np.argmin([loss(x) for x in grid]))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = scipy.optimize.minimize_scalar(loss, bounds=(lo, hi), method="bounded",
                                         options={"xatol": 1e-12})
    log_s = res.x if res.fun <= loss(grid[k]) else grid[k]
    sigma = math.exp(log_s)
    resid = float(np.max(np.abs(gaussian_limit_form(N, sigma) - target)))
    return {"sigma": sigma, "max_abs_residual": resid}


@dataclass
class SweepResult:
    records: list[SweepRecord]
    manifest: dict

    @property
    def failures(self) -> list[SweepRecord]:
        return [r for r in self.records if not r.ok]


def _alpha_tag(alpha: float) -> str:
    return str(int(alpha)) if float(alpha).is_integer() else repr(float(alpha)).replace(".", "p")


def _point(args):
    N, alpha, seed_seq, steps, taus = args
    return compute_record(N, alpha, seed=seed_seq, steps=steps, taus=taus)


RECORD_COLUMNS = ["N", "alpha", "regime", "gap", "lambda2", "trap_mass", "mode_count",
                  "mode_locations", "correlation_gap", "half_life", "argmin_state",
                  "multiplicity_warning", "error"]


def sweep(config: SweepConfig, out_dir=None, threads: int = 1) -> SweepResult:
    """Evaluate every ``(N, alpha)`` pair and optionally persist the outputs.

    Grid points run in a process pool of at most ``threads`` workers and are
    merged back in grid order.  Each point draws randomness from its own
    child of ``SeedSequence(config.seed)``.
    """
    t0 = time.perf_counter()
    points = [(N, a) for N in config.N_list for a in config.alpha_list]
    seeds = np.random.SeedSequence(config.seed).spawn(len(points)) if points else []
    jobs = [(N, a, s, config.steps, tuple(config.taus)) for (N, a), s in zip(points, seeds)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_point, jobs))
    else:
        results = [_point(j) for j in jobs]
    records = [r[0] for r in results]
    trap = float(config.thresholds.get("trap", TRAP_THRESHOLD))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rs_cols = sorted({k for r in records for k in r.rs})
        rows = []
        for r in records:
            rows.append([r.N, r.alpha, classify_regime(r, trap) if r.ok else "",
                         r.gap, r.lambda2, r.trap_mass, r.mode_count,
                         ";".join(f"{i}:{j}" for i, j in r.mode_locations), r.correlation_gap,
                         r.half_life, "" if r.argmin_state is None else "{}:{}".format(*r.argmin_state),
                         r.multiplicity_warning, r.error] + [r.rs.get(c, math.nan) for c in rs_cols])
        write_csv(out / "records.csv", RECORD_COLUMNS + rs_cols, rows)
        for (rec, mu, _), (N, a) in zip(results, points):
            if mu is None:
                continue
            tag = f"N{N}_a{_alpha_tag(a)}"
            write_measure_csv(mu, out / f"measure_{tag}.csv")
            write_spectrum_csv(assemble_matrix(ModelParams(N, a)), out / f"spectrum_{tag}.csv")

    manifest = {
        "config": config.to_dict(),
        "config_sha256": config.digest(),
        "seed": config.seed,
        "n_points": len(points),
        "n_failures": sum(not r.ok for r in records),
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "spinmarket": _version()},
        "wall_time_s": time.perf_counter() - t0,
        "threads": threads,
    }
    if out_dir is not None:
        write_json(Path(out_dir) / "manifest.json", manifest)
    return SweepResult(records, manifest)


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        return "unknown"
