"""Grid-search calibration against an observed daily case series."""
from __future__ import annotations

import csv
import datetime as dt
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import yaml

from . import engine
from .config import ScenarioConfig
from .core_types import ConfigurationError, ParseError, ValidationError
from .rng import stream_key

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObservedSeries:
    dates: tuple[dt.date, ...]
    counts: tuple[float, ...]
    source: Optional[str] = None

    def __post_init__(self):
        if len(self.dates) != len(self.counts):
            raise ValidationError("dates and counts differ in length")
        if any(c < 0 for c in self.counts):
            raise ValidationError("observed counts must be >= 0")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise ValidationError(f"observed dates are not contiguous at {a} -> {b}")

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float)

    @property
    def start(self) -> dt.date:
        return self.dates[0]

    @classmethod
    def from_array(cls, start: dt.date, counts) -> "ObservedSeries":
        counts = [float(c) for c in counts]
        return cls(tuple(start + dt.timedelta(days=i) for i in range(len(counts))), tuple(counts))


def load_observed(path) -> ObservedSeries:
    """Read a ``date,count`` CSV (header row required)."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    dates, counts = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["date", "count"]:
            raise ParseError(f"{path}: expected header 'date,count'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                dates.append(dt.date.fromisoformat(row[0].strip()))
                counts.append(float(row[1]))
            except (ValueError, IndexError):
                raise ParseError(f"{path}:{lineno}: expected YYYY-MM-DD,count") from None
    if not dates:
        raise ParseError(f"{path}: no data rows")
    try:
        return ObservedSeries(tuple(dates), tuple(counts), str(path))
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_observed(series: ObservedSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "count"])
        for d, c in zip(series.dates, series.counts):
            w.writerow([d.isoformat(), f"{c:g}"])


SeriesLike = Union[ObservedSeries, Sequence[float], np.ndarray]


def _values(series: SeriesLike) -> np.ndarray:
    return series.values if isinstance(series, ObservedSeries) else np.asarray(series, dtype=float)


def within_tolerance_days(sim: SeriesLike, obs: SeriesLike, tol: float) -> tuple[int, float]:
    """Days where ``|sim - obs| <= tol * max(obs, 1)``, as a count and a fraction."""
    s, o = _values(sim), _values(obs)
    if len(s) != len(o):
        raise ValidationError(f"series lengths differ ({len(s)} vs {len(o)})")
    if tol <= 0:
        raise ValidationError("tolerance must be positive")
    if len(s) == 0:
        return 0, 1.0
    ok = np.abs(s - o) <= tol * np.maximum(o, 1.0)
    return int(ok.sum()), float(ok.mean())


def rmse(sim: SeriesLike, obs: SeriesLike) -> float:
    s, o = _values(sim), _values(obs)
    if len(s) != len(o):
        raise ValidationError(f"series lengths differ ({len(s)} vs {len(o)})")
    return float(np.sqrt(np.mean((s - o) ** 2))) if len(s) else 0.0


# --------------------------------------------------------------------------
# grid search

@dataclass(frozen=True)
class ParamGrid:
    """Named axes of candidate values; axis names are config override paths."""

    axes: tuple[tuple[str, tuple], ...]

    def __post_init__(self):
        axes = tuple((str(k), tuple(v)) for k, v in
                     (self.axes.items() if isinstance(self.axes, dict) else self.axes))
        object.__setattr__(self, "axes", axes)
        if not axes:
            raise ValidationError("grid needs at least one axis")
        for name, values in axes:
            if not values:
                raise ValidationError(f"grid axis {name!r} is empty")
        if len({n for n, _ in axes}) != len(axes):
            raise ValidationError("duplicate grid axis")

    @property
    def size(self) -> int:
        return math.prod(len(v) for _, v in self.axes)

    def combinations(self) -> list[dict]:
        names = [n for n, _ in self.axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in self.axes))]


def load_grid(path) -> ParamGrid:
    """YAML mapping ``axes: {path: [values, ...]}``."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"{path}: no such grid file")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(data, dict) or set(data) != {"axes"} or not isinstance(data["axes"], dict):
        raise ConfigurationError(f"{path}: expected a single 'axes' mapping")
    try:
        return ParamGrid(data["axes"])
    except ValidationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def combination_key(params: dict) -> str:
    return json.dumps(sorted(params.items()), default=str)


def apply_params(base: ScenarioConfig, params: dict) -> ScenarioConfig:
    cfg = base
    for path, value in params.items():
        cfg = cfg.replace_path(path, value)
    return cfg


@dataclass(frozen=True)
class GridResult:
    params: dict
    days_within: int
    fraction: float
    rmse: float
    mean_series: np.ndarray = field(repr=False, compare=False)

    @property
    def key(self) -> str:
        return combination_key(self.params)


def replicate_seeds(seed: int, replicates: int) -> tuple[int, ...]:
    """Common replicate seeds shared by every grid point."""
    return tuple(stream_key(seed, "calibration", i) % (2 ** 31) for i in range(replicates))


def _score(args) -> GridResult:
    base, params, obs, seeds, tol, metric = args
    cfg = apply_params(base, params).with_seeds(seeds)
    out = engine.run(cfg)
    series = out.city(metric)
    count, frac = within_tolerance_days(series, obs, tol)
    return GridResult(params, count, frac, rmse(series, obs), series)


def aligned_config(base: ScenarioConfig, obs: ObservedSeries) -> ScenarioConfig:
    """``base`` with its simulated day range set to the observed dates."""
    return replace(base, simulation=replace(base.simulation, start=obs.start, days=len(obs)))


def rank(results: Sequence[GridResult]) -> list[GridResult]:
    """More days within tolerance first; then lower RMSE; then combination key."""
    return sorted(results, key=lambda r: (-r.days_within, r.rmse, r.key))


def grid_search(grid: ParamGrid, base: ScenarioConfig, obs: ObservedSeries, replicates: int = 10,
                seed: int = 0, tol: float = 0.1, metric: str = "positives", workers: int = 1) -> list[GridResult]:
    """Score every grid point on the mean of ``replicates`` runs; best first."""
    if replicates < 1:
        raise ValidationError("replicates must be >= 1")
    base = aligned_config(base, obs)
    seeds = replicate_seeds(seed, replicates)
    combos = grid.combinations()
    log.info("grid search: %d combinations x %d replicates", len(combos), replicates)
    jobs = [(base, p, obs.values, seeds, tol, metric) for p in combos]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_score, jobs))
    else:
        results = [_score(j) for j in jobs]
    return rank(results)


def write_results(results: Sequence[GridResult], path) -> None:
    names = sorted({k for r in results for k in r.params})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank"] + names + ["days_within", "fraction_within", "rmse"])
        for i, r in enumerate(results, start=1):
            w.writerow([i] + [r.params.get(n, "") for n in names]
                       + [r.days_within, f"{r.fraction:.6f}", f"{r.rmse:.6f}"])
