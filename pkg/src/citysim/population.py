"""Synthetic population: families, ages, workplaces, schools and facilities.

The generator works on flat numpy arrays (one entry per agent or per
workplace). ``Population.agents()`` and ``CityModel.workplace()`` materialise
the frozen record types from :mod:`citysim.core_types` when needed.
"""
from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from . import rng as rngmod
from .core_types import (
    Agent, ConfigurationError, FacilityKind, HealthcareFacility, Occupancy,
    ParseError, Payment, Ward, Workplace, age_group, read_jsonl, write_jsonl,
)

DATA_DIR_ENV = "CITYSIM_DATA_DIR"
EDUCATION = "Education"
HEALTHCARE = "Healthcare"
SCHOOL_SUBSECTOR = 0
COLLEGE_SUBSECTOR = 1

# Kolkata-like 10-year age bands 0-9 ... 90-99.
DEFAULT_AGE_BANDS = (0.10, 0.15, 0.18, 0.16, 0.14, 0.11, 0.08, 0.05, 0.025, 0.005)
DEFAULT_COMORBIDITY = (0.01, 0.01, 0.03, 0.06, 0.12, 0.20, 0.30, 0.40, 0.45, 0.50, 0.50)
DEFAULT_ESSENTIAL = {
    "Healthcare": 1.0, "Utilities": 1.0, "Agriculture": 1.0, "Commerce": 0.5,
    "Manufacturing": 0.1, "Finance": 0.1, "Social": 0.2,
}
VISIT_SECTORS = ("Commerce", "Hotel", "Social")


# --------------------------------------------------------------------------
# input tables

@dataclass(frozen=True)
class WardRow:
    ward_id: int
    population: int
    density: float

    @property
    def area(self) -> float:
        return self.population / self.density if self.density > 0 else 0.0


@dataclass(frozen=True)
class WardTable:
    rows: tuple[WardRow, ...]
    source: Optional[str] = None

    def __post_init__(self):
        ids = [r.ward_id for r in self.rows]
        if ids != list(range(1, len(ids) + 1)):
            raise ParseError("ward ids must be unique and contiguous from 1")
        if any(r.population < 0 for r in self.rows):
            raise ParseError("ward populations must be >= 0")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def populations(self) -> np.ndarray:
        return np.array([r.population for r in self.rows], dtype=np.int64)

    @property
    def densities(self) -> np.ndarray:
        return np.array([r.density for r in self.rows], dtype=float)

    @property
    def total(self) -> int:
        return int(sum(r.population for r in self.rows))


@dataclass(frozen=True)
class SectorRow:
    name: str
    workers: int
    centers: tuple[int, ...]
    hours: float
    gap_m: float

    @property
    def center_count(self) -> int:
        return int(sum(self.centers))


@dataclass(frozen=True)
class SectorTable:
    rows: tuple[SectorRow, ...]
    source: Optional[str] = None

    def __post_init__(self):
        for r in self.rows:
            if r.workers < 0 or any(c < 0 for c in r.centers):
                raise ParseError(f"sector {r.name}: counts must be >= 0")
            if r.gap_m <= 0:
                raise ParseError(f"sector {r.name}: physical gap must be > 0")
        names = [r.name for r in self.rows]
        if len(set(names)) != len(names):
            raise ParseError("duplicate sector names")

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rows]

    def get(self, name: str) -> Optional[SectorRow]:
        for r in self.rows:
            if r.name == name:
                return r
        return None

    def to_record(self) -> list[dict]:
        return [dataclasses.asdict(r) | {"centers": list(r.centers)} for r in self.rows]

    @classmethod
    def from_record(cls, recs: list[dict]) -> "SectorTable":
        return cls(tuple(SectorRow(r["name"], r["workers"], tuple(r["centers"]), r["hours"], r["gap_m"])
                         for r in recs))


def _read_csv(path, required: Sequence[str]) -> list[tuple[int, dict]]:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = [(i, {k.strip(): (v or "").strip() for k, v in row.items() if k})
                for i, row in enumerate(reader, start=2)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return rows


def _num(path, lineno: int, col: str, text: str, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise ParseError(f"{path}: row {lineno}: column {col!r} is not numeric: {text!r}") from None
    if isinstance(value, float) and not math.isfinite(value):
        raise ParseError(f"{path}: row {lineno}: column {col!r} is not finite")
    return value


def load_ward_table(path) -> WardTable:
    """Read a ``ward_id,population,density`` CSV."""
    rows = _read_csv(path, ("ward_id", "population", "density"))
    seen: dict[int, int] = {}
    out = []
    for lineno, row in rows:
        wid = _num(path, lineno, "ward_id", row["ward_id"], int)
        if wid in seen:
            raise ParseError(f"{path}: row {lineno}: duplicate ward id {wid} (first at row {seen[wid]})")
        seen[wid] = lineno
        pop = _num(path, lineno, "population", row["population"], int)
        dens = _num(path, lineno, "density", row["density"])
        if pop < 0 or dens < 0:
            raise ParseError(f"{path}: row {lineno}: negative value")
        out.append(WardRow(wid, pop, dens))
    out.sort(key=lambda r: r.ward_id)
    if [r.ward_id for r in out] != list(range(1, len(out) + 1)):
        raise ParseError(f"{path}: ward ids must be contiguous from 1")
    return WardTable(tuple(out), str(path))


def load_sector_table(path) -> SectorTable:
    """Read a ``sector,workers,centers,hours,gap_m`` CSV.

    ``centers`` may hold a ``;``-separated list (one count per sub-sector).
    """
    rows = _read_csv(path, ("sector", "workers", "centers", "hours", "gap_m"))
    out = []
    for lineno, row in rows:
        centers = tuple(_num(path, lineno, "centers", c, int)
                        for c in row["centers"].strip("[]").replace(",", ";").split(";") if c.strip())
        out.append(SectorRow(
            row["sector"], _num(path, lineno, "workers", row["workers"], int), centers,
            _num(path, lineno, "hours", row["hours"]), _num(path, lineno, "gap_m", row["gap_m"]),
        ))
    try:
        return SectorTable(tuple(out), str(path))
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


def data_path(name: str) -> Path:
    """Bundled data file, overridable through ``$CITYSIM_DATA_DIR``."""
    override = os.environ.get(DATA_DIR_ENV)
    if override and (Path(override) / name).exists():
        return Path(override) / name
    return Path(str(resources.files("citysim") / "data" / name))


def kolkata_wards() -> WardTable:
    return load_ward_table(data_path("kolkata_wards.csv"))


def kolkata_sectors() -> SectorTable:
    return load_sector_table(data_path("kolkata_sectors.csv"))


def uniformize(wards: WardTable) -> WardTable:
    """Spread the total population evenly over the wards (simplified model).

    The first ``total % n`` wards receive one extra person; every ward gets an
    equal share of the total area, so densities are equal up to that rounding.
    """
    n = len(wards)
    pops = wards.populations
    total = int(pops.sum())
    areas = [r.area for r in wards.rows]
    # an empty ward carries no area information, so only populated ones are compared
    known = [a for r, a in zip(wards.rows, areas) if r.population > 0] or [0.0]
    already = (pops.max() - pops.min() <= 1 and np.all(pops[:-1] >= pops[1:])
               and max(known) - min(known) <= 1e-9 * max(max(known), 1.0))
    if n == 1 or already:
        return wards
    area = math.fsum(areas) / n
    base, extra = divmod(total, n)
    rows = []
    for i, r in enumerate(wards.rows):
        p = base + (1 if i < extra else 0)
        rows.append(WardRow(r.ward_id, p, p / area if area > 0 else 0.0))
    return WardTable(tuple(rows), wards.source)


# --------------------------------------------------------------------------
# families

@dataclass(frozen=True)
class FamilySizes:
    """Family-size distribution: a constant size or a truncated Poisson."""

    mean: float
    kind: str = "poisson"
    max_size: int = 15

    def __post_init__(self):
        if self.mean <= 0:
            raise ConfigurationError("family size mean must be positive")
        if self.kind not in ("poisson", "constant"):
            raise ConfigurationError(f"unknown family size kind {self.kind!r}")

    @classmethod
    def constant(cls, size: int) -> "FamilySizes":
        return cls(float(size), "constant", int(size))

    def _support(self):
        k = np.arange(1, self.max_size + 1)
        return k

    def _pmf(self, lam: float) -> np.ndarray:
        p = stats.poisson.pmf(self._support(), lam)
        return p / p.sum()

    def _rate(self) -> float:
        # Poisson rate whose zero- and max-truncated mean equals ``mean``.
        k = self._support()
        if self.mean >= self.max_size:
            raise ConfigurationError("family size mean must be below max_size")
        return optimize.brentq(lambda lam: float(k @ self._pmf(lam)) - self.mean, 1e-6, 10 * self.max_size)

    def probabilities(self) -> np.ndarray:
        if self.kind == "constant":
            p = np.zeros(self.max_size)
            p[int(self.mean) - 1] = 1.0
            return p
        return self._pmf(self._rate())

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, int(self.mean), dtype=np.int64)
        return gen.choice(self._support(), size=n, p=self.probabilities())


@dataclass(frozen=True)
class FamilyPartition:
    sizes: np.ndarray         # members per family
    family_of: np.ndarray     # family index per agent
    home_ward: np.ndarray     # ward index (0-based) per family

    @property
    def count(self) -> int:
        return len(self.sizes)


def _draw_sizes(n: int, dist: FamilySizes, gen: np.random.Generator) -> np.ndarray:
    out = []
    remaining = n
    while remaining > 0:
        chunk = dist.sample(gen, max(16, int(remaining / dist.mean * 1.2) + 1))
        csum = np.cumsum(chunk)
        cut = int(np.searchsorted(csum, remaining))
        if cut < len(chunk):
            take = chunk[:cut + 1].copy()
            take[-1] = remaining - (csum[cut - 1] if cut > 0 else 0)
            out.append(take)
            break
        out.append(chunk)
        remaining -= int(csum[-1])
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def assign_families(agents, dist: FamilySizes, seed: int,
                    ward_weights: Optional[Sequence[float]] = None) -> FamilyPartition:
    """Partition agents (an id array or a count) into consecutive families.

    Sizes are drawn from ``dist`` until the population is exhausted; the last
    family takes the remainder. Each family gets one home ward, drawn from
    ``ward_weights`` (ward 0 when omitted).
    """
    n = int(agents) if np.isscalar(agents) else len(agents)
    if n <= 0:
        raise ConfigurationError("cannot form families from an empty population")
    gen = rngmod.generator(seed, "families")
    sizes = _draw_sizes(n, dist, gen)
    family_of = np.repeat(np.arange(len(sizes)), sizes)
    if ward_weights is None:
        home = np.zeros(len(sizes), dtype=np.int64)
    else:
        w = np.asarray(ward_weights, dtype=float)
        home = gen.choice(len(w), size=len(sizes), p=w / w.sum())
    return FamilyPartition(sizes.astype(np.int64), family_of.astype(np.int64), home.astype(np.int64))


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class PopulationConfig:
    scale: float = 1.0
    uniform_wards: bool = False
    family_mean: float = 4.5
    family_max: int = 15
    age_bands: tuple[float, ...] = DEFAULT_AGE_BANDS
    comorbidity_by_age_group: tuple[float, ...] = DEFAULT_COMORBIDITY
    citizen_fraction: float = 0.97
    student_min_age: int = 5
    college_age: int = 18
    student_max_age: int = 22
    worker_min_age: int = 20
    worker_max_age: int = 59
    education_staff_fraction: float = 0.05
    healthcare_hours: float = 12.0
    beds: tuple[int, int, int] = (100, 50, 25)
    icu_fraction: float = 0.1
    ventilator_fraction: float = 0.05
    paid_fraction: float = 0.5
    visiting_places: int = 3
    local_visit_fraction: float = 0.7
    transport_baseline: float = 0.17
    essential_fraction: dict = field(default_factory=lambda: dict(DEFAULT_ESSENTIAL))

    def __post_init__(self):
        if not 0 < self.scale <= 1:
            raise ConfigurationError(f"scale must lie in (0, 1], got {self.scale}")
        if len(self.age_bands) != 10 or min(self.age_bands) < 0 or sum(self.age_bands) <= 0:
            raise ConfigurationError("age_bands needs 10 non-negative weights")
        if len(self.comorbidity_by_age_group) != 11:
            raise ConfigurationError("comorbidity_by_age_group needs 11 probabilities")
        object.__setattr__(self, "age_bands", tuple(float(v) for v in self.age_bands))
        object.__setattr__(self, "comorbidity_by_age_group",
                           tuple(float(v) for v in self.comorbidity_by_age_group))
        object.__setattr__(self, "beds", tuple(int(v) for v in self.beds))


# --------------------------------------------------------------------------
# city model and population containers

def _scaled(count: int, scale: float) -> int:
    return int(round(count * scale))


@dataclass
class CityModel:
    ward_table: WardTable
    sectors: SectorTable
    wp_sector: np.ndarray
    wp_sub: np.ndarray
    wp_ward: np.ndarray
    wp_lat: np.ndarray
    wp_lon: np.ndarray
    wp_essential: np.ndarray
    wp_hours: np.ndarray
    wp_gap: np.ndarray
    wp_income: np.ndarray
    fac_workplace: np.ndarray
    fac_kind: np.ndarray
    fac_beds: np.ndarray
    fac_icu: np.ndarray
    fac_vent: np.ndarray
    fac_payment: np.ndarray

    @property
    def ward_count(self) -> int:
        return len(self.ward_table)

    @property
    def workplace_count(self) -> int:
        return len(self.wp_sector)

    def sector_index(self, name: str) -> int:
        return self.sectors.names.index(name)

    def ward_density(self) -> np.ndarray:
        return self.ward_table.densities

    def equal(self, other: "CityModel") -> bool:
        if self.ward_table.rows != other.ward_table.rows or self.sectors.rows != other.sectors.rows:
            return False
        for f in dataclasses.fields(self):
            a = getattr(self, f.name)
            if isinstance(a, np.ndarray) and not np.array_equal(a, getattr(other, f.name)):
                return False
        return True


@dataclass
class Population:
    age: np.ndarray
    family_id: np.ndarray
    ward: np.ndarray                 # 0-based ward index
    is_citizen: np.ndarray
    comorbidity: np.ndarray
    income: np.ndarray
    occupancy: np.ndarray
    workplace: np.ndarray            # workplace index or -1
    uses_transport: np.ndarray
    visiting: np.ndarray             # (n, V) workplace indices, -1 padded
    city: CityModel
    seed: int = 0
    scale: float = 1.0

    def __len__(self) -> int:
        return len(self.age)

    @property
    def age_group(self) -> np.ndarray:
        return np.minimum(self.age // 10, 10)

    @property
    def family_count(self) -> int:
        return int(self.family_id.max()) + 1 if len(self.family_id) else 0

    def families(self) -> dict[int, list[int]]:
        order = np.argsort(self.family_id, kind="stable")
        fam = self.family_id[order]
        cuts = np.flatnonzero(np.diff(fam)) + 1
        return {int(g[0]): order[s:e].tolist()
                for g, s, e in zip(np.split(fam, cuts), np.r_[0, cuts], np.r_[cuts, len(order)])}

    def family_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All unordered (a, b) pairs of agents sharing a family, a < b."""
        order = np.argsort(self.family_id, kind="stable")
        fam = self.family_id[order]
        starts = np.r_[0, np.flatnonzero(np.diff(fam)) + 1]
        sizes = np.diff(np.r_[starts, len(order)])
        pos = np.arange(len(order)) - np.repeat(starts, sizes)
        size_of = np.repeat(sizes, sizes)
        a_list, b_list = [], []
        for off in range(1, int(sizes.max(initial=1))):
            m = pos + off < size_of
            idx = np.flatnonzero(m)
            a_list.append(order[idx])
            b_list.append(order[idx + off])
        if not a_list:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        a = np.concatenate(a_list)
        b = np.concatenate(b_list)
        return np.minimum(a, b), np.maximum(a, b)

    def workplace_triple(self, i: int) -> Optional[tuple[int, int, int]]:
        w = int(self.workplace[i])
        if w < 0:
            return None
        return (int(self.city.wp_sector[w]), int(self.city.wp_sub[w]), w)

    def agent(self, i: int) -> Agent:
        return Agent(
            id=i, age=int(self.age[i]), family_id=int(self.family_id[i]), ward=int(self.ward[i]) + 1,
            is_citizen=bool(self.is_citizen[i]), workplace=self.workplace_triple(i),
            visiting_places=tuple(int(v) for v in self.visiting[i] if v >= 0),
            comorbidity=bool(self.comorbidity[i]), income_level=float(self.income[i]),
            occupancy=Occupancy(int(self.occupancy[i])),
            uses_public_transport=bool(self.uses_transport[i]),
        )

    def agents(self) -> Iterator[Agent]:
        for i in range(len(self)):
            yield self.agent(i)

    def workers_of(self) -> list[np.ndarray]:
        idx = np.flatnonzero(self.workplace >= 0)
        return _group(idx, self.workplace[idx], self.city.workplace_count)

    def visitors_of(self) -> list[np.ndarray]:
        rows, cols = np.nonzero(self.visiting >= 0)
        places = self.visiting[rows, cols]
        keep = places != self.workplace[rows]
        pairs = np.unique(np.stack([places[keep], rows[keep]], axis=1), axis=0) if keep.any() else np.zeros((0, 2), int)
        return _group(pairs[:, 1], pairs[:, 0], self.city.workplace_count)

    def workplaces(self) -> Iterator[Workplace]:
        c = self.city
        workers = self.workers_of()
        visitors = self.visitors_of()
        for w in range(c.workplace_count):
            yield Workplace(
                id=w, sector=int(c.wp_sector[w]), sub_sector=int(c.wp_sub[w]), ward=int(c.wp_ward[w]) + 1,
                location=(float(c.wp_lat[w]), float(c.wp_lon[w])), is_essential=bool(c.wp_essential[w]),
                working_hours=float(c.wp_hours[w]), physical_gap=float(c.wp_gap[w]),
                workers=tuple(workers[w].tolist()), visitors=tuple(visitors[w].tolist()),
                income_level=float(c.wp_income[w]),
            )

    def facilities(self, occupancy: Optional[np.ndarray] = None) -> list[HealthcareFacility]:
        c = self.city
        workers = self.workers_of()
        out = []
        for f in range(len(c.fac_kind)):
            out.append(HealthcareFacility(
                id=int(c.fac_workplace[f]), kind=FacilityKind(int(c.fac_kind[f])), beds=int(c.fac_beds[f]),
                icu_beds=int(c.fac_icu[f]), ventilators=int(c.fac_vent[f]),
                workers=tuple(workers[c.fac_workplace[f]].tolist()), payment=Payment(int(c.fac_payment[f])),
                occupancy_count=0 if occupancy is None else int(occupancy[f]),
            ))
        return out

    def wards(self) -> list[Ward]:
        c = self.city
        counts = np.bincount(self.ward, minlength=c.ward_count)
        edu = c.sector_index(EDUCATION) if EDUCATION in c.sectors.names else -1
        fac_wp = set(c.fac_workplace.tolist())
        out = []
        for i, row in enumerate(c.ward_table.rows):
            wps = np.flatnonzero(c.wp_ward == i)
            out.append(Ward(
                id=row.ward_id, population=int(counts[i]),
                density=float(row.density), area=None,
                workplace_ids=tuple(int(w) for w in wps if c.wp_sector[w] != edu and w not in fac_wp),
                school_ids=tuple(int(w) for w in wps if c.wp_sector[w] == edu),
                facility_ids=tuple(int(w) for w in wps if w in fac_wp),
            ))
        return out

    def equal(self, other: "Population") -> bool:
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif isinstance(a, CityModel):
                if not a.equal(b):
                    return False
            elif a != b:
                return False
        return True


def _group(members: np.ndarray, keys: np.ndarray, n_keys: int) -> list[np.ndarray]:
    order = np.lexsort((members, keys))
    keys_sorted = keys[order]
    bounds = np.searchsorted(keys_sorted, np.arange(n_keys + 1))
    m = members[order]
    return [m[bounds[k]:bounds[k + 1]] for k in range(n_keys)]


# --------------------------------------------------------------------------
# synthesis

def _apportion(weights: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder integer apportionment summing exactly to ``total``."""
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        out = np.zeros(len(w), dtype=np.int64)
        out[: total] = 1 if total <= len(w) else 0
        return out
    exact = w / w.sum() * total
    out = np.floor(exact).astype(np.int64)
    rem = total - int(out.sum())
    order = np.argsort(-(exact - out), kind="stable")
    out[order[:rem]] += 1
    return out


def _balanced_assign(members: np.ndarray, targets: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Spread shuffled members round-robin over targets (sizes differ by <= 1)."""
    if len(targets) == 0:
        return np.full(len(members), -1, dtype=np.int64)
    perm = gen.permutation(len(members))
    out = np.empty(len(members), dtype=np.int64)
    out[perm] = targets[np.arange(len(members)) % len(targets)]
    return out


def _sample_ages(n: int, bands: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    band = gen.choice(10, size=n, p=bands / bands.sum())
    return band * 10 + gen.integers(0, 10, size=n)


def _ward_centres(n_wards: int) -> tuple[np.ndarray, np.ndarray]:
    side = int(math.ceil(math.sqrt(n_wards)))
    idx = np.arange(n_wards)
    lat = 22.45 + 0.20 * (idx // side + 0.5) / side
    lon = 88.30 + 0.12 * (idx % side + 0.5) / side
    return lat, lon


def synthesize_population(wards: WardTable, sectors: SectorTable,
                          cfg: PopulationConfig = PopulationConfig(), seed: int = 0) -> Population:
    """Generate a consistent population for the given ward and sector tables.

    Raises ``ConfigurationError`` when the sector tables demand more workers
    or students than the age structure provides.
    """
    if cfg.uniform_wards:
        wards = uniformize(wards)
    scale = cfg.scale
    n_total = _scaled(wards.total, scale)
    if n_total <= 0:
        raise ConfigurationError("scaled population is empty")
    n_wards = len(wards)
    ward_counts = _apportion(wards.populations, n_total)

    # families, built ward by ward so every family has one home ward
    dist = FamilySizes(cfg.family_mean, "poisson", cfg.family_max)
    fam_sizes, fam_ward = [], []
    for w in range(n_wards):
        if ward_counts[w] == 0:
            continue
        part = assign_families(int(ward_counts[w]), dist, rngmod.stream_key(seed, "ward", w))
        fam_sizes.append(part.sizes)
        fam_ward.append(np.full(part.count, w))
    fam_sizes = np.concatenate(fam_sizes)
    fam_ward = np.concatenate(fam_ward)
    family_id = np.repeat(np.arange(len(fam_sizes)), fam_sizes)
    ward = fam_ward[family_id]
    n = len(family_id)
    fam_start = np.r_[0, np.cumsum(fam_sizes)[:-1]]

    # demographics; the first member of every family is an adult head
    g = rngmod.generator(seed, "demographics")
    bands = np.asarray(cfg.age_bands)
    age = _sample_ages(n, bands, g)
    adult_bands = bands.copy()
    adult_bands[:2] = 0
    adult_bands[8:] = 0
    age[fam_start] = _sample_ages(len(fam_start), adult_bands, g)
    groups = np.minimum(age // 10, 10)
    comorbidity = g.random(n) < np.asarray(cfg.comorbidity_by_age_group)[groups]
    is_citizen = g.random(n) < cfg.citizen_fraction
    fam_income = g.lognormal(math.log(400.0), 0.8, size=len(fam_sizes))
    income = np.round(fam_income[family_id], 2)

    # workplaces
    g = rngmod.generator(seed, "workplaces")
    ward_share = ward_counts / ward_counts.sum()
    centre_lat, centre_lon = _ward_centres(n_wards)
    names = sectors.names
    wp_rows = []          # (sector, sub, count, hours, gap)
    edu_row = sectors.get(EDUCATION)
    occupancy = np.full(n, int(Occupancy.DEPENDENT), dtype=np.int8)
    occupancy[age >= 60] = int(Occupancy.RETIRED)
    workplace = np.full(n, -1, dtype=np.int64)

    # students first: school-age agents fill education places before college-age ones
    edu_demand = _scaled(edu_row.workers, scale) if edu_row else 0
    staff_demand = int(round(edu_demand * cfg.education_staff_fraction))
    student_slots = edu_demand - staff_demand
    school_pool = np.flatnonzero((age >= cfg.student_min_age) & (age < cfg.college_age))
    college_pool = np.flatnonzero((age >= cfg.college_age) & (age <= cfg.student_max_age))
    gs = rngmod.generator(seed, "students")
    school_pool = gs.permutation(school_pool)
    college_pool = gs.permutation(college_pool)
    if student_slots > len(school_pool) + len(college_pool):
        raise ConfigurationError(
            f"education demands {student_slots} students but only "
            f"{len(school_pool) + len(college_pool)} agents are of student age")
    school_students = school_pool[:student_slots]
    college_students = college_pool[: max(0, student_slots - len(school_students))]
    occupancy[school_students] = int(Occupancy.STUDENT)
    occupancy[college_students] = int(Occupancy.STUDENT)

    # worker demand per non-education sector
    eligible = np.flatnonzero((age >= cfg.worker_min_age) & (age <= cfg.worker_max_age)
                              & (occupancy != int(Occupancy.STUDENT)))
    demand = {r.name: _scaled(r.workers, scale) for r in sectors.rows if r.name != EDUCATION}
    total_demand = sum(demand.values()) + staff_demand
    if total_demand > len(eligible):
        raise ConfigurationError(
            f"sectors demand {total_demand} workers but only {len(eligible)} agents are "
            f"aged {cfg.worker_min_age}-{cfg.worker_max_age}")
    eligible = rngmod.generator(seed, "workers").permutation(eligible)

    sector_of_wp, sub_of_wp, hours_of_wp, gap_of_wp = [], [], [], []
    sector_slices = {}
    for s_idx, row in enumerate(sectors.rows):
        hours = cfg.healthcare_hours if (row.name == HEALTHCARE and row.hours == 0) else row.hours
        workers_here = edu_demand if row.name == EDUCATION else demand[row.name]
        subs = []
        if row.name == EDUCATION:
            total_c = max(1, _scaled(row.center_count, scale)) if workers_here else 0
            n_st = len(school_students) + len(college_students)
            n_col = 0
            if len(college_students) and total_c > 1:
                n_col = min(total_c - 1, max(1, int(round(total_c * len(college_students) / max(n_st, 1)))))
            subs = [(SCHOOL_SUBSECTOR, total_c - n_col), (COLLEGE_SUBSECTOR, n_col)]
        else:
            for sub, c in enumerate(row.centers):
                cnt = _scaled(c, scale)
                if workers_here > 0 or row.name == HEALTHCARE:
                    cnt = max(cnt, 1 if c > 0 else 0)
                subs.append((sub, cnt))
        start = len(sector_of_wp)
        for sub, cnt in subs:
            sector_of_wp += [s_idx] * cnt
            sub_of_wp += [sub] * cnt
            hours_of_wp += [hours] * cnt
            gap_of_wp += [row.gap_m] * cnt
        sector_slices[row.name] = (start, len(sector_of_wp))
    n_wp = len(sector_of_wp)
    wp_sector = np.array(sector_of_wp, dtype=np.int64)
    wp_sub = np.array(sub_of_wp, dtype=np.int64)
    wp_hours = np.array(hours_of_wp, dtype=float)
    wp_gap = np.array(gap_of_wp, dtype=float)
    wp_ward = g.choice(n_wards, size=n_wp, p=ward_share)
    wp_lat = np.round(centre_lat[wp_ward] + g.normal(0, 0.003, n_wp), 6)
    wp_lon = np.round(centre_lon[wp_ward] + g.normal(0, 0.003, n_wp), 6)
    ess_p = np.array([cfg.essential_fraction.get(names[s], 0.0) for s in wp_sector])
    wp_essential = g.random(n_wp) < ess_p

    # assign workers sector by sector from the shuffled eligible pool
    ga = rngmod.generator(seed, "assignment")
    cursor = 0
    staff = eligible[cursor:cursor + staff_demand]
    cursor += staff_demand
    for row in sectors.rows:
        if row.name == EDUCATION:
            continue
        lo, hi = sector_slices[row.name]
        members = eligible[cursor:cursor + demand[row.name]]
        cursor += demand[row.name]
        workplace[members] = _balanced_assign(members, np.arange(lo, hi), ga)
        occupancy[members] = int(Occupancy.WORKER)

    if edu_row is not None and edu_demand:
        lo, hi = sector_slices[EDUCATION]
        edu_ids = np.arange(lo, hi)
        schools = edu_ids[wp_sub[lo:hi] == SCHOOL_SUBSECTOR]
        colleges = edu_ids[wp_sub[lo:hi] == COLLEGE_SUBSECTOR]
        if len(colleges) == 0:
            colleges = schools
        workplace[school_students] = _assign_local(school_students, ward, schools, wp_ward, ga)
        workplace[college_students] = _balanced_assign(college_students, colleges, ga)
        workplace[staff] = _balanced_assign(staff, edu_ids, ga)
        occupancy[staff] = int(Occupancy.WORKER)

    wp_income = np.zeros(n_wp)
    counts = np.bincount(workplace[workplace >= 0], minlength=n_wp)
    wp_income = np.round(counts * g.lognormal(math.log(500.0), 0.5, n_wp), 2)
    if EDUCATION in names:
        wp_income[wp_sector == names.index(EDUCATION)] = 0.0

    # healthcare facilities are the Healthcare sector's workplaces
    if HEALTHCARE in sector_slices:
        lo, hi = sector_slices[HEALTHCARE]
        fac_workplace = np.arange(lo, hi)
    else:
        fac_workplace = np.zeros(0, dtype=np.int64)
    fac_kind = np.minimum(wp_sub[fac_workplace], 2)
    fac_beds = np.array([cfg.beds[k] for k in fac_kind], dtype=np.int64)
    fac_icu = np.floor(fac_beds * cfg.icu_fraction).astype(np.int64)
    fac_vent = np.floor(fac_beds * cfg.ventilator_fraction).astype(np.int64)
    fac_payment = (g.random(len(fac_kind)) < cfg.paid_fraction).astype(np.int64)

    # public transport users among commuters
    gt = rngmod.generator(seed, "transport")
    commuters = workplace >= 0
    p_ride = min(1.0, cfg.transport_baseline * n / max(int(commuters.sum()), 1))
    uses_transport = commuters & (gt.random(n) < p_ride)

    # frequently visited places
    visiting = _visiting_places(cfg, ward, workplace, wp_sector, wp_ward, names, n_wards,
                                rngmod.generator(seed, "visits"))

    city = CityModel(
        ward_table=wards, sectors=sectors, wp_sector=wp_sector, wp_sub=wp_sub, wp_ward=wp_ward,
        wp_lat=wp_lat, wp_lon=wp_lon, wp_essential=wp_essential, wp_hours=wp_hours, wp_gap=wp_gap,
        wp_income=wp_income, fac_workplace=fac_workplace, fac_kind=fac_kind, fac_beds=fac_beds,
        fac_icu=fac_icu, fac_vent=fac_vent, fac_payment=fac_payment,
    )
    return Population(
        age=age.astype(np.int64), family_id=family_id.astype(np.int64), ward=ward.astype(np.int64),
        is_citizen=is_citizen, comorbidity=comorbidity, income=income, occupancy=occupancy,
        workplace=workplace, uses_transport=uses_transport, visiting=visiting, city=city,
        seed=int(seed), scale=float(scale),
    )


def _assign_local(students, home_ward, schools, wp_ward, gen) -> np.ndarray:
    """Send students to a school in their home ward while it has room.

    Room is twice the citywide mean school size; overflow and students from
    wards without schools are spread over schools that still have room.
    """
    out = np.full(len(students), -1, dtype=np.int64)
    if len(students) == 0 or len(schools) == 0:
        return out
    cap = int(math.ceil(2 * len(students) / len(schools)))
    load = np.zeros(len(schools), dtype=np.int64)
    order = gen.permutation(len(students))
    school_ward = wp_ward[schools]
    by_ward: dict[int, np.ndarray] = {}
    for w in np.unique(school_ward):
        by_ward[int(w)] = np.flatnonzero(school_ward == w)
    sw = home_ward[students]
    leftovers = []
    for w in np.unique(sw[order]):
        idx = order[sw[order] == w]
        local = by_ward.get(int(w))
        if local is None:
            leftovers.append(idx)
            continue
        room = cap * len(local) - int(load[local].sum())
        take = idx[:room]
        picks = local[np.arange(len(take)) % len(local)]
        out[take] = schools[picks]
        np.add.at(load, picks, 1)
        leftovers.append(idx[room:])
    rest = np.concatenate(leftovers) if leftovers else np.zeros(0, dtype=np.int64)
    if len(rest):
        spare = np.repeat(np.arange(len(schools)), np.maximum(cap - load, 0))
        spare = gen.permutation(spare)[: len(rest)]
        out[rest] = schools[spare]
    return out


def _visiting_places(cfg, ward, workplace, wp_sector, wp_ward, names, n_wards, gen) -> np.ndarray:
    n = len(ward)
    V = cfg.visiting_places
    visit_sectors = [names.index(s) for s in VISIT_SECTORS if s in names]
    pool = np.flatnonzero(np.isin(wp_sector, visit_sectors))
    if V == 0 or len(pool) == 0:
        return np.full((n, max(V, 0)), -1, dtype=np.int64)
    pool_ward = wp_ward[pool]
    order = np.argsort(pool_ward, kind="stable")
    pool_sorted = pool[order]
    bounds = np.searchsorted(pool_ward[order], np.arange(n_wards + 1))
    starts, sizes = bounds[:-1], np.diff(bounds)
    out = np.empty((n, V), dtype=np.int64)
    for v in range(V):
        u = gen.random(n)
        local = (gen.random(n) < cfg.local_visit_fraction) & (sizes[ward] > 0)
        glob = pool[(u * len(pool)).astype(np.int64)]
        slot = np.minimum(starts[ward] + (u * sizes[ward]).astype(np.int64), len(pool) - 1)
        loc = pool_sorted[slot]
        pick = np.where(local, loc, glob)
        clash = pick == workplace
        if clash.any():
            alt = pool[((u[clash] * len(pool)).astype(np.int64) + 1) % len(pool)]
            pick[clash] = np.where(alt == workplace[clash], -1, alt)
        out[:, v] = pick
    # padding slots go last so the array survives a round trip through Agent records
    order = np.argsort(out < 0, axis=1, kind="stable")
    return np.take_along_axis(out, order, axis=1)


# --------------------------------------------------------------------------
# persistence

def save_population(pop: Population, path) -> None:
    """Write the population in the line-delimited record format."""
    c = pop.city
    header = {
        "kind": "population", "seed": pop.seed, "scale": pop.scale,
        "sectors": c.sectors.to_record(),
        "ward_table": [[r.ward_id, r.population, r.density] for r in c.ward_table.rows],
        "visiting_slots": int(pop.visiting.shape[1]),
    }

    def items():
        yield from pop.wards()
        yield from pop.workplaces()
        yield from pop.facilities()
        yield from pop.agents()

    write_jsonl(path, header, items())


def load_population(path) -> Population:
    header, items = read_jsonl(path)
    if header.get("kind") != "population":
        raise ParseError(f"{path}: not a population file")
    sectors = SectorTable.from_record(header["sectors"])
    wt = WardTable(tuple(WardRow(int(a), int(b), float(d)) for a, b, d in header["ward_table"]))
    workplaces: list[Workplace] = []
    facilities: list[HealthcareFacility] = []
    agents: list[Agent] = []
    for item in items:
        if isinstance(item, Workplace):
            workplaces.append(item)
        elif isinstance(item, HealthcareFacility):
            facilities.append(item)
        elif isinstance(item, Agent):
            agents.append(item)
    V = int(header["visiting_slots"])
    n = len(agents)
    visiting = np.full((n, V), -1, dtype=np.int64)
    for a in agents:
        visiting[a.id, : len(a.visiting_places)] = a.visiting_places
    city = CityModel(
        ward_table=wt, sectors=sectors,
        wp_sector=np.array([w.sector for w in workplaces], dtype=np.int64),
        wp_sub=np.array([w.sub_sector for w in workplaces], dtype=np.int64),
        wp_ward=np.array([w.ward - 1 for w in workplaces], dtype=np.int64),
        wp_lat=np.array([w.location[0] for w in workplaces], dtype=float),
        wp_lon=np.array([w.location[1] for w in workplaces], dtype=float),
        wp_essential=np.array([w.is_essential for w in workplaces], dtype=bool),
        wp_hours=np.array([w.working_hours for w in workplaces], dtype=float),
        wp_gap=np.array([w.physical_gap for w in workplaces], dtype=float),
        wp_income=np.array([w.income_level for w in workplaces], dtype=float),
        fac_workplace=np.array([f.id for f in facilities], dtype=np.int64),
        fac_kind=np.array([int(f.kind) for f in facilities], dtype=np.int64),
        fac_beds=np.array([f.beds for f in facilities], dtype=np.int64),
        fac_icu=np.array([f.icu_beds for f in facilities], dtype=np.int64),
        fac_vent=np.array([f.ventilators for f in facilities], dtype=np.int64),
        fac_payment=np.array([int(f.payment) for f in facilities], dtype=np.int64),
    )
    return Population(
        age=np.array([a.age for a in agents], dtype=np.int64),
        family_id=np.array([a.family_id for a in agents], dtype=np.int64),
        ward=np.array([a.ward - 1 for a in agents], dtype=np.int64),
        is_citizen=np.array([a.is_citizen for a in agents], dtype=bool),
        comorbidity=np.array([a.comorbidity for a in agents], dtype=bool),
        income=np.array([a.income_level for a in agents], dtype=float),
        occupancy=np.array([int(a.occupancy) for a in agents], dtype=np.int8),
        workplace=np.array([a.workplace[2] if a.workplace else -1 for a in agents], dtype=np.int64),
        uses_transport=np.array([a.uses_public_transport for a in agents], dtype=bool),
        visiting=visiting, city=city, seed=int(header["seed"]), scale=float(header["scale"]),
    )
