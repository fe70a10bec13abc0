"""Domain vocabulary shared by every part of the simulator.

All types here are frozen dataclasses. Each validates its invariants on
construction and converts to and from a flat JSON-compatible record, which is
what the line-delimited persistence format stores (see ``write_jsonl``).
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

FORMAT_VERSION = 1
MAX_AGE_GROUP = 10


class ValidationError(ValueError):
    """A value violates a type invariant."""


class ParseError(ValueError):
    """An input file could not be parsed."""


class ConfigurationError(ValueError):
    """Inputs are individually valid but cannot be satisfied together."""


class DomainError(ValueError):
    """A numeric argument is outside the function's domain."""


class VirusState(enum.IntEnum):
    HEALTHY = 0
    INFECTED_SYMPTOMATIC = 1
    INFECTED_ASYMPTOMATIC = 2
    RECOVERED = 3
    DEAD = 4

    @property
    def infected(self) -> bool:
        return self in (VirusState.INFECTED_SYMPTOMATIC, VirusState.INFECTED_ASYMPTOMATIC)


class MobilityState(enum.IntEnum):
    FREE = 0
    OUT_OF_CITY = 1
    QUARANTINED = 2
    ISOLATED = 3
    HOSPITALIZED = 4


class Setting(enum.IntEnum):
    HOME = 0
    WORKPLACE = 1
    SCHOOL = 2
    TRANSPORT = 3
    VISIT = 4
    HEALTHCARE = 5


class FacilityKind(enum.IntEnum):
    COVID_HOSPITAL = 0
    HEALTHCARE_CENTRE = 1
    ISOLATION_CENTRE = 2


class Payment(enum.IntEnum):
    FREE = 0
    PAID = 1


class Occupancy(enum.IntEnum):
    """Occupational category code carried by every agent."""

    DEPENDENT = 0
    STUDENT = 1
    WORKER = 2
    RETIRED = 3


def age_group(age: int) -> int:
    return min(int(age) // 10, MAX_AGE_GROUP)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _unit(x: float, name: str) -> None:
    _check(0.0 <= x <= 1.0, f"{name} must lie in [0, 1], got {x}")


@dataclass(frozen=True)
class Agent:
    id: int
    age: int
    family_id: int
    ward: int
    is_citizen: bool = True
    workplace: Optional[tuple[int, int, int]] = None
    visiting_places: tuple[int, ...] = ()
    comorbidity: bool = False
    income_level: float = 0.0
    occupancy: Occupancy = Occupancy.DEPENDENT
    uses_public_transport: bool = False
    age_group: int = -1

    def __post_init__(self):
        _check(self.age >= 0, f"agent {self.id}: negative age {self.age}")
        if self.age_group == -1:
            object.__setattr__(self, "age_group", age_group(self.age))
        _check(self.age_group == age_group(self.age),
               f"agent {self.id}: age_group {self.age_group} != floor({self.age}/10)")
        _check(self.income_level >= 0, f"agent {self.id}: negative income")
        if self.workplace is not None:
            _check(len(self.workplace) == 3, "workplace must be a (sector, sub_sector, id) triple")
            object.__setattr__(self, "workplace", tuple(int(v) for v in self.workplace))
        object.__setattr__(self, "visiting_places", tuple(int(v) for v in self.visiting_places))
        object.__setattr__(self, "occupancy", Occupancy(self.occupancy))
        if self.occupancy == Occupancy.STUDENT:
            _check(self.workplace is not None, f"student {self.id} has no school")

    def to_record(self) -> dict:
        return {
            "id": self.id, "age": self.age, "age_group": self.age_group,
            "family_id": self.family_id, "ward": self.ward,
            "is_citizen": self.is_citizen,
            "workplace": list(self.workplace) if self.workplace else None,
            "visiting_places": list(self.visiting_places),
            "comorbidity": self.comorbidity, "income_level": self.income_level,
            "occupancy": int(self.occupancy),
            "uses_public_transport": self.uses_public_transport,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Agent":
        wp = rec.get("workplace")
        return cls(
            id=rec["id"], age=rec["age"], family_id=rec["family_id"], ward=rec["ward"],
            is_citizen=rec["is_citizen"], workplace=tuple(wp) if wp else None,
            visiting_places=tuple(rec["visiting_places"]), comorbidity=rec["comorbidity"],
            income_level=rec["income_level"], occupancy=Occupancy(rec["occupancy"]),
            uses_public_transport=rec["uses_public_transport"], age_group=rec["age_group"],
        )


@dataclass(frozen=True)
class DiseaseState:
    virus: VirusState = VirusState.HEALTHY
    mobility: MobilityState = MobilityState.FREE
    infected_on: Optional[int] = None
    viral_load: Optional[float] = None
    peak_day: Optional[int] = None
    recovery_day: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "virus", VirusState(self.virus))
        object.__setattr__(self, "mobility", MobilityState(self.mobility))
        has_infection = self.infected_on is not None and self.viral_load is not None
        if self.virus.infected:
            _check(has_infection, "infected state needs infected_on and viral_load")
        else:
            _check(self.virus != VirusState.HEALTHY or (self.infected_on is None and self.viral_load is None),
                   "healthy state cannot carry infection data")
        if self.viral_load is not None:
            _unit(self.viral_load, "viral_load")

    def to_record(self) -> dict:
        return {"virus": int(self.virus), "mobility": int(self.mobility),
                "infected_on": self.infected_on, "viral_load": self.viral_load,
                "peak_day": self.peak_day, "recovery_day": self.recovery_day}

    @classmethod
    def from_record(cls, rec: dict) -> "DiseaseState":
        return cls(**rec)


@dataclass(frozen=True)
class Workplace:
    id: int
    sector: int
    sub_sector: int
    ward: int
    location: tuple[float, float]
    is_essential: bool
    working_hours: float
    physical_gap: float
    workers: tuple[int, ...] = ()
    visitors: tuple[int, ...] = ()
    income_level: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "location", tuple(float(v) for v in self.location))
        object.__setattr__(self, "workers", tuple(int(v) for v in self.workers))
        object.__setattr__(self, "visitors", tuple(int(v) for v in self.visitors))
        _check(not set(self.workers) & set(self.visitors),
               f"workplace {self.id}: an agent is both worker and visitor")
        _check(0 <= self.working_hours <= 24, f"workplace {self.id}: working_hours out of range")
        _check(self.physical_gap > 0, f"workplace {self.id}: physical_gap must be positive")
        _check(self.income_level >= 0, f"workplace {self.id}: negative income")

    def to_record(self) -> dict:
        rec = dataclasses.asdict(self)
        rec["location"] = list(self.location)
        rec["workers"] = list(self.workers)
        rec["visitors"] = list(self.visitors)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Workplace":
        return cls(**rec)


@dataclass(frozen=True)
class HealthcareFacility:
    id: int
    kind: FacilityKind
    beds: int
    icu_beds: int = 0
    ventilators: int = 0
    workers: tuple[int, ...] = ()
    payment: Payment = Payment.FREE
    occupancy_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", FacilityKind(self.kind))
        object.__setattr__(self, "payment", Payment(self.payment))
        object.__setattr__(self, "workers", tuple(int(v) for v in self.workers))
        _check(self.beds >= 0, "beds must be >= 0")
        _check(0 <= self.icu_beds <= self.beds, "icu_beds must lie in [0, beds]")
        _check(self.ventilators >= 0, "ventilators must be >= 0")
        _check(0 <= self.occupancy_count <= self.beds, "occupancy_count exceeds beds")

    def to_record(self) -> dict:
        rec = dataclasses.asdict(self)
        rec["kind"] = int(self.kind)
        rec["payment"] = int(self.payment)
        rec["workers"] = list(self.workers)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "HealthcareFacility":
        return cls(**rec)


@dataclass(frozen=True)
class Ward:
    id: int
    population: int
    density: float
    area: Optional[float] = None
    workplace_ids: tuple[int, ...] = ()
    school_ids: tuple[int, ...] = ()
    facility_ids: tuple[int, ...] = ()

    def __post_init__(self):
        _check(self.id >= 1, f"ward id must be >= 1, got {self.id}")
        _check(self.population >= 0, f"ward {self.id}: negative population")
        _check(self.density >= 0, f"ward {self.id}: negative density")
        if self.area is not None and self.area > 0 and self.population > 0:
            implied = self.population / self.area
            _check(abs(implied - self.density) <= 0.01 * max(implied, self.density),
                   f"ward {self.id}: density {self.density} inconsistent with population/area {implied:.2f}")
        for name in ("workplace_ids", "school_ids", "facility_ids"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def to_record(self) -> dict:
        rec = dataclasses.asdict(self)
        for name in ("workplace_ids", "school_ids", "facility_ids"):
            rec[name] = list(rec[name])
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Ward":
        return cls(**rec)


@dataclass(frozen=True)
class Lockdown:
    """Lockdown scope for one day: nothing, the whole city, or a ward list."""

    kind: str = "none"
    wards: tuple[int, ...] = ()

    def __post_init__(self):
        _check(self.kind in ("none", "citywide", "wards"), f"unknown lockdown kind {self.kind!r}")
        object.__setattr__(self, "wards", tuple(sorted(int(w) for w in self.wards)))
        if self.kind != "wards":
            _check(not self.wards, "only a ward-list lockdown carries wards")

    @classmethod
    def parse(cls, value) -> "Lockdown":
        if isinstance(value, Lockdown):
            return value
        if value is None or value == "none":
            return cls()
        if value == "citywide":
            return cls("citywide")
        if isinstance(value, (list, tuple)):
            return cls("wards", tuple(value))
        raise ValidationError(f"lockdown must be 'none', 'citywide' or a ward list, got {value!r}")

    def to_value(self):
        return list(self.wards) if self.kind == "wards" else self.kind


NONE_LOCKDOWN = Lockdown()
CITYWIDE = Lockdown("citywide")


@dataclass(frozen=True)
class DaySettings:
    """Fully resolved intervention settings for one simulated day."""

    lockdown: Lockdown = NONE_LOCKDOWN
    education_closed: bool = False
    compliance_rate: float = 1.0
    external_ifp: float = 0.0
    transport_fraction: float = 0.17
    sd_factor: float = 1.0
    tracing_efficacy_workplace: float = 0.0
    tracing_efficacy_transport: float = 0.0
    test_capacity: int = 0
    containment_zones: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lockdown", Lockdown.parse(self.lockdown))
        for name in ("compliance_rate", "external_ifp", "transport_fraction",
                     "tracing_efficacy_workplace", "tracing_efficacy_transport"):
            _unit(getattr(self, name), name)
        _check(self.sd_factor > 0, "sd_factor must be positive")
        _check(int(self.test_capacity) == self.test_capacity and self.test_capacity >= 0,
               "test_capacity must be a non-negative integer")
        object.__setattr__(self, "test_capacity", int(self.test_capacity))

    def to_record(self) -> dict:
        rec = dataclasses.asdict(self)
        rec["lockdown"] = self.lockdown.to_value()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "DaySettings":
        return cls(**rec)


@dataclass(frozen=True)
class PolicyCalendar:
    """One resolved ``DaySettings`` per day, starting at ``start``."""

    start: dt.date
    days: tuple[DaySettings, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "days", tuple(self.days))
        _check(all(isinstance(d, DaySettings) for d in self.days), "calendar entries must be DaySettings")

    def __len__(self) -> int:
        return len(self.days)

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self.days) - 1)

    def date_of(self, index: int) -> dt.date:
        return self.start + dt.timedelta(days=index)

    def index_of(self, day: dt.date) -> int:
        return (day - self.start).days

    def to_record(self) -> dict:
        return {"start": self.start.isoformat(), "days": [d.to_record() for d in self.days]}

    @classmethod
    def from_record(cls, rec: dict) -> "PolicyCalendar":
        return cls(dt.date.fromisoformat(rec["start"]),
                   tuple(DaySettings.from_record(d) for d in rec["days"]))


@dataclass(frozen=True)
class InfectionEvent:
    """One infection: ``source`` is -1 for seeded and external infections."""

    day: int
    source: int
    target: int
    setting: str

    def to_record(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "InfectionEvent":
        return cls(**rec)


RECORD_TYPES = {
    "agent": Agent, "state": DiseaseState, "workplace": Workplace,
    "facility": HealthcareFacility, "ward": Ward, "day_settings": DaySettings,
    "calendar": PolicyCalendar, "infection": InfectionEvent,
}


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ValueError("non-finite float in record")
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_jsonl(path, header: dict, items: Iterable) -> None:
    """Write a header line followed by one ``{"type": ..., ...}`` line per item."""
    kinds = {cls: name for name, cls in RECORD_TYPES.items()}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "citysim", "version": FORMAT_VERSION, **header},
                            sort_keys=True, default=_json_default) + "\n")
        for item in items:
            rec = {"type": kinds[type(item)], **item.to_record()}
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":"), default=_json_default) + "\n")


def read_jsonl(path) -> tuple[dict, Iterator]:
    """Return the header and a lazy iterator of decoded items."""
    path = Path(path)
    fh = open(path, encoding="utf-8")
    first = fh.readline()
    if not first:
        fh.close()
        raise ParseError(f"{path}: empty file")
    header = json.loads(first)
    if header.get("format") != "citysim":
        fh.close()
        raise ParseError(f"{path}: not a citysim record file")
    if header.get("version") != FORMAT_VERSION:
        fh.close()
        raise ParseError(f"{path}: unsupported format version {header.get('version')}")

    def items():
        with fh:
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                rec = json.loads(line)
                kind = rec.pop("type", None)
                if kind not in RECORD_TYPES:
                    raise ParseError(f"{path}:{lineno}: unknown record type {kind!r}")
                yield RECORD_TYPES[kind].from_record(rec)

    return header, items()
