"""Interventions: calendar resolution, testing, tracing, case routing, zones."""
from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .core_types import (
    ConfigurationError, DaySettings, FacilityKind, MobilityState, PolicyCalendar, Setting,
    ValidationError, VirusState,
)
from .mobility import ContactArrays

DayLike = Union[int, dt.date]
SETTING_FIELDS = tuple(f.name for f in dataclasses.fields(DaySettings))
COUNT_FIELDS = ("test_capacity",)


@dataclass(frozen=True)
class PolicyParams:
    self_report_probability: float = 0.8
    quarantine_days: int = 14
    hospitalization_threshold: float = 0.7
    containment_threshold: float = 0.0005
    contact_log_days: int = 14

    def __post_init__(self):
        if not 0 <= self.self_report_probability <= 1:
            raise ValidationError("self_report_probability must lie in [0, 1]")
        if self.quarantine_days < 1 or self.contact_log_days < 1:
            raise ValidationError("quarantine_days and contact_log_days must be >= 1")
        if self.containment_threshold <= 0:
            raise ValidationError("containment_threshold must be positive")


# --------------------------------------------------------------------------
# calendar

@dataclass(frozen=True)
class CalendarBlock:
    """Settings applied on every day of ``[start, end]`` (optionally only on some weekdays).

    A numeric setting given as ``[first, last]`` is interpolated linearly over
    the block.
    """

    start: dt.date
    end: dt.date
    settings: dict = field(default_factory=dict)
    weekdays: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.end < self.start:
            raise ValidationError(f"calendar block ends ({self.end}) before it starts ({self.start})")
        unknown = set(self.settings) - set(SETTING_FIELDS)
        if unknown:
            raise ValidationError(f"unknown calendar setting(s): {', '.join(sorted(unknown))}")
        if self.weekdays is not None:
            object.__setattr__(self, "weekdays", tuple(int(d) for d in self.weekdays))
            if any(not 0 <= d <= 6 for d in self.weekdays):
                raise ValidationError("weekdays are ISO numbers 0 (Mon) .. 6 (Sun)")

    def covers(self, day: dt.date) -> bool:
        return self.start <= day <= self.end and (self.weekdays is None or day.weekday() in self.weekdays)

    def value(self, name: str, day: dt.date):
        v = self.settings[name]
        if isinstance(v, (list, tuple)) and name != "lockdown":
            first, last = v
            span = (self.end - self.start).days
            t = (day - self.start).days / span if span else 0.0
            return first + (last - first) * t
        return v


@dataclass(frozen=True)
class CalendarSpec:
    defaults: dict = field(default_factory=dict)
    blocks: tuple[CalendarBlock, ...] = ()

    def __post_init__(self):
        unknown = set(self.defaults) - set(SETTING_FIELDS)
        if unknown:
            raise ValidationError(f"unknown calendar default(s): {', '.join(sorted(unknown))}")
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def settings_on(self, day: dt.date, count_scale: float = 1.0) -> DaySettings:
        values = dict(self.defaults)
        for block in self.blocks:
            if block.covers(day):
                for name in block.settings:
                    values[name] = block.value(name, day)
        for name in COUNT_FIELDS:
            if name in values and count_scale != 1.0:
                raw = values[name]
                values[name] = max(1, int(round(raw * count_scale))) if raw > 0 else 0
        if "test_capacity" in values:
            values["test_capacity"] = int(round(values["test_capacity"]))
        return DaySettings(**values)

    def resolve(self, start: dt.date, days: int, count_scale: float = 1.0) -> PolicyCalendar:
        return PolicyCalendar(start, tuple(self.settings_on(start + dt.timedelta(days=i), count_scale)
                                           for i in range(days)))

    def override(self, **settings) -> "CalendarSpec":
        """Force settings on every day, dropping them from all blocks."""
        blocks = []
        for b in self.blocks:
            rest = {k: v for k, v in b.settings.items() if k not in settings}
            if rest:
                blocks.append(dataclasses.replace(b, settings=rest))
        return CalendarSpec({**self.defaults, **settings}, tuple(blocks))


def resolve_policy(calendar: PolicyCalendar, day: DayLike) -> DaySettings:
    """Settings in force on ``day`` (a date or a 0-based index into the calendar)."""
    idx = calendar.index_of(day) if isinstance(day, dt.date) else int(day)
    if not 0 <= idx < len(calendar):
        raise ValidationError(f"day {day} is outside the calendar "
                              f"({calendar.start} .. {calendar.end})")
    return calendar.days[idx]


# --------------------------------------------------------------------------
# testing

class TestQueue:
    """Agents awaiting a test: symptomatic reports first, then traced contacts, FIFO within each."""

    __test__ = False
    SYMPTOMATIC = "symptomatic"
    TRACED = "traced"

    def __init__(self):
        self._sym: dict[int, None] = {}
        self._traced: dict[int, None] = {}

    def __len__(self) -> int:
        return len(self._sym) + len(self._traced)

    def __contains__(self, agent: int) -> bool:
        return agent in self._sym or agent in self._traced

    def enqueue(self, agents: Iterable[int], reason: str) -> None:
        if reason == self.SYMPTOMATIC:
            for a in agents:
                a = int(a)
                self._traced.pop(a, None)
                self._sym.setdefault(a, None)
        elif reason == self.TRACED:
            for a in agents:
                a = int(a)
                if a not in self._sym:
                    self._traced.setdefault(a, None)
        else:
            raise ValidationError(f"unknown enqueue reason {reason!r}")

    def discard(self, agents: Iterable[int], reason: Optional[str] = None) -> None:
        for a in agents:
            if reason != self.TRACED:
                self._sym.pop(int(a), None)
            if reason != self.SYMPTOMATIC:
                self._traced.pop(int(a), None)

    def dequeue(self, capacity: int, eligible: Optional[np.ndarray] = None) -> list[tuple[int, str]]:
        """Pop up to ``capacity`` agents; entries not ``eligible`` are dropped without using capacity."""
        out = []
        for store, reason in ((self._sym, self.SYMPTOMATIC), (self._traced, self.TRACED)):
            while store and len(out) < capacity:
                a = next(iter(store))
                del store[a]
                if eligible is None or eligible[a]:
                    out.append((a, reason))
        return out

    def members(self) -> list[tuple[int, str]]:
        return [(a, self.SYMPTOMATIC) for a in self._sym] + [(a, self.TRACED) for a in self._traced]

    def copy(self) -> "TestQueue":
        q = TestQueue()
        q._sym = dict(self._sym)
        q._traced = dict(self._traced)
        return q


def run_testing(queue: TestQueue, capacity: int, virus: np.ndarray, rng=None,
                eligible: Optional[np.ndarray] = None) -> list[tuple[int, bool]]:
    """Test up to ``capacity`` queued agents. Tests are perfect."""
    if capacity < 0:
        raise ValidationError("test capacity must be >= 0")
    tested = queue.dequeue(capacity, eligible)
    infected = (int(VirusState.INFECTED_SYMPTOMATIC), int(VirusState.INFECTED_ASYMPTOMATIC))
    return [(a, int(virus[a]) in infected) for a, _ in tested]


# --------------------------------------------------------------------------
# contact log and tracing

class ContactLog:
    """Contacts of the last ``days`` days, kept per day."""

    def __init__(self, days: int = 14):
        self.days = days
        self._by_day: dict[int, ContactArrays] = {}

    def add(self, day: int, contacts: ContactArrays) -> None:
        self._by_day[day] = contacts
        for d in [d for d in self._by_day if d <= day - self.days]:
            del self._by_day[d]

    def window(self) -> list[int]:
        return sorted(self._by_day)

    def __len__(self) -> int:
        return sum(len(c) for c in self._by_day.values())

    def involving(self, agents, n_agents: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(agent, partner, setting) rows for logged contacts of ``agents``, oldest day first."""
        mask = np.zeros(n_agents, dtype=bool)
        mask[np.asarray(agents, dtype=np.int64)] = True
        src, dst, st = [], [], []
        for d in self.window():
            c = self._by_day[d]
            ha = mask[c.a]
            hb = mask[c.b]
            src += [c.a[ha], c.b[hb]]
            dst += [c.b[ha], c.a[hb]]
            st += [c.setting[ha], c.setting[hb]]
        if not src:
            z = np.zeros(0, np.int64)
            return z, z.copy(), np.zeros(0, np.int8)
        return np.concatenate(src), np.concatenate(dst), np.concatenate(st)

    def copy(self) -> "ContactLog":
        log = ContactLog(self.days)
        log._by_day = dict(self._by_day)
        return log


def trace_many(positives, log: ContactLog, eff_work: float, eff_transport: float,
               rng: np.random.Generator, n_agents: int,
               household: Optional[np.ndarray] = None) -> np.ndarray:
    """Contacts identified for a batch of positives (sorted unique agent ids).

    Workplace and school contacts are found with ``eff_work``, transport
    contacts with ``eff_transport``; ``household`` members are always found.
    Visit and care contacts are anonymous and never traced.
    """
    for eff in (eff_work, eff_transport):
        if not 0 <= eff <= 1:
            raise ValidationError("tracing efficacy must lie in [0, 1]")
    positives = np.asarray(positives, dtype=np.int64)
    src, dst, st = log.involving(positives, n_agents)
    p = np.zeros(len(st))
    p[(st == Setting.WORKPLACE) | (st == Setting.SCHOOL)] = eff_work
    p[st == Setting.TRANSPORT] = eff_transport
    found = dst[(p > 0) & (rng.random(len(st)) < p)]
    if household is not None:
        found = np.concatenate([found, household])
    found = np.unique(found)
    return np.setdiff1d(found, positives)


def trace_contacts(positive: int, log: ContactLog, eff_work: float, eff_transport: float,
                   rng: np.random.Generator, n_agents: int,
                   household: Iterable[int] = ()) -> set[int]:
    hh = np.asarray([h for h in household if h != positive], dtype=np.int64)
    return set(trace_many([positive], log, eff_work, eff_transport, rng, n_agents, hh).tolist())


# --------------------------------------------------------------------------
# case routing

HOSPITAL_PREFERENCE = (FacilityKind.COVID_HOSPITAL, FacilityKind.HEALTHCARE_CENTRE, FacilityKind.ISOLATION_CENTRE)


class BedBoard:
    """Bed occupancy across healthcare facilities."""

    def __init__(self, kinds, beds):
        self.kinds = np.asarray(kinds, dtype=np.int64)
        self.beds = np.asarray(beds, dtype=np.int64)
        self.occupancy = np.zeros(len(self.beds), dtype=np.int64)

    def free(self) -> np.ndarray:
        return self.beds - self.occupancy

    def admit(self, kinds: Iterable[FacilityKind]) -> int:
        free = self.free()
        for kind in kinds:
            idx = np.flatnonzero((self.kinds == int(kind)) & (free > 0))
            if len(idx):
                f = int(idx[0])
                self.occupancy[f] += 1
                return f
        return -1

    def release(self, facility: int) -> None:
        if facility >= 0:
            if self.occupancy[facility] <= 0:
                raise ValidationError(f"facility {facility} has no patient to release")
            self.occupancy[facility] -= 1

    def copy(self) -> "BedBoard":
        b = BedBoard(self.kinds, self.beds)
        b.occupancy = self.occupancy.copy()
        return b


def route_case(symptomatic: bool, viral_load: float, beds: BedBoard,
               params: PolicyParams = PolicyParams()) -> tuple[MobilityState, int]:
    """Where a newly confirmed case goes, and which facility bed it takes (-1 for none)."""
    if not symptomatic:
        return MobilityState.QUARANTINED, -1
    if viral_load >= params.hospitalization_threshold:
        f = beds.admit(HOSPITAL_PREFERENCE)
        if f >= 0:
            return MobilityState.HOSPITALIZED, f
    return MobilityState.ISOLATED, beds.admit((FacilityKind.ISOLATION_CENTRE,))


# --------------------------------------------------------------------------
# containment zones

def update_containment_zones(ward_active_cases, ward_population, threshold: float,
                             current: Optional[np.ndarray] = None) -> np.ndarray:
    """Locked-ward mask with hysteresis.

    A ward enters when active cases per capita reach ``threshold`` and leaves
    once they fall below half of it.
    """
    if threshold <= 0:
        raise ValidationError("containment threshold must be positive")
    active = np.asarray(ward_active_cases, dtype=float)
    pop = np.asarray(ward_population, dtype=float)
    rate = np.divide(active, pop, out=np.zeros_like(active), where=pop > 0)
    if current is None:
        current = np.zeros(len(active), dtype=bool)
    enter = rate >= threshold
    stay = current & (rate >= threshold / 2)
    return enter | stay


def zone_lockdown(mask: np.ndarray):
    """Ward-list lockdown for a containment mask (1-based ward ids)."""
    from .core_types import Lockdown

    wards = tuple(int(w) + 1 for w in np.flatnonzero(mask))
    return Lockdown("wards", wards) if wards else Lockdown()
