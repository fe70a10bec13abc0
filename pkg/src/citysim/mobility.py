"""Daily schedules and the contacts they produce.

Per-agent decisions (compliance, visits, rides, trips out of the city) use
counter-based draws keyed by ``(seed, stream, day, agent)``, so a schedule for
one agent can be computed without touching anyone else. The only
population-level step is the cap on public-transport riders.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as rngmod
from .core_types import DaySettings, MobilityState, Setting, ValidationError, VirusState
from .population import EDUCATION, Population

HOME_SETTINGS = (Setting.HOME,)


@dataclass(frozen=True)
class MobilityParams:
    contacts_per_workplace: int = 10
    household_distance: float = 1.0
    commute_hours: float = 1.0
    vehicle_capacity: int = 20
    transport_distance: float = 0.5
    transport_baseline: float = 0.17
    visit_probability: float = 0.2
    visit_contacts: int = 5
    visit_hours: float = 1.0
    visit_density_exponent: float = 0.5
    visit_distance_clip: tuple[float, float] = (0.5, 2.0)
    care_contacts: int = 2
    care_hours: float = 1.0
    care_distance: float = 1.0
    traveler_fraction: float = 0.001

    def __post_init__(self):
        if self.contacts_per_workplace < 0 or self.contacts_per_workplace % 2:
            raise ValidationError("contacts_per_workplace must be a non-negative even number")
        if self.vehicle_capacity < 1:
            raise ValidationError("vehicle_capacity must be >= 1")
        for name in ("household_distance", "transport_distance", "care_distance", "transport_baseline"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("visit_probability", "traveler_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.commute_hours + self.visit_hours > 24:
            raise ValidationError("commute and visit hours exceed a day")
        object.__setattr__(self, "visit_distance_clip", tuple(float(v) for v in self.visit_distance_clip))


@dataclass(frozen=True)
class Contact:
    agent_a: int
    agent_b: int
    setting: Setting
    duration_h: float
    distance_m: float
    day: int

    def __post_init__(self):
        if self.agent_a == self.agent_b:
            raise ValidationError("an agent cannot contact itself")
        if not 0 <= self.duration_h <= 24:
            raise ValidationError("contact duration must lie in [0, 24] hours")
        if self.distance_m <= 0:
            raise ValidationError("contact distance must be positive")


@dataclass(frozen=True)
class DailySchedule:
    agent: int
    entries: tuple[tuple[int, Setting, float], ...]
    used_transport: bool = False

    def __post_init__(self):
        if sum(h for _, _, h in self.entries) > 24 + 1e-9:
            raise ValidationError("schedule exceeds 24 hours")

    @property
    def settings(self) -> list[Setting]:
        return [s for _, s, _ in self.entries]


@dataclass
class DayPlan:
    """Vectorised schedules for a set of agents (``ids``) on one day."""

    ids: np.ndarray
    compliant: np.ndarray
    traveling: np.ndarray
    at_home: np.ndarray          # co-present with family at home
    home_hours: np.ndarray
    work_place: np.ndarray       # workplace index or -1
    work_hours: np.ndarray
    visit_place: np.ndarray
    rides: np.ndarray
    facility: np.ndarray         # facility index (into city.fac_*) or -1


@dataclass
class ContactArrays:
    a: np.ndarray
    b: np.ndarray
    setting: np.ndarray
    duration: np.ndarray
    distance: np.ndarray

    def __len__(self) -> int:
        return len(self.a)

    @classmethod
    def empty(cls) -> "ContactArrays":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros(0, np.int8), np.zeros(0), np.zeros(0))

    @classmethod
    def concat(cls, parts: list["ContactArrays"]) -> "ContactArrays":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("a", "b", "setting", "duration", "distance")))

    def take(self, idx) -> "ContactArrays":
        return ContactArrays(self.a[idx], self.b[idx], self.setting[idx], self.duration[idx], self.distance[idx])

    def canonical(self) -> "ContactArrays":
        lo, hi = np.minimum(self.a, self.b), np.maximum(self.a, self.b)
        out = ContactArrays(lo, hi, self.setting, self.duration, self.distance)
        return out.take(np.lexsort((out.setting, out.b, out.a)))

    def to_contacts(self, day: int) -> list[Contact]:
        return [Contact(int(a), int(b), Setting(int(s)), float(t), float(d), day)
                for a, b, s, t, d in zip(self.a, self.b, self.setting, self.duration, self.distance)]


# --------------------------------------------------------------------------
# draws

def draw_compliance(agent: int, compliance_rate: float, day: int, seed: int) -> bool:
    """Whether ``agent`` follows the policy on ``day`` (its own counter substream)."""
    if not 0 <= compliance_rate <= 1:
        raise ValidationError("compliance_rate must lie in [0, 1]")
    return bool(rngmod.uniform(seed, "compliance", day, [agent])[0] < compliance_rate)


def compliance_mask(ids, compliance_rate: float, day: int, seed: int) -> np.ndarray:
    return rngmod.uniform(seed, "compliance", day, ids) < compliance_rate


def select_travelers(free_ids, fraction: float, day: int, seed: int) -> np.ndarray:
    free_ids = np.asarray(free_ids, dtype=np.int64)
    return free_ids[rngmod.uniform(seed, "travel", day, free_ids) < fraction]


def external_infection(travelers, external_ifp: float, rng: np.random.Generator) -> np.ndarray:
    """Travelers infected outside the city, each independently with ``external_ifp``."""
    if not 0 <= external_ifp <= 1:
        raise ValidationError("external_ifp must lie in [0, 1]")
    travelers = np.asarray(travelers, dtype=np.int64)
    if external_ifp == 0 or len(travelers) == 0:
        return travelers[:0]
    return travelers[rng.random(len(travelers)) < external_ifp]


# --------------------------------------------------------------------------
# schedules

def _restricted(pop: Population, ids: np.ndarray, settings: DaySettings, zone_mask: Optional[np.ndarray]):
    if settings.lockdown.kind == "citywide":
        return np.ones(len(ids), dtype=bool)
    locked = np.zeros(pop.city.ward_count, dtype=bool)
    if settings.lockdown.kind == "wards":
        w = np.asarray(settings.lockdown.wards, dtype=np.int64) - 1
        locked[w[(w >= 0) & (w < len(locked))]] = True
    if zone_mask is not None:
        locked |= zone_mask
    return locked[pop.ward[ids]]


def plan_day(pop: Population, day: int, settings: DaySettings, mobility: np.ndarray, alive: np.ndarray,
             seed: int, params: MobilityParams = MobilityParams(), zone_mask: Optional[np.ndarray] = None,
             facility: Optional[np.ndarray] = None, ids: Optional[np.ndarray] = None,
             cap_riders: bool = True) -> DayPlan:
    """Sample the day's movements for ``ids`` (default: everyone).

    ``mobility``, ``alive`` and ``facility`` are indexed by agent id.
    """
    if ids is None:
        ids = np.arange(len(pop), dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    n = len(ids)
    mob = mobility[ids]
    live = alive[ids]
    fac = facility[ids] if facility is not None else np.full(n, -1, dtype=np.int64)
    free = live & (mob == MobilityState.FREE)

    compliant = compliance_mask(ids, settings.compliance_rate, day, seed)
    obey = free & compliant & _restricted(pop, ids, settings, zone_mask)
    traveling = free & ~obey & (rngmod.uniform(seed, "travel", day, ids) < params.traveler_fraction)
    out = free & ~traveling

    wp = pop.workplace[ids]
    has_wp = wp >= 0
    c = pop.city
    if c.workplace_count:
        wp_safe = np.where(has_wp, wp, 0)
        essential = has_wp & c.wp_essential[wp_safe]
        hours = c.wp_hours[wp_safe]
        if settings.education_closed and EDUCATION in c.sectors.names:
            open_wp = ~(c.wp_sector[wp_safe] == c.sector_index(EDUCATION))
        else:
            open_wp = np.ones(n, dtype=bool)
    else:
        essential = open_wp = np.zeros(n, dtype=bool)
        hours = np.zeros(n)
    attends = out & has_wp & open_wp & (~obey | essential)
    work_place = np.where(attends, wp, -1)
    work_hours = np.where(attends, hours, 0.0)

    visiting = out & ~obey & (rngmod.uniform(seed, "visit", day, ids) < params.visit_probability)
    slots = pop.visiting[ids] if pop.visiting.shape[1] else np.full((n, 1), -1)
    n_valid = (slots >= 0).sum(axis=1)
    pick = np.minimum((rngmod.uniform(seed, "visit_place", day, ids) * np.maximum(n_valid, 1)).astype(np.int64),
                      np.maximum(n_valid - 1, 0))
    place = slots[np.arange(n), pick]
    visit_place = np.where(visiting & (n_valid > 0), place, -1)

    ride_p = min(1.0, settings.transport_fraction / params.transport_baseline)
    rides = (pop.uses_transport[ids] & ((work_place >= 0) | (visit_place >= 0)) & ~obey
             & (rngmod.uniform(seed, "ride", day, ids) < ride_p))
    if cap_riders:
        limit = int(np.floor(settings.transport_fraction * len(pop)))
        rider_idx = np.flatnonzero(rides)
        if len(rider_idx) > limit:
            key = rngmod.uniform(seed, "ride_cap", day, ids[rider_idx])
            drop = rider_idx[np.argsort(key, kind="stable")[limit:]]
            rides[drop] = False

    away = work_hours + np.where(visit_place >= 0, params.visit_hours, 0.0) + np.where(rides, params.commute_hours, 0.0)
    confined_home = live & (mob == MobilityState.QUARANTINED)
    at_home = (free & ~traveling) | confined_home
    home_hours = np.where(at_home, np.maximum(24.0 - away, 0.0), 0.0)
    hosp = live & (mob == MobilityState.HOSPITALIZED)
    iso = live & (mob == MobilityState.ISOLATED)
    in_facility = np.where((hosp | iso) & (fac >= 0), fac, -1)
    return DayPlan(ids=ids, compliant=compliant, traveling=traveling, at_home=at_home, home_hours=home_hours,
                   work_place=work_place, work_hours=work_hours, visit_place=visit_place, rides=rides,
                   facility=in_facility)


def sample_schedule(pop: Population, agent: int, settings: DaySettings, mobility_state: MobilityState,
                    day: int, seed: int, params: MobilityParams = MobilityParams(),
                    zone_mask: Optional[np.ndarray] = None, facility: int = -1,
                    alive: bool = True) -> DailySchedule:
    """Schedule for a single agent.

    Identical to that agent's row of :func:`plan_day` except that the
    population-wide rider cap is not applied.
    """
    n = len(pop)
    mobility = np.zeros(n, dtype=np.int8)
    mobility[agent] = int(mobility_state)
    alive_arr = np.ones(n, dtype=bool)
    alive_arr[agent] = alive
    fac = np.full(n, -1, dtype=np.int64)
    fac[agent] = facility
    plan = plan_day(pop, day, settings, mobility, alive_arr, seed, params, zone_mask, fac,
                    ids=np.array([agent]), cap_riders=False)
    return schedule_from_plan(pop, plan, 0, params)


def schedule_from_plan(pop: Population, plan: DayPlan, row: int,
                       params: MobilityParams = MobilityParams()) -> DailySchedule:
    agent = int(plan.ids[row])
    home = int(pop.family_id[agent])
    c = pop.city
    if plan.facility[row] >= 0:
        return DailySchedule(agent, ((int(c.fac_workplace[plan.facility[row]]), Setting.HEALTHCARE, 24.0),))
    if not plan.at_home[row]:
        return DailySchedule(agent, ())
    outings = []
    wp = int(plan.work_place[row])
    if wp >= 0:
        setting = Setting.SCHOOL if _is_education(pop, wp) else Setting.WORKPLACE
        outings.append((wp, setting, float(plan.work_hours[row])))
    vp = int(plan.visit_place[row])
    if vp >= 0:
        outings.append((vp, Setting.VISIT, params.visit_hours))
    if not outings:
        return DailySchedule(agent, ((home, Setting.HOME, 24.0),))
    h = float(plan.home_hours[row])
    entries = [(home, Setting.HOME, h / 2)] + outings + [(home, Setting.HOME, h - h / 2)]
    return DailySchedule(agent, tuple(entries), bool(plan.rides[row]))


def _is_education(pop: Population, wp: int) -> bool:
    names = pop.city.sectors.names
    return EDUCATION in names and pop.city.wp_sector[wp] == names.index(EDUCATION)


# --------------------------------------------------------------------------
# contacts

@dataclass
class ContactContext:
    """Static per-population data reused every day."""

    family_a: np.ndarray
    family_b: np.ndarray
    visit_factor: np.ndarray     # per-workplace multiplier on visit distance
    education_sector: int

    @classmethod
    def build(cls, pop: Population, params: MobilityParams = MobilityParams()) -> "ContactContext":
        fa, fb = pop.family_pairs()
        c = pop.city
        dens = c.ward_density()
        pops = c.ward_table.populations.astype(float)
        area = np.where(dens > 0, pops / np.where(dens > 0, dens, 1), 0.0)
        city_density = pops.sum() / area.sum() if area.sum() > 0 else 1.0
        lo, hi = params.visit_distance_clip
        ward_factor = np.clip((city_density / np.where(dens > 0, dens, city_density)) ** params.visit_density_exponent, lo, hi)
        edu = c.sector_index(EDUCATION) if EDUCATION in c.sectors.names else -1
        return cls(fa, fb, ward_factor[c.wp_ward] if c.workplace_count else np.zeros(0), edu)


def ring_pairs(groups: np.ndarray, members: np.ndarray, keys: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Contacts inside groups: each member meets ``k`` others on a random ring.

    Members of a group are ordered by ``keys`` and joined to the ``k/2``
    neighbours on each side; groups of ``k+1`` or fewer become complete graphs.
    Every pair appears once.
    """
    if len(members) == 0 or k == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    order = np.lexsort((keys, groups))
    g = groups[order]
    m = members[order]
    starts_flag = np.r_[True, g[1:] != g[:-1]]
    starts = np.flatnonzero(starts_flag)
    sizes = np.diff(np.r_[starts, len(g)])
    start_of = np.repeat(starts, sizes)
    size_of = np.repeat(sizes, sizes)
    pos = np.arange(len(g)) - start_of
    a_parts, b_parts = [], []
    for off in range(1, k // 2 + 1):
        sel = np.flatnonzero(2 * off < size_of)
        if len(sel) == 0:
            break
        a_parts.append(m[sel])
        b_parts.append(m[start_of[sel] + (pos[sel] + off) % size_of[sel]])
    # complete graphs of even size need the diameter once
    sel = np.flatnonzero((size_of % 2 == 0) & (size_of - 1 <= k) & (pos < size_of // 2))
    if len(sel):
        a_parts.append(m[sel])
        b_parts.append(m[start_of[sel] + pos[sel] + size_of[sel] // 2])
    if not a_parts:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(a_parts), np.concatenate(b_parts)


def clique_pairs(groups: np.ndarray, members: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All pairs within each group (members assumed grouped contiguously)."""
    a_parts, b_parts = [], []
    for off in range(1, len(members)):
        same = groups[off:] == groups[:-off]
        if not same.any():
            break
        idx = np.flatnonzero(same)
        a_parts.append(members[idx])
        b_parts.append(members[idx + off])
    if not a_parts:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(a_parts), np.concatenate(b_parts)


def vehicle_groups(riders: np.ndarray, ward: np.ndarray, capacity: int, day: int, seed: int) -> np.ndarray:
    """Vehicle index per rider: riders of a ward fill vehicles of ``capacity`` in random order."""
    if len(riders) == 0:
        return np.zeros(0, dtype=np.int64)
    key = rngmod.uniform(seed, "vehicle", day, riders)
    order = np.lexsort((key, ward))
    w = ward[order]
    starts = np.flatnonzero(np.r_[True, w[1:] != w[:-1]])
    sizes = np.diff(np.r_[starts, len(w)])
    pos = np.arange(len(w)) - np.repeat(starts, sizes)
    per_ward_vehicles = -(-sizes // capacity)
    offset = np.repeat(np.r_[0, np.cumsum(per_ward_vehicles)[:-1]], sizes)
    out = np.empty(len(riders), dtype=np.int64)
    out[order] = offset + pos // capacity
    return out


def generate_contacts(pop: Population, plan: DayPlan, day: int, seed: int,
                      params: MobilityParams = MobilityParams(), ctx: Optional[ContactContext] = None,
                      canonical: bool = True, relevant: Optional[np.ndarray] = None) -> ContactArrays:
    """All contacts implied by the day's plan.

    ``plan`` must cover the whole population. Distances are physical
    distances before any distancing factor is applied. With a ``relevant``
    agent mask only contacts touching a relevant agent are returned; they are
    identical to the matching subset of the unfiltered output.
    """
    if ctx is None:
        ctx = ContactContext.build(pop, params)
    c = pop.city
    n = len(pop)
    at_home = np.zeros(n, dtype=bool)
    at_home[plan.ids] = plan.at_home
    home_hours = np.zeros(n)
    home_hours[plan.ids] = plan.home_hours
    parts = []

    # home
    fa, fb = ctx.family_a, ctx.family_b
    if relevant is not None:
        touch = relevant[fa] | relevant[fb]
        fa, fb = fa[touch], fb[touch]
    both = at_home[fa] & at_home[fb]
    fa, fb = fa[both], fb[both]
    dur = np.minimum(home_hours[fa], home_hours[fb])
    keep = dur > 0
    parts.append(ContactArrays(fa[keep], fb[keep], np.full(keep.sum(), Setting.HOME, np.int8),
                               dur[keep], np.full(keep.sum(), params.household_distance)))

    # workplaces and schools
    att = np.flatnonzero(plan.work_place >= 0)
    ids_att = plan.ids[att]
    wp_att = plan.work_place[att]
    ring_ids, ring_wp = ids_att, wp_att
    if relevant is not None and len(ids_att):
        hot = np.zeros(c.workplace_count, dtype=bool)
        hot[wp_att[relevant[ids_att]]] = True
        sub = hot[wp_att]
        ring_ids, ring_wp = ids_att[sub], wp_att[sub]
    keys = rngmod.uniform(seed, "ring", day, ring_ids)
    a, b = ring_pairs(ring_wp, ring_ids, keys, params.contacts_per_workplace)
    if len(a):
        wp_of = np.full(n, -1, dtype=np.int64)
        wp_of[ids_att] = wp_att
        if relevant is not None:
            touch = relevant[a] | relevant[b]
            a, b = a[touch], b[touch]
        w = wp_of[a]
        setting = np.where(c.wp_sector[w] == ctx.education_sector, Setting.SCHOOL, Setting.WORKPLACE).astype(np.int8)
        parts.append(ContactArrays(a, b, setting, c.wp_hours[w].astype(float), c.wp_gap[w].astype(float)))

    # patients and facility staff
    pat = np.flatnonzero(plan.facility >= 0)
    if len(pat) and params.care_contacts > 0:
        patients = plan.ids[pat]
        fac_wp = c.fac_workplace[plan.facility[pat]]
        staff_order = np.lexsort((ids_att, wp_att))
        staff_wp = wp_att[staff_order]
        staff_ids = ids_att[staff_order]
        lo = np.searchsorted(staff_wp, fac_wp, side="left")
        hi = np.searchsorted(staff_wp, fac_wp, side="right")
        cnt = hi - lo
        has = cnt > 0
        for j in range(params.care_contacts):
            u = rngmod.uniform(seed, f"care{j}", day, patients[has])
            pa = patients[has]
            pb = staff_ids[lo[has] + (u * cnt[has]).astype(np.int64)]
            if relevant is not None:
                touch = relevant[pa] | relevant[pb]
                pa, pb = pa[touch], pb[touch]
            parts.append(ContactArrays(pa, pb, np.full(len(pa), Setting.HEALTHCARE, np.int8),
                                       np.full(len(pa), params.care_hours), np.full(len(pa), params.care_distance)))

    # visits
    vis = np.flatnonzero(plan.visit_place >= 0)
    if len(vis) and params.visit_contacts > 0:
        visitors = plan.ids[vis]
        vplace = plan.visit_place[vis]
        at_visited = np.isin(wp_att, vplace)
        pool_ids = np.concatenate([visitors, ids_att[at_visited]])
        pool_place = np.concatenate([vplace, wp_att[at_visited]])
        order = np.lexsort((pool_ids, pool_place))
        inv = np.empty(len(order), dtype=np.int64)
        inv[order] = np.arange(len(order))
        sorted_place = pool_place[order]
        sorted_ids = pool_ids[order]
        vpos = inv[: len(visitors)]
        start = np.searchsorted(sorted_place, vplace, side="left")
        size = np.searchsorted(sorted_place, vplace, side="right") - start
        own = vpos - start
        ok = size > 1
        if relevant is not None:
            hot = np.zeros(c.workplace_count, dtype=bool)
            hot[pool_place[relevant[pool_ids]]] = True
            ok &= hot[vplace]
        factor = ctx.visit_factor[vplace] * c.wp_gap[vplace]
        for j in range(params.visit_contacts):
            u = rngmod.uniform(seed, f"visit_contact{j}", day, visitors[ok])
            r = (u * (size[ok] - 1)).astype(np.int64)
            r = r + (r >= own[ok])
            va, vb, vf = visitors[ok], sorted_ids[start[ok] + r], factor[ok]
            if relevant is not None:
                touch = relevant[va] | relevant[vb]
                va, vb, vf = va[touch], vb[touch], vf[touch]
            parts.append(ContactArrays(va, vb, np.full(len(va), Setting.VISIT, np.int8),
                                       np.full(len(va), params.visit_hours), vf))

    # public transport
    rid = np.flatnonzero(plan.rides)
    if len(rid) > 1:
        riders = plan.ids[rid]
        veh = vehicle_groups(riders, pop.ward[riders], params.vehicle_capacity, day, seed)
        if relevant is not None:
            hot = np.zeros(int(veh.max()) + 1, dtype=bool)
            hot[veh[relevant[riders]]] = True
            riders, veh = riders[hot[veh]], veh[hot[veh]]
        order = np.argsort(veh, kind="stable")
        a, b = clique_pairs(veh[order], riders[order])
        if relevant is not None:
            touch = relevant[a] | relevant[b]
            a, b = a[touch], b[touch]
        parts.append(ContactArrays(a, b, np.full(len(a), Setting.TRANSPORT, np.int8),
                                   np.full(len(a), params.commute_hours), np.full(len(a), params.transport_distance)))

    out = ContactArrays.concat(parts)
    return out.canonical() if canonical else out
