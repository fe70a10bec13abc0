"""The daily simulation loop.

A day runs these phases in a fixed order: resolve policy, progress disease,
sample schedules, generate contacts, transmit, external infections,
testing/tracing/routing, containment update, statistics.
"""
from __future__ import annotations

import copy
import datetime as dt
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy import special

from . import rng as rngmod
from .core_types import (
    ConfigurationError, DiseaseState, MobilityState, PolicyCalendar, Setting, VirusState,
)
from .disease import DiseaseParams, advance_arrays, course_offsets, viral_load_from_uniform
from .mobility import ContactArrays, ContactContext, MobilityParams, external_infection, generate_contacts, plan_day
from .policy import (
    BedBoard, ContactLog, PolicyParams, TestQueue, resolve_policy, route_case, run_testing, trace_many,
    update_containment_zones,
)
from .population import Population

if TYPE_CHECKING:
    from .config import ScenarioConfig

log = logging.getLogger(__name__)

METRICS = ("new_infections", "positives", "active", "recovered", "deaths", "tests", "traced", "hospitalized")
M_INDEX = {m: i for i, m in enumerate(METRICS)}
TRACEABLE = (int(Setting.WORKPLACE), int(Setting.SCHOOL), int(Setting.TRANSPORT))
IS, IA = int(VirusState.INFECTED_SYMPTOMATIC), int(VirusState.INFECTED_ASYMPTOMATIC)
HEALTHY, RECOVERED, DEAD = int(VirusState.HEALTHY), int(VirusState.RECOVERED), int(VirusState.DEAD)
NEVER = np.iinfo(np.int64).max // 4


@dataclass
class DailyStats:
    day: int
    date: dt.date
    wards: np.ndarray      # (ward_count, len(METRICS))

    def __getattr__(self, name):
        if name in M_INDEX:
            return int(self.wards[:, M_INDEX[name]].sum())
        raise AttributeError(name)

    def ward(self, metric: str) -> np.ndarray:
        return self.wards[:, M_INDEX[metric]]

    @property
    def city(self) -> np.ndarray:
        return self.wards.sum(axis=0)


@dataclass
class SimState:
    pop: Population
    ctx: ContactContext
    disease: DiseaseParams
    mobility_params: MobilityParams
    policy_params: PolicyParams
    seed: int
    start: dt.date
    day: int
    virus: np.ndarray
    mobility: np.ndarray
    infected_on: np.ndarray
    viral_load: np.ndarray
    symptomatic: np.ndarray
    onset: np.ndarray
    peak: np.ndarray
    end: np.ndarray
    dies: np.ndarray
    known: np.ndarray
    reported: np.ndarray
    release_day: np.ndarray
    facility: np.ndarray
    log: ContactLog
    queue: TestQueue
    beds: BedBoard
    zones: np.ndarray
    cum_positives: int = 0
    events: Optional[list] = None

    @property
    def date(self) -> dt.date:
        return self.start + dt.timedelta(days=self.day)

    @property
    def n(self) -> int:
        return len(self.virus)

    def counts(self) -> dict[str, int]:
        v = self.virus
        return {"H": int((v == HEALTHY).sum()), "IF": int(((v == IS) | (v == IA)).sum()),
                "R": int((v == RECOVERED).sum()), "D": int((v == DEAD).sum())}

    def agent_state(self, i: int) -> DiseaseState:
        inf = self.infected_on[i] >= 0
        return DiseaseState(
            virus=VirusState(int(self.virus[i])), mobility=MobilityState(int(self.mobility[i])),
            infected_on=int(self.infected_on[i]) if inf else None,
            viral_load=float(self.viral_load[i]) if inf else None,
            peak_day=int(self.peak[i]) if inf else None, recovery_day=int(self.end[i]) if inf else None,
        )

    def copy(self, seed: Optional[int] = None) -> "SimState":
        out = copy.copy(self)
        for name in ("virus", "mobility", "infected_on", "viral_load", "symptomatic", "onset", "peak",
                     "end", "dies", "known", "reported", "release_day", "facility", "zones"):
            setattr(out, name, getattr(self, name).copy())
        out.log = self.log.copy()
        out.queue = self.queue.copy()
        out.beds = self.beds.copy()
        out.events = None if self.events is None else []
        if seed is not None:
            out.seed = seed
        return out


def new_state(pop: Population, seed: int, start: dt.date, disease: DiseaseParams = DiseaseParams(),
              mobility_params: MobilityParams = MobilityParams(), policy_params: PolicyParams = PolicyParams(),
              ctx: Optional[ContactContext] = None, record_events: bool = False) -> SimState:
    n = len(pop)
    c = pop.city
    return SimState(
        pop=pop, ctx=ctx or ContactContext.build(pop, mobility_params), disease=disease,
        mobility_params=mobility_params, policy_params=policy_params, seed=int(seed), start=start, day=0,
        virus=np.zeros(n, np.int8), mobility=np.zeros(n, np.int8), infected_on=np.full(n, -1, np.int64),
        viral_load=np.full(n, np.nan), symptomatic=np.zeros(n, bool), onset=np.full(n, NEVER, np.int64),
        peak=np.full(n, NEVER, np.int64), end=np.full(n, NEVER, np.int64), dies=np.zeros(n, bool),
        known=np.zeros(n, bool), reported=np.zeros(n, bool), release_day=np.full(n, NEVER, np.int64), facility=np.full(n, -1, np.int64),
        log=ContactLog(policy_params.contact_log_days), queue=TestQueue(),
        beds=BedBoard(c.fac_kind, c.fac_beds), zones=np.zeros(c.ward_count, bool),
        events=[] if record_events else None,
    )


def _open_unit(u: np.ndarray) -> np.ndarray:
    return np.clip(u, 1e-12, 1 - 1e-12)


def infect_agents(state: SimState, ids: np.ndarray, day: int, sources=None, setting: str = "contact") -> None:
    """Start infections for healthy ``ids`` on ``day``; course drawn from each agent's substream."""
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        return
    p = state.disease
    s = state.seed
    vl = viral_load_from_uniform(p, rngmod.uniform(s, "viral_load", day, ids))
    z_peak = special.ndtri(_open_unit(rngmod.uniform(s, "peak", day, ids)))
    z_rec = special.ndtri(_open_unit(rngmod.uniform(s, "recovery", day, ids)))
    peak, end = course_offsets(p, z_peak, z_rec)
    symptomatic = vl >= p.symptomatic_threshold
    p_death = p.death_probability(state.pop.age_group[ids], state.pop.comorbidity[ids])
    dies = symptomatic & (rngmod.uniform(s, "death", day, ids) < p_death)
    end = np.where(dies, peak, end)
    state.infected_on[ids] = day
    state.viral_load[ids] = vl
    state.symptomatic[ids] = symptomatic
    state.onset[ids] = np.where(symptomatic, day + p.incubation_days, NEVER)
    state.peak[ids] = day + peak
    state.end[ids] = day + end
    state.dies[ids] = dies
    state.virus[ids] = np.where(symptomatic & (p.incubation_days == 0), IS, IA)
    if state.events is not None:
        src = np.full(len(ids), -1) if sources is None else sources
        settings = setting if isinstance(setting, (list, np.ndarray)) else [setting] * len(ids)
        state.events.extend((day, int(a), int(b), str(st)) for a, b, st in zip(src, ids, settings))


def seed_infections(state: SimState, n: int, rng: Optional[np.random.Generator] = None) -> SimState:
    """Infect ``n`` uniformly chosen healthy agents on the current day."""
    healthy = np.flatnonzero(state.virus == HEALTHY)
    if n < 0 or n > len(healthy):
        raise ConfigurationError(f"cannot seed {n} infections among {len(healthy)} healthy agents")
    if n == 0:
        return state
    rng = rng or rngmod.generator(state.seed, "seed_infections", state.day)
    chosen = np.sort(rng.choice(healthy, size=n, replace=False))
    infect_agents(state, chosen, state.day, setting="seed")
    return state


def _release_bed(state: SimState, ids: np.ndarray) -> None:
    for i in ids[state.facility[ids] >= 0]:
        state.beds.release(int(state.facility[i]))
        state.facility[i] = -1


def step_day(state: SimState, calendar: PolicyCalendar) -> tuple[SimState, DailyStats]:
    d = state.day
    date = state.date
    pop = state.pop
    n = state.n
    W = pop.city.ward_count
    pp = state.policy_params
    stats = np.zeros((W, len(METRICS)), dtype=np.int64)

    # 1. policy
    settings = resolve_policy(calendar, date)

    # 2. disease progression
    tr = advance_arrays(state.virus, state.mobility, state.infected_on, state.symptomatic,
                        state.onset, state.peak, state.end, state.dies, d)
    _release_bed(state, tr.recovered)
    _release_bed(state, tr.died)
    state.release_day[tr.recovered] = NEVER
    done_q = np.flatnonzero((state.mobility == MobilityState.QUARANTINED) & (state.release_day <= d))
    state.mobility[done_q] = MobilityState.FREE
    state.release_day[done_q] = NEVER
    state.queue.discard(done_q, TestQueue.TRACED)

    # 3. schedules
    alive = state.virus != DEAD
    zone_mask = state.zones if settings.containment_zones else None
    plan = plan_day(pop, d, settings, state.mobility, alive, state.seed, state.mobility_params,
                    zone_mask, state.facility)
    travelers = plan.ids[plan.traveling]
    state.mobility[travelers] = MobilityState.OUT_OF_CITY

    # 4. contacts; only those touching an infected agent can transmit or be traced
    infected = (state.virus == IS) | (state.virus == IA)
    contacts = generate_contacts(pop, plan, d, state.seed, state.mobility_params, state.ctx,
                                 canonical=False, relevant=infected)

    # 5. transmission (exposure is simultaneous; today's infections transmit from tomorrow)
    infectious = infected & (state.infected_on < d)
    healthy = state.virus == HEALTHY
    a, b = contacts.a, contacts.b
    fwd = infectious[a] & healthy[b]
    bwd = infectious[b] & healthy[a]
    sel = np.flatnonzero(fwd | bwd)
    new_ids = np.zeros(0, dtype=np.int64)
    if len(sel) and state.disease.base_transmission_rate > 0:
        src = np.where(fwd[sel], a[sel], b[sel])
        dst = np.where(fwd[sel], b[sel], a[sel])
        st = contacts.setting[sel]
        rel = np.where(state.virus[src] == IS, 1.0, state.disease.asymptomatic_infectiousness)
        sd = np.where(st == Setting.HOME, 1.0, settings.sd_factor)
        dist = sd * contacts.distance[sel]
        p = -np.expm1(-rel * state.disease.base_transmission_rate * contacts.duration[sel] / (dist * dist))
        hit = rngmod.generator(state.seed, "transmission", d).random(len(sel)) < p
        if hit.any():
            new_ids, first = np.unique(dst[hit], return_index=True)
            names = [Setting(int(x)).name.lower() for x in st[hit][first]] if state.events is not None else "contact"
            infect_agents(state, new_ids, d, sources=src[hit][first], setting=names)
    stats[:, M_INDEX["new_infections"]] += np.bincount(pop.ward[new_ids], minlength=W)

    traceable = np.isin(contacts.setting, TRACEABLE)
    state.log.add(d, contacts.take(np.flatnonzero(traceable)))

    # 6. travelers come back, some infected outside the city
    state.mobility[travelers] = MobilityState.FREE
    exposed = travelers[state.virus[travelers] == HEALTHY]
    ext = external_infection(exposed, settings.external_ifp, rngmod.generator(state.seed, "external", d))
    infect_agents(state, ext, d, setting="external")
    stats[:, M_INDEX["new_infections"]] += np.bincount(pop.ward[ext], minlength=W)

    # 7. testing, routing, tracing
    # symptomatic agents report with a fixed probability on each day of symptoms
    reporters = np.flatnonzero((state.virus == IS) & ~state.known & ~state.reported)
    if len(reporters):
        u = rngmod.uniform(state.seed, "self_report", d, reporters)
        now = reporters[u < pp.self_report_probability]
        state.reported[now] = True
        state.queue.enqueue(now, TestQueue.SYMPTOMATIC)
    eligible = (state.virus != DEAD) & ~state.known
    results = run_testing(state.queue, settings.test_capacity, state.virus, eligible=eligible)
    tested = np.array([i for i, _ in results], dtype=np.int64)
    positives = np.array(sorted(i for i, pos in results if pos), dtype=np.int64)
    stats[:, M_INDEX["tests"]] += np.bincount(pop.ward[tested], minlength=W)
    stats[:, M_INDEX["positives"]] += np.bincount(pop.ward[positives], minlength=W)
    state.cum_positives += len(positives)
    for i in positives:
        state.known[i] = True
        mob, fac = route_case(bool(state.virus[i] == IS), float(state.viral_load[i]), state.beds, pp)
        state.mobility[i] = mob
        state.facility[i] = fac
        state.release_day[i] = NEVER
    if len(positives):
        household = _household_of(pop, positives)
        found = trace_many(positives, state.log, settings.tracing_efficacy_workplace,
                           settings.tracing_efficacy_transport, rngmod.generator(state.seed, "tracing", d), n,
                           household)
        found = found[(state.virus[found] != DEAD) & ~state.known[found]
                      & (state.mobility[found] == MobilityState.FREE)]
        state.mobility[found] = MobilityState.QUARANTINED
        state.release_day[found] = d + pp.quarantine_days
        state.queue.enqueue(found, TestQueue.TRACED)
        stats[:, M_INDEX["traced"]] += np.bincount(pop.ward[found], minlength=W)

    # 8. containment zones
    if settings.containment_zones:
        active_known = state.known & ((state.virus == IS) | (state.virus == IA))
        ward_active = np.bincount(pop.ward[active_known], minlength=W)
        ward_pop = np.bincount(pop.ward, minlength=W)
        state.zones = update_containment_zones(ward_active, ward_pop, pp.containment_threshold, state.zones)
    else:
        state.zones = np.zeros(W, dtype=bool)

    # 9. statistics
    infected_now = (state.virus == IS) | (state.virus == IA)
    stats[:, M_INDEX["active"]] = np.bincount(pop.ward[infected_now], minlength=W)
    stats[:, M_INDEX["recovered"]] = np.bincount(pop.ward[tr.recovered], minlength=W)
    stats[:, M_INDEX["deaths"]] = np.bincount(pop.ward[tr.died], minlength=W)
    hosp = (state.mobility == MobilityState.HOSPITALIZED) & (state.virus != DEAD)
    stats[:, M_INDEX["hospitalized"]] = np.bincount(pop.ward[hosp], minlength=W)

    state.day = d + 1
    return state, DailyStats(d, date, stats)


def _household_of(pop: Population, agents: np.ndarray) -> np.ndarray:
    fams = np.unique(pop.family_id[agents])
    return np.flatnonzero(np.isin(pop.family_id, fams))


def simulate(state: SimState, calendar: PolicyCalendar, days: int) -> np.ndarray:
    """Run ``days`` steps; returns the (days, wards, metrics) stats array."""
    out = np.zeros((days, state.pop.city.ward_count, len(METRICS)), dtype=np.int64)
    for i in range(days):
        _, stats = step_day(state, calendar)
        out[i] = stats.wards
    return out


# --------------------------------------------------------------------------
# replicated runs

@dataclass
class SimOutput:
    start: dt.date
    seeds: list[int]
    replicates: np.ndarray            # (R, days, wards, metrics)
    ward_ids: list[int]
    scale: float = 1.0
    meta: dict = field(default_factory=dict)
    events: dict = field(default_factory=dict)

    @property
    def days(self) -> int:
        return self.replicates.shape[1]

    @property
    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=i) for i in range(self.days)]

    @property
    def mean(self) -> np.ndarray:
        if len(self.seeds) == 0:
            return np.zeros(self.replicates.shape[1:])
        return self.replicates.mean(axis=0)

    def city(self, metric: str, replicate: Optional[int] = None) -> np.ndarray:
        """City-total daily series of ``metric`` (mean over replicates by default)."""
        arr = self.mean if replicate is None else self.replicates[self.seeds.index(replicate)]
        return arr[:, :, M_INDEX[metric]].sum(axis=1)

    def cumulative(self, metric: str, replicate: Optional[int] = None) -> np.ndarray:
        return np.cumsum(self.city(metric, replicate))


class PopulationCache:
    """Memoises synthesised populations by their defining inputs."""

    def __init__(self):
        self._store: dict = {}

    def get(self, cfg: "ScenarioConfig") -> Population:
        key = cfg.population.cache_key()
        if key not in self._store:
            self._store = {key: cfg.build_population()}
        return self._store[key]


_CACHE = PopulationCache()


def _prepare(cfg: "ScenarioConfig", pop: Optional[Population]):
    pop = pop if pop is not None else _CACHE.get(cfg)
    calendar = cfg.calendar.resolve(cfg.simulation.start, cfg.simulation.days, count_scale=pop.scale)
    return pop, calendar


def _initial_count(cfg: "ScenarioConfig", pop: Population) -> int:
    n = cfg.simulation.initial_infected
    return int(round(n * pop.scale)) if cfg.simulation.scale_initial else int(n)


def run_replicate(cfg: "ScenarioConfig", seed: int, pop: Optional[Population] = None,
                  initial: Optional[SimState] = None) -> tuple[np.ndarray, list]:
    pop, calendar = _prepare(cfg, pop)
    if initial is not None:
        state = initial.copy(seed=seed)
        state.events = [] if cfg.output.trace else None
    else:
        state = new_state(pop, seed, cfg.simulation.start, cfg.disease, cfg.mobility, cfg.policy,
                          record_events=cfg.output.trace)
        seed_infections(state, _initial_count(cfg, pop))
    series = simulate(state, calendar, cfg.simulation.days)
    return series, state.events or []


def _replicate_job(args):
    cfg, seed, initial = args
    return run_replicate(cfg, seed, initial=initial)


def run(cfg: "ScenarioConfig", workers: int = 1, pop: Optional[Population] = None) -> SimOutput:
    """One trajectory per configured seed plus their mean.

    Results do not depend on ``workers``: every replicate derives all of its
    randomness from its own seed.
    """
    pop, calendar = _prepare(cfg, pop)
    seeds = list(cfg.simulation.seeds)
    days = cfg.simulation.days
    meta = {"population": len(pop), "scale": pop.scale}
    initial = None
    if cfg.simulation.warmup is not None:
        wu = cfg.simulation.warmup
        res = reverse_seed_init(cfg, wu.target_positive, pop=pop)
        initial = res.state
        meta["warmup"] = {"seed": res.seed, "initial_infected": res.initial_infected,
                          "target": res.target, "achieved_positive": res.achieved,
                          "active": res.active, "within_tolerance": res.within_tolerance}
    if days == 0 or not seeds:
        W = pop.city.ward_count
        return SimOutput(cfg.simulation.start, seeds, np.zeros((len(seeds), days, W, len(METRICS)), np.int64),
                         [r.ward_id for r in pop.city.ward_table.rows], pop.scale, meta)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_replicate_job, [(cfg, s, initial) for s in seeds]))
    else:
        results = [run_replicate(cfg, s, pop, initial) for s in seeds]
    reps = np.stack([r[0] for r in results])
    events = {s: r[1] for s, r in zip(seeds, results) if r[1]}
    return SimOutput(cfg.simulation.start, seeds, reps, [r.ward_id for r in pop.city.ward_table.rows],
                     pop.scale, meta, events)


# --------------------------------------------------------------------------
# reverse seeding

@dataclass
class WarmupResult:
    state: SimState
    seed: int
    initial_infected: int
    target: int
    achieved: int
    active: int
    within_tolerance: bool
    candidates: list = field(default_factory=list)


def select_nearest(candidates: Sequence[tuple], target: float) -> int:
    """Index of the candidate whose count (last element) is closest to ``target``; first wins ties."""
    best, best_err = -1, None
    for i, cand in enumerate(candidates):
        err = abs(cand[-1] - target)
        if best_err is None or err < best_err:
            best, best_err = i, err
    return best


def reverse_seed_init(cfg: "ScenarioConfig", target_positive: int, target_date: Optional[dt.date] = None,
                      seeds: Optional[Sequence[int]] = None, counts: Optional[Sequence[int]] = None,
                      pop: Optional[Population] = None, tolerance: Optional[float] = None) -> WarmupResult:
    """Search warm-up runs for the one whose positives before ``target_date`` match the target.

    Each candidate (seed, initial infections) runs from the warm-up start to
    the day before ``target_date``; the state of the closest candidate is
    returned, ready to continue from ``target_date``. ``target_positive`` is
    a full-city count and is scaled with the population.
    """
    wu = cfg.simulation.warmup
    if wu is None:
        raise ConfigurationError("reverse seeding needs a simulation.warmup block")
    pop = pop if pop is not None else _CACHE.get(cfg)
    target_date = target_date or cfg.simulation.start
    start = wu.start
    if target_date <= start:
        raise ConfigurationError("target date must come after the warm-up start")
    warm_days = (target_date - start).days
    calendar = cfg.calendar.resolve(start, warm_days, count_scale=pop.scale)
    target = int(round(target_positive * pop.scale)) if wu.scale_target else int(target_positive)
    tol = wu.tolerance if tolerance is None else tolerance
    seeds = list(wu.seeds if seeds is None else seeds)
    if counts is None:
        counts = sorted({max(1, int(round(c * pop.scale))) for c in wu.counts})
    if target == 0:
        state = new_state(pop, seeds[0] if seeds else 0, start, cfg.disease, cfg.mobility, cfg.policy)
        state.day = warm_days
        return WarmupResult(state, state.seed, 0, 0, 0, 0, True, [(state.seed, 0, 0)])
    ctx = ContactContext.build(pop, cfg.mobility)
    best: Optional[SimState] = None
    results = []
    for s in seeds:
        for c in counts:
            state = new_state(pop, s, start, cfg.disease, cfg.mobility, cfg.policy, ctx=ctx)
            seed_infections(state, int(c))
            simulate(state, calendar, warm_days)
            results.append((s, int(c), state.cum_positives))
            if select_nearest(results, target) == len(results) - 1:
                best = state
    i = select_nearest(results, target)
    s, c, achieved = results[i]
    ok = abs(achieved - target) <= tol * max(target, 1)
    if not ok:
        log.warning("reverse seeding: best candidate has %d positives, target %d", achieved, target)
    active = best.counts()["IF"]
    return WarmupResult(best, s, c, target, achieved, active, ok, results)
