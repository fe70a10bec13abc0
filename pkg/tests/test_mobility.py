import numpy as np
import pytest
from hypothesis import given, strategies as st

from citysim import rng as rngmod
from citysim.core_types import DaySettings, MobilityState, Setting, ValidationError
from citysim.mobility import (
    ContactArrays, DayPlan, MobilityParams, clique_pairs, compliance_mask, draw_compliance, external_infection,
    generate_contacts, plan_day, ring_pairs, sample_schedule, vehicle_groups,
)

OPEN = DaySettings(compliance_rate=0.8, transport_fraction=0.17)
LOCKED = DaySettings(lockdown="citywide", compliance_rate=1.0, education_closed=True, transport_fraction=0.17)


def _alive(pop):
    return np.ones(len(pop), dtype=bool)


def _free(pop):
    return np.zeros(len(pop), dtype=np.int8)


def test_compliance_draw_examples():
    assert all(draw_compliance(a, 1.0, 3, 0) for a in range(500))
    assert not any(draw_compliance(a, 0.0, 3, 0) for a in range(500))
    frac = compliance_mask(np.arange(100_000), 0.8, 7, 11).mean()
    assert abs(frac - 0.8) < 0.01
    assert draw_compliance(42, 0.8, 7, 11) == bool(compliance_mask([42], 0.8, 7, 11)[0])
    with pytest.raises(ValidationError):
        draw_compliance(1, 1.2, 0, 0)


def test_external_infection_examples():
    rng = np.random.default_rng(0)
    assert len(external_infection(np.arange(100), 0.0, rng)) == 0
    assert external_infection(np.arange(100), 1.0, rng).tolist() == list(range(100))
    counts = [len(external_infection(np.arange(10_000), 0.25, np.random.default_rng(r))) for r in range(100)]
    assert abs(np.mean(counts) - 2500) / 2500 < 0.05


def test_vehicle_partition():
    riders = np.arange(50)
    ward = np.zeros(50, dtype=np.int64)
    veh = vehicle_groups(riders, ward, 10, 0, 1)
    assert np.bincount(veh).max() <= 10
    order = np.argsort(veh, kind="stable")
    a, b = clique_pairs(veh[order], riders[order])
    assert len(a) == 5 * 45
    assert np.all(veh[a] == veh[b])


def test_vehicles_never_mix_wards():
    riders = np.arange(37)
    ward = riders % 3
    veh = vehicle_groups(riders, ward, 4, 2, 9)
    for v in np.unique(veh):
        assert len(set(ward[veh == v].tolist())) == 1


def test_single_attendee_has_no_contacts():
    a, b = ring_pairs(np.array([5]), np.array([17]), np.array([0.3]), 10)
    assert len(a) == 0


@given(st.lists(st.integers(0, 4), min_size=1, max_size=80), st.sampled_from([0, 2, 4, 10]))
def test_ring_pairs_properties(groups, k):
    groups = np.array(groups)
    members = np.arange(len(groups))
    keys = rngmod.uniform(0, "t", 0, members)
    a, b = ring_pairs(groups, members, keys, k)
    assert np.all(a != b)
    assert np.all(groups[a] == groups[b])
    pairs = set(zip(np.minimum(a, b).tolist(), np.maximum(a, b).tolist()))
    assert len(pairs) == len(a)
    deg = np.bincount(np.r_[a, b], minlength=len(groups))
    assert deg.max(initial=0) <= k
    sizes = np.bincount(groups)
    for m in members:
        assert deg[m] == min(k, sizes[groups[m]] - 1)


def _home_plan(pop):
    n = len(pop)
    ids = np.arange(n)
    neg = np.full(n, -1, dtype=np.int64)
    return DayPlan(ids=ids, compliant=np.ones(n, bool), traveling=np.zeros(n, bool), at_home=np.ones(n, bool),
                   home_hours=np.full(n, 24.0), work_place=neg, work_hours=np.zeros(n), visit_place=neg.copy(),
                   rides=np.zeros(n, bool), facility=neg.copy())


def test_home_contacts_are_family_pairs(small_pop):
    c = generate_contacts(small_pop, _home_plan(small_pop), 0, 1)
    assert set(c.setting.tolist()) == {Setting.HOME}
    assert np.all(small_pop.family_id[c.a] == small_pop.family_id[c.b])
    sizes = np.bincount(small_pop.family_id)
    assert len(c) == int((sizes * (sizes - 1) // 2).sum())
    assert np.all(c.duration == 24.0) and np.all(c.distance == 1.0)
    threes = np.flatnonzero(sizes == 3)
    fam = small_pop.family_id[c.a]
    assert np.all(np.bincount(fam, minlength=len(sizes))[threes] == 3)


def test_schedule_examples(small_pop):
    pop = small_pop
    c = pop.city
    hosp = sample_schedule(pop, 0, OPEN, MobilityState.HOSPITALIZED, 0, 0, facility=0)
    assert hosp.entries == ((int(c.fac_workplace[0]), Setting.HEALTHCARE, 24.0),)
    assert not hosp.used_transport

    wp = pop.workplace
    cand = np.flatnonzero((wp >= 0) & ~c.wp_essential[np.maximum(wp, 0)] & (c.wp_hours[np.maximum(wp, 0)] == 8))
    everyone = DaySettings(compliance_rate=1.0)
    agent = int(cand[0])
    s = sample_schedule(pop, agent, everyone, MobilityState.FREE, 0, 0)
    assert any(p == wp[agent] and h == 8.0 for p, _, h in s.entries)
    assert sum(h for _, _, h in s.entries) <= 24

    home = sample_schedule(pop, agent, LOCKED, MobilityState.FREE, 0, 0)
    assert home.settings == [Setting.HOME]
    quarantined = sample_schedule(pop, agent, OPEN, MobilityState.QUARANTINED, 0, 0)
    assert quarantined.settings == [Setting.HOME]
    away = sample_schedule(pop, agent, OPEN, MobilityState.OUT_OF_CITY, 0, 0)
    assert away.entries == ()


def test_schedule_matches_plan_row(small_pop):
    pop = small_pop
    plan = plan_day(pop, 4, OPEN, _free(pop), _alive(pop), 8, cap_riders=False)
    from citysim.mobility import schedule_from_plan

    for agent in range(0, len(pop), 97):
        assert sample_schedule(pop, agent, OPEN, MobilityState.FREE, 4, 8) == schedule_from_plan(pop, plan, agent)


def test_lockdown_contacts_restricted(small_pop):
    pop = small_pop
    plan = plan_day(pop, 0, LOCKED, _free(pop), _alive(pop), 2)
    con = generate_contacts(pop, plan, 0, 2)
    assert set(con.setting.tolist()) <= {Setting.HOME, Setting.WORKPLACE, Setting.HEALTHCARE}
    work = con.setting == Setting.WORKPLACE
    assert np.all(pop.city.wp_essential[pop.workplace[con.a[work]]])


def test_confined_agents_only_home_or_facility(small_pop):
    pop = small_pop
    n = len(pop)
    mob = _free(pop)
    rng = np.random.default_rng(0)
    conf = rng.choice(n, 200, replace=False)
    mob[conf[:100]] = MobilityState.QUARANTINED
    mob[conf[100:150]] = MobilityState.ISOLATED
    mob[conf[150:]] = MobilityState.HOSPITALIZED
    fac = np.full(n, -1, dtype=np.int64)
    fac[conf[100:]] = rng.integers(0, len(pop.city.fac_kind), 100)
    alive = _alive(pop)
    plan = plan_day(pop, 1, OPEN, mob, alive, 5, facility=fac)
    con = generate_contacts(pop, plan, 1, 5)
    q = np.zeros(n, bool)
    q[conf[:100]] = True
    inst = np.zeros(n, bool)
    inst[conf[100:]] = True
    for side in (con.a, con.b):
        assert np.all(con.setting[q[side]] == Setting.HOME)
        assert np.all(con.setting[inst[side]] == Setting.HEALTHCARE)


def test_dead_agents_have_no_contacts(small_pop):
    pop = small_pop
    alive = _alive(pop)
    alive[::3] = False
    plan = plan_day(pop, 1, OPEN, _free(pop), alive, 5)
    con = generate_contacts(pop, plan, 1, 5)
    assert alive[con.a].all() and alive[con.b].all()


@pytest.mark.parametrize("fraction", [0.01, 0.05, 0.17])
def test_transport_riders_capped(small_pop, fraction):
    pop = small_pop
    s = DaySettings(compliance_rate=0.0, transport_fraction=fraction)
    plan = plan_day(pop, 3, s, _free(pop), _alive(pop), 1)
    assert plan.rides.sum() <= np.floor(fraction * len(pop))
    assert pop.uses_transport[plan.ids[plan.rides]].all()
    con = generate_contacts(pop, plan, 3, 1)
    tr = con.setting == Setting.TRANSPORT
    assert pop.uses_transport[con.a[tr]].all() and pop.uses_transport[con.b[tr]].all()


def test_contacts_deterministic_and_filter_consistent(small_pop):
    pop = small_pop
    plan = plan_day(pop, 6, OPEN, _free(pop), _alive(pop), 13)
    full = generate_contacts(pop, plan, 6, 13)
    again = generate_contacts(pop, plan_day(pop, 6, OPEN, _free(pop), _alive(pop), 13), 6, 13)
    for f in ("a", "b", "setting", "duration", "distance"):
        assert np.array_equal(getattr(full, f), getattr(again, f))
    relevant = np.zeros(len(pop), bool)
    relevant[np.random.default_rng(1).choice(len(pop), 40, replace=False)] = True
    part = generate_contacts(pop, plan, 6, 13, relevant=relevant)
    keep = relevant[full.a] | relevant[full.b]
    sub = full.take(np.flatnonzero(keep))
    for f in ("a", "b", "setting", "duration", "distance"):
        assert np.array_equal(getattr(part, f), getattr(sub, f))
    assert np.all(full.a < full.b)


def test_contact_array_roundtrip():
    c = ContactArrays(np.array([3, 1]), np.array([1, 2]), np.array([0, 1], np.int8),
                      np.array([5.0, 8.0]), np.array([1.0, 0.5]))
    can = c.canonical()
    assert can.a.tolist() == [1, 1] and can.b.tolist() == [2, 3]
    objs = can.to_contacts(4)
    assert objs[0].setting == Setting.WORKPLACE and objs[0].day == 4


def test_params_validation():
    with pytest.raises(ValidationError):
        MobilityParams(contacts_per_workplace=3)
    with pytest.raises(ValidationError):
        MobilityParams(vehicle_capacity=0)
