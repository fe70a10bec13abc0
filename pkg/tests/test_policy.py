import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from citysim.core_types import FacilityKind, MobilityState, Setting, ValidationError, VirusState
from citysim.mobility import ContactArrays
from citysim.policy import (
    BedBoard, CalendarBlock, CalendarSpec, ContactLog, PolicyParams, TestQueue, resolve_policy, route_case,
    run_testing, trace_contacts, trace_many, update_containment_zones, zone_lockdown,
)

D = dt.date


def _contacts(a, b, setting):
    n = len(a)
    return ContactArrays(np.asarray(a), np.asarray(b), np.full(n, setting, np.int8), np.ones(n), np.ones(n))


# calendar -----------------------------------------------------------------

def test_kolkata_calendar_examples():
    from citysim.config import preset

    cal = preset("kolkata-2020")
    resolved = cal.calendar.resolve(cal.simulation.start, cal.simulation.days)
    assert resolve_policy(resolved, D(2020, 5, 20)).compliance_rate == 0.8
    assert resolve_policy(resolved, D(2020, 8, 15)).compliance_rate == 0.4
    for day in range(1, 31):
        assert resolve_policy(resolved, D(2020, 6, day)).external_ifp == 0.01
    assert resolve_policy(resolved, D(2020, 9, 15)).external_ifp == 0.25
    assert resolve_policy(resolved, 0) == resolve_policy(resolved, cal.simulation.start)
    with pytest.raises(ValidationError):
        resolve_policy(resolved, D(2021, 1, 1))
    with pytest.raises(ValidationError):
        resolve_policy(resolved, -1)


def test_interpolated_and_weekday_blocks():
    spec = CalendarSpec({"compliance_rate": 1.0}, (
        CalendarBlock(D(2020, 1, 1), D(2020, 1, 11), {"compliance_rate": [0.0, 1.0]}),
        CalendarBlock(D(2020, 1, 1), D(2020, 1, 31), {"lockdown": "citywide"}, weekdays=(5, 6)),
    ))
    assert spec.settings_on(D(2020, 1, 6)).compliance_rate == pytest.approx(0.5)
    assert spec.settings_on(D(2020, 1, 4)).lockdown.kind == "citywide"   # Saturday
    assert spec.settings_on(D(2020, 1, 6)).lockdown.kind == "none"       # Monday
    assert spec.settings_on(D(2020, 2, 1)).compliance_rate == 1.0


def test_count_scaling_and_override():
    spec = CalendarSpec({"test_capacity": 1000, "compliance_rate": 0.5},
                        (CalendarBlock(D(2020, 1, 1), D(2020, 1, 2), {"compliance_rate": 0.9}),))
    assert spec.settings_on(D(2020, 1, 1), count_scale=0.01).test_capacity == 10
    assert spec.settings_on(D(2020, 1, 1), count_scale=0.0001).test_capacity == 1
    forced = spec.override(compliance_rate=0.3)
    assert forced.settings_on(D(2020, 1, 1)).compliance_rate == 0.3


def test_block_validation():
    with pytest.raises(ValidationError):
        CalendarBlock(D(2020, 2, 1), D(2020, 1, 1))
    with pytest.raises(ValidationError):
        CalendarBlock(D(2020, 1, 1), D(2020, 1, 2), {"bogus": 1})
    with pytest.raises(ValidationError):
        CalendarBlock(D(2020, 1, 1), D(2020, 1, 2), weekdays=(7,))


# testing ------------------------------------------------------------------

def test_queue_priority_example():
    q = TestQueue()
    q.enqueue(range(100, 112), TestQueue.TRACED)
    q.enqueue(range(8), TestQueue.SYMPTOMATIC)
    assert len(q) == 20
    virus = np.zeros(200, dtype=np.int8)
    tested = run_testing(q, 8, virus)
    assert sorted(a for a, _ in tested) == list(range(8))
    assert len(q) == 12


def test_run_testing_examples():
    virus = np.zeros(20, dtype=np.int8)
    virus[:5] = VirusState.INFECTED_SYMPTOMATIC
    q = TestQueue()
    q.enqueue(range(5), TestQueue.SYMPTOMATIC)
    assert run_testing(q, 0, virus) == []
    res = run_testing(q, 10, virus)
    assert sum(pos for _, pos in res) == 5
    with pytest.raises(ValidationError):
        run_testing(q, -1, virus)


def test_testing_is_perfect():
    virus = np.array([0, 1, 2, 3, 4], dtype=np.int8)
    q = TestQueue()
    q.enqueue(range(5), TestQueue.TRACED)
    assert run_testing(q, 5, virus) == [(0, False), (1, True), (2, True), (3, False), (4, False)]


def test_queue_dedup_and_upgrade():
    q = TestQueue()
    q.enqueue([1, 2], TestQueue.TRACED)
    q.enqueue([2, 3], TestQueue.SYMPTOMATIC)
    q.enqueue([3], TestQueue.TRACED)
    assert q.members() == [(2, "symptomatic"), (3, "symptomatic"), (1, "traced")]
    q.discard([1], TestQueue.TRACED)
    assert 1 not in q
    with pytest.raises(ValidationError):
        q.enqueue([4], "whim")


def test_ineligible_entries_skip_without_capacity():
    q = TestQueue()
    q.enqueue(range(6), TestQueue.SYMPTOMATIC)
    eligible = np.array([False, True, False, True, True, True])
    assert [a for a, _ in q.dequeue(2, eligible)] == [1, 3]


@given(st.lists(st.tuples(st.integers(0, 49), st.booleans()), max_size=80), st.integers(0, 60))
def test_tests_never_exceed_capacity(entries, capacity):
    q = TestQueue()
    for a, sym in entries:
        q.enqueue([a], TestQueue.SYMPTOMATIC if sym else TestQueue.TRACED)
    before = len(q)
    out = run_testing(q, capacity, np.zeros(50, dtype=np.int8))
    assert len(out) == min(capacity, before)
    assert len({a for a, _ in out}) == len(out)


# tracing ------------------------------------------------------------------

def _log():
    log = ContactLog(14)
    log.add(0, _contacts([0, 0, 0], [1, 2, 3], Setting.WORKPLACE))
    log.add(1, _contacts([0, 4], [5, 0], Setting.TRANSPORT))
    log.add(2, _contacts([0], [6], Setting.VISIT))
    return log


def test_trace_examples():
    rng = np.random.default_rng(0)
    assert trace_contacts(0, _log(), 1.0, 1.0, rng, 10) == {1, 2, 3, 4, 5}
    assert trace_contacts(0, _log(), 0.0, 0.0, rng, 10, household=[7, 8]) == {7, 8}
    with pytest.raises(ValidationError):
        trace_contacts(0, _log(), 1.5, 0.0, rng, 10)


def test_traced_subset_of_log():
    rng = np.random.default_rng(3)
    log = _log()
    for _ in range(50):
        found = trace_contacts(0, log, 0.5, 0.5, rng, 10)
        assert found <= {1, 2, 3, 4, 5}
    assert trace_contacts(9, log, 1.0, 1.0, rng, 10) == set()


def test_trace_rate_work():
    n = 10_000
    log = ContactLog(14)
    log.add(0, _contacts(np.zeros(n, int), np.arange(1, n + 1), Setting.WORKPLACE))
    rates = [len(trace_many([0], log, 0.6, 0.0, np.random.default_rng(r), n + 1)) / n for r in range(10)]
    assert abs(np.mean(rates) - 0.6) < 0.02
    assert all(abs(r - 0.6) < 0.02 for r in rates)


def test_log_window_expires():
    log = ContactLog(3)
    for d in range(6):
        log.add(d, _contacts([0], [d + 1], Setting.WORKPLACE))
    assert log.window() == [3, 4, 5]
    assert trace_contacts(0, log, 1.0, 1.0, np.random.default_rng(0), 10) == {4, 5, 6}


# routing ------------------------------------------------------------------

def test_route_case_examples():
    beds = BedBoard([FacilityKind.COVID_HOSPITAL, FacilityKind.ISOLATION_CENTRE], [1, 1])
    assert route_case(False, 0.9, beds) == (MobilityState.QUARANTINED, -1)
    assert route_case(True, 0.9, beds) == (MobilityState.HOSPITALIZED, 0)
    assert beds.occupancy.tolist() == [1, 0]
    assert route_case(True, 0.4, beds) == (MobilityState.ISOLATED, 1)
    # every bed taken: overflow isolates at home
    assert route_case(True, 0.9, beds) == (MobilityState.ISOLATED, -1)
    assert beds.occupancy.tolist() == [1, 1]
    beds.release(0)
    assert beds.occupancy.tolist() == [0, 1]
    with pytest.raises(ValidationError):
        beds.release(0)


def test_route_prefers_covid_hospital():
    beds = BedBoard([FacilityKind.HEALTHCARE_CENTRE, FacilityKind.COVID_HOSPITAL], [3, 3])
    assert route_case(True, 0.8, beds)[1] == 1


@given(st.lists(st.tuples(st.booleans(), st.floats(0, 1)), max_size=60))
def test_occupancy_never_exceeds_beds(cases):
    beds = BedBoard([0, 1, 2, 2], [2, 1, 3, 0])
    for sym, vl in cases:
        route_case(sym, vl, beds, PolicyParams())
        assert np.all(beds.occupancy <= beds.beds)


# containment --------------------------------------------------------------

def test_containment_examples():
    pop = np.full(4, 1000)
    assert not update_containment_zones(np.zeros(4), pop, 0.001).any()
    z = update_containment_zones([0, 5, 0, 0], pop, 0.001)
    assert z.tolist() == [False, True, False, False]
    assert zone_lockdown(z).wards == (2,)
    assert zone_lockdown(np.zeros(3, bool)).kind == "none"
    with pytest.raises(ValidationError):
        update_containment_zones([1], [10], 0.0)


def test_hysteresis_trace():
    """A ward oscillating around the threshold enters once and never leaves."""
    thr, pop = 0.001, 10_000
    eps = 0.2
    zone = None
    entries = exits = 0
    prev = False
    for day in range(40):
        rate = thr * (1 + eps if day % 2 else 1 - eps)
        zone = update_containment_zones([rate * pop], [pop], thr, zone)
        entries += bool(zone[0] and not prev)
        exits += bool(prev and not zone[0])
        prev = bool(zone[0])
    assert entries == 1 and exits == 0
    zone = update_containment_zones([0.4 * thr * pop], [pop], thr, zone)
    assert not zone[0]
