import dataclasses

import pytest

from citysim.config import preset
from citysim.population import PopulationConfig, kolkata_sectors, kolkata_wards, synthesize_population

SMALL_SCALE = 0.002


@pytest.fixture(scope="session")
def wards():
    return kolkata_wards()


@pytest.fixture(scope="session")
def sectors():
    return kolkata_sectors()


@pytest.fixture(scope="session")
def small_pop(wards, sectors):
    return synthesize_population(wards, sectors, PopulationConfig(scale=SMALL_SCALE), seed=3)


@pytest.fixture()
def small_cfg():
    cfg = preset("kolkata-2020").with_scale(SMALL_SCALE).with_seeds([0])
    return dataclasses.replace(cfg, simulation=dataclasses.replace(cfg.simulation, days=30))


# acceptance reporting: one pass/fail line per criterion in the terminal summary

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture()
def criterion(request):
    """Record ``(number, passed, detail)`` for the acceptance summary."""
    def record(number: int, passed: bool, detail: str) -> bool:
        request.config.stash[_CRITERIA][number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(_CRITERIA, {})
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in rows:
            ok, detail = rows[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
