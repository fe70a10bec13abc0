import dataclasses
import datetime as dt

import pytest
import yaml

from citysim.config import (
    ScenarioConfig, dump_config, load_config, preset, preset_names, save_config, warmup_for,
)
from citysim.core_types import ConfigurationError

D = dt.date


def settings(cfg, day):
    return cfg.calendar.settings_on(day)


@pytest.mark.parametrize("name", preset_names())
def test_every_preset_round_trips(tmp_path, name):
    cfg = preset(name)
    path = tmp_path / "s.yaml"
    save_config(cfg, path)
    again = load_config(path)
    assert again == cfg
    start, days = cfg.simulation.start, cfg.simulation.days
    assert again.calendar.resolve(start, days) == cfg.calendar.resolve(start, days)


def test_compliance_preset():
    cfg = preset("compliance-0.8")
    days = cfg.calendar.resolve(cfg.simulation.start, cfg.simulation.days)
    assert {d.compliance_rate for d in days.days} == {0.8}
    assert {d.compliance_rate for d in preset("compliance-0.35").calendar.resolve(D(2020, 5, 3), 152).days} == {0.35}


def test_long_lockdown_preset():
    cfg = preset("long-lockdown-30")
    assert cfg.simulation.start == D(2020, 5, 1)
    cal = cfg.calendar.resolve(cfg.simulation.start, cfg.simulation.days)
    for i, day in enumerate(cal.days):
        date = cal.date_of(i)
        assert day.education_closed
        assert day.external_ifp == 0.0
        expected = "citywide" if date <= D(2020, 5, 30) else "none"
        assert day.lockdown.kind == expected, date


def test_no_lockdown_preset():
    cfg = preset("no-lockdown")
    cal = cfg.calendar.resolve(cfg.simulation.start, cfg.simulation.days)
    assert {d.lockdown.kind for d in cal.days} == {"none"}
    assert not any(d.containment_zones for d in cal.days)


def test_weekend_and_monthly_presets():
    wk = preset("weekend-lockdown")
    for i in range(14):
        day = D(2020, 6, 1) + dt.timedelta(days=i)
        assert (settings(wk, day).lockdown.kind == "citywide") == (day.weekday() >= 5)
    mo = preset("monthly-lockdown")
    assert settings(mo, D(2020, 6, 24)).lockdown.kind == "citywide"
    assert settings(mo, D(2020, 6, 23)).lockdown.kind == "none"
    assert settings(mo, D(2020, 7, 31)).lockdown.kind == "citywide"


def test_numeric_families():
    assert settings(preset("transport-0.085"), D(2020, 7, 1)).transport_fraction == 0.085
    tr = settings(preset("tracing-70-40"), D(2020, 7, 1))
    assert (tr.tracing_efficacy_workplace, tr.tracing_efficacy_transport) == (0.7, 0.4)
    assert settings(preset("sdfactor-1.4"), D(2020, 7, 1)).sd_factor == 1.4
    assert "tracing-100-100" in preset_names() and "long-lockdown-90" in preset_names()


def test_kolkata_schedule():
    cfg = preset("kolkata-2020")
    assert settings(cfg, D(2020, 5, 10)).compliance_rate == 0.5
    assert settings(cfg, D(2020, 5, 20)).compliance_rate == 0.8
    assert settings(cfg, D(2020, 8, 15)).compliance_rate == 0.4
    assert settings(cfg, D(2020, 6, 10)).external_ifp == 0.01
    assert settings(cfg, D(2020, 9, 10)).external_ifp == 0.25
    assert 0.01 < settings(cfg, D(2020, 8, 1)).external_ifp < 0.25
    assert settings(cfg, D(2020, 9, 10)).transport_fraction == 0.085
    tr = settings(cfg, D(2020, 7, 1))
    assert (tr.tracing_efficacy_workplace, tr.tracing_efficacy_transport) == (0.6, 0.3)


@pytest.mark.parametrize("name", ["nope", "compliance-x", "long-lockdown-0", "tracing-a-b"])
def test_unknown_presets(name):
    with pytest.raises(ConfigurationError):
        preset(name)


def test_schema_rejections():
    good = preset("kolkata-2020").to_dict()
    bad = dict(good)
    del bad["version"]
    with pytest.raises(ConfigurationError, match="version"):
        ScenarioConfig.from_dict(bad)
    with pytest.raises(ConfigurationError, match="unsupported version"):
        ScenarioConfig.from_dict({**good, "version": 99})
    with pytest.raises(ConfigurationError, match="colour"):
        ScenarioConfig.from_dict({**good, "colour": "red"})
    with pytest.raises(ConfigurationError, match="disease"):
        ScenarioConfig.from_dict({**good, "disease": {"beta_q": 1}})
    with pytest.raises(ConfigurationError, match="blocks"):
        ScenarioConfig.from_dict({**good, "calendar": {"blocks": [{"start": "2020-05-01"}]}})
    with pytest.raises(ConfigurationError):
        ScenarioConfig.from_dict({**good, "calendar": {"defaults": {"compliance_rate": 2}}})


def test_load_errors_name_the_file(tmp_path):
    missing = tmp_path / "missing.yaml"
    with pytest.raises(ConfigurationError, match="missing.yaml"):
        load_config(missing)
    p = tmp_path / "bad.yaml"
    p.write_text("version: 1\nsimulation: {days: -3}\n")
    with pytest.raises(ConfigurationError, match="bad.yaml"):
        load_config(p)
    p.write_text(": : :\n")
    with pytest.raises(ConfigurationError, match="bad.yaml"):
        load_config(p)


def test_replace_path():
    cfg = preset("kolkata-2020")
    c2 = cfg.replace_path("disease.base_transmission_rate", 0.01)
    assert c2.disease.base_transmission_rate == 0.01
    c3 = cfg.replace_path("calendar.compliance_rate", 0.3)
    assert settings(c3, D(2020, 8, 20)).compliance_rate == 0.3
    c4 = cfg.replace_path("calendar.external_ifp@2020-06", 0.2)
    assert settings(c4, D(2020, 6, 15)).external_ifp == 0.2
    assert settings(c4, D(2020, 7, 15)).external_ifp == settings(cfg, D(2020, 7, 15)).external_ifp
    c5 = cfg.replace_path("population.scale", 0.005)
    assert c5.population.scale == 0.005
    with pytest.raises(ConfigurationError):
        cfg.replace_path("disease.nonsense", 1)
    with pytest.raises(ConfigurationError):
        cfg.replace_path("nowhere.x", 1)


def test_modifiers_and_warmup_round_trip(tmp_path):
    cfg = warmup_for(preset("kolkata-2020").with_scale(0.02).with_seeds([4, 5]).with_uniform_wards(), 651)
    assert cfg.population.scale == 0.02 and cfg.simulation.seeds == (4, 5)
    assert cfg.population.options.uniform_wards
    text = dump_config(cfg)
    assert ScenarioConfig.from_dict(yaml.safe_load(text)) == cfg


def test_files_population_source(tmp_path):
    w = tmp_path / "w.csv"
    s = tmp_path / "s.csv"
    w.write_text("ward_id,population,density\n1,300,1000\n2,200,500\n")
    s.write_text("sector,workers,centers,hours,gap_m\nHotel,40,4,8,1\n")
    data = preset("kolkata-2020").to_dict()
    data["population"] = {"source": "files", "wards": str(w), "sectors": str(s), "scale": 1.0}
    cfg = ScenarioConfig.from_dict(data)
    pop = cfg.build_population()
    assert len(pop) == 500 and pop.city.ward_count == 2
    with pytest.raises(ConfigurationError):
        ScenarioConfig.from_dict({**data, "population": {"source": "files"}})


def test_every_simulated_day_must_resolve():
    cfg = preset("kolkata-2020")
    bad = dataclasses.replace(cfg.calendar, defaults={**cfg.calendar.defaults, "sd_factor": -1.0})
    with pytest.raises(ConfigurationError, match="2020-"):
        dataclasses.replace(cfg, calendar=bad)
