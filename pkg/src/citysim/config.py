"""Scenario configuration: schema, YAML files and named presets.

A config file is YAML with a required ``version`` key and these sections:
``population``, ``disease``, ``mobility``, ``policy``, ``calendar``,
``simulation`` and ``output``. Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .core_types import ConfigurationError, DaySettings, Lockdown, ValidationError
from .disease import DiseaseParams
from .mobility import MobilityParams
from .policy import CalendarBlock, CalendarSpec, PolicyParams
from .population import (
    PopulationConfig, Population, kolkata_sectors, kolkata_wards, load_sector_table, load_ward_table,
    synthesize_population, uniformize,
)

CONFIG_VERSION = 1
DEFAULT_SCALE = 0.01


def _date(value, where: str) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigurationError(f"{where}: expected a YYYY-MM-DD date, got {value!r}") from None


def _plain(value):
    """Tuples to lists, recursively, for YAML output and stable comparison."""
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _check_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{section}: expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigurationError(f"{section}: unknown key(s) {', '.join(unknown)}")


def _params_from(cls, section: str, data: dict):
    names = [f.name for f in dataclasses.fields(cls)]
    _check_keys(section, data, names)
    values = {}
    for k, v in data.items():
        values[k] = tuple(tuple(r) if isinstance(r, list) else r for r in v) if isinstance(v, list) else v
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{section}: {exc}") from None


def _params_to(obj) -> dict:
    return _plain(dataclasses.asdict(obj))


# --------------------------------------------------------------------------
# sections

@dataclass(frozen=True)
class PopulationSection:
    source: str = "kolkata"             # "kolkata" or "files"
    wards: Optional[str] = None
    sectors: Optional[str] = None
    seed: int = 0
    options: PopulationConfig = field(default_factory=PopulationConfig)

    def __post_init__(self):
        if self.source not in ("kolkata", "files"):
            raise ConfigurationError(f"population.source must be 'kolkata' or 'files', got {self.source!r}")
        if self.source == "files" and not (self.wards and self.sectors):
            raise ConfigurationError("population.source 'files' needs both 'wards' and 'sectors' paths")

    @property
    def scale(self) -> float:
        return self.options.scale

    def cache_key(self):
        return (self.source, self.wards, self.sectors, self.seed, repr(self.options))

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"source": self.source}
        if self.wards:
            out["wards"] = self.wards
        if self.sectors:
            out["sectors"] = self.sectors
        out["seed"] = self.seed
        out.update(_params_to(self.options))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PopulationSection":
        own = ("source", "wards", "sectors", "seed")
        opts = [f.name for f in dataclasses.fields(PopulationConfig)]
        _check_keys("population", data, list(own) + opts)
        options = _params_from(PopulationConfig, "population", {k: v for k, v in data.items() if k in opts})
        return cls(**{k: data[k] for k in own if k in data}, options=options)


@dataclass(frozen=True)
class WarmupSection:
    start: dt.date = dt.date(2020, 3, 25)
    target_positive: int = 651
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    counts: tuple[int, ...] = (10, 20, 50, 100, 200)
    tolerance: float = 0.1
    scale_target: bool = True

    def to_dict(self) -> dict:
        return {"start": self.start.isoformat(), "target_positive": self.target_positive,
                "seeds": list(self.seeds), "counts": list(self.counts), "tolerance": self.tolerance,
                "scale_target": self.scale_target}

    @classmethod
    def from_dict(cls, data: dict) -> "WarmupSection":
        _check_keys("simulation.warmup", data, [f.name for f in dataclasses.fields(cls)])
        d = dict(data)
        if "start" in d:
            d["start"] = _date(d["start"], "simulation.warmup.start")
        for k in ("seeds", "counts"):
            if k in d:
                d[k] = tuple(int(v) for v in d[k])
        return cls(**d)


@dataclass(frozen=True)
class SimulationSection:
    start: dt.date = dt.date(2020, 5, 3)
    days: int = 152
    seeds: tuple[int, ...] = tuple(range(10))
    initial_infected: int = 1495
    scale_initial: bool = True
    warmup: Optional[WarmupSection] = None

    def __post_init__(self):
        if self.days < 0:
            raise ConfigurationError("simulation.days must be >= 0")
        if self.initial_infected < 0:
            raise ConfigurationError("simulation.initial_infected must be >= 0")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("simulation.seeds must be distinct")

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=self.days - 1)

    def to_dict(self) -> dict:
        out = {"start": self.start.isoformat(), "days": self.days, "seeds": list(self.seeds),
               "initial_infected": self.initial_infected, "scale_initial": self.scale_initial}
        if self.warmup is not None:
            out["warmup"] = self.warmup.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationSection":
        _check_keys("simulation", data, [f.name for f in dataclasses.fields(cls)])
        d = dict(data)
        if "start" in d:
            d["start"] = _date(d["start"], "simulation.start")
        if "seeds" in d:
            d["seeds"] = tuple(int(s) for s in d["seeds"])
        if d.get("warmup") is not None:
            d["warmup"] = WarmupSection.from_dict(d["warmup"])
        return cls(**d)


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    trace: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "OutputSection":
        _check_keys("output", data, ["dir", "trace"])
        return cls(**data)


def _setting_value(name: str, value):
    if name == "lockdown":
        return Lockdown.parse(value).to_value()
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return value


def calendar_from_dict(data: dict) -> CalendarSpec:
    _check_keys("calendar", data, ["defaults", "blocks"])
    defaults = {k: _setting_value(k, v) for k, v in (data.get("defaults") or {}).items()}
    blocks = []
    for i, raw in enumerate(data.get("blocks") or []):
        where = f"calendar.blocks[{i}]"
        if not isinstance(raw, dict) or "start" not in raw or "end" not in raw:
            raise ConfigurationError(f"{where}: needs 'start' and 'end'")
        settings = {k: _setting_value(k, v) for k, v in raw.items() if k not in ("start", "end", "weekdays")}
        weekdays = raw.get("weekdays")
        try:
            blocks.append(CalendarBlock(_date(raw["start"], where), _date(raw["end"], where), settings,
                                        tuple(weekdays) if weekdays is not None else None))
        except ValidationError as exc:
            raise ConfigurationError(f"{where}: {exc}") from None
    try:
        return CalendarSpec(defaults, tuple(blocks))
    except ValidationError as exc:
        raise ConfigurationError(f"calendar: {exc}") from None


def calendar_to_dict(cal: CalendarSpec) -> dict:
    blocks = []
    for b in cal.blocks:
        row: dict[str, Any] = {"start": b.start.isoformat(), "end": b.end.isoformat()}
        if b.weekdays is not None:
            row["weekdays"] = list(b.weekdays)
        row.update(_plain(b.settings))
        blocks.append(row)
    return {"defaults": _plain(dict(cal.defaults)), "blocks": blocks}


# --------------------------------------------------------------------------
# scenario

SECTIONS = ("version", "name", "population", "disease", "mobility", "policy", "calendar", "simulation", "output")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    population: PopulationSection = field(default_factory=PopulationSection)
    disease: DiseaseParams = field(default_factory=DiseaseParams)
    mobility: MobilityParams = field(default_factory=MobilityParams)
    policy: PolicyParams = field(default_factory=PolicyParams)
    calendar: CalendarSpec = field(default_factory=CalendarSpec)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    output: OutputSection = field(default_factory=OutputSection)
    version: int = CONFIG_VERSION

    def __post_init__(self):
        # every simulated day must resolve to valid settings
        self.check_calendar()

    def check_calendar(self) -> None:
        sim = self.simulation
        first = sim.warmup.start if sim.warmup is not None else sim.start
        span = (sim.start - first).days + sim.days
        for i in range(span):
            day = first + dt.timedelta(days=i)
            try:
                self.calendar.settings_on(day)
            except (ValidationError, TypeError) as exc:
                raise ConfigurationError(f"calendar on {day}: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "version": self.version, "name": self.name,
            "population": self.population.to_dict(), "disease": _params_to(self.disease),
            "mobility": _params_to(self.mobility), "policy": _params_to(self.policy),
            "calendar": calendar_to_dict(self.calendar), "simulation": self.simulation.to_dict(),
            "output": dataclasses.asdict(self.output),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        _check_keys("config", data, SECTIONS)
        if "version" not in data:
            raise ConfigurationError("config: missing required key 'version'")
        if data["version"] != CONFIG_VERSION:
            raise ConfigurationError(f"config: unsupported version {data['version']!r} (expected {CONFIG_VERSION})")
        return cls(
            name=str(data.get("name", "custom")),
            population=PopulationSection.from_dict(data.get("population") or {}),
            disease=_params_from(DiseaseParams, "disease", data.get("disease") or {}),
            mobility=_params_from(MobilityParams, "mobility", data.get("mobility") or {}),
            policy=_params_from(PolicyParams, "policy", data.get("policy") or {}),
            calendar=calendar_from_dict(data.get("calendar") or {}),
            simulation=SimulationSection.from_dict(data.get("simulation") or {}),
            output=OutputSection.from_dict(data.get("output") or {}),
            version=data["version"],
        )

    # convenience modifiers -------------------------------------------------

    def with_scale(self, scale: float) -> "ScenarioConfig":
        opts = dataclasses.replace(self.population.options, scale=scale)
        return dataclasses.replace(self, population=dataclasses.replace(self.population, options=opts))

    def with_seeds(self, seeds) -> "ScenarioConfig":
        return dataclasses.replace(self, simulation=dataclasses.replace(self.simulation, seeds=tuple(seeds)))

    def with_uniform_wards(self, uniform: bool = True) -> "ScenarioConfig":
        opts = dataclasses.replace(self.population.options, uniform_wards=uniform)
        return dataclasses.replace(self, population=dataclasses.replace(self.population, options=opts))

    def replace_path(self, path: str, value) -> "ScenarioConfig":
        """Set one value by dotted path, e.g. ``disease.base_transmission_rate``.

        ``calendar.<setting>`` forces a setting on every day;
        ``calendar.<setting>@YYYY-MM`` sets it for one calendar month.
        """
        d = self.to_dict()
        section, _, key = path.partition(".")
        if not key:
            raise ConfigurationError(f"override path {path!r} needs a section and a key")
        if section == "calendar":
            name, _, month = key.partition("@")
            if month:
                first = _date(f"{month}-01", path)
                nxt = (first.replace(day=28) + dt.timedelta(days=4)).replace(day=1)
                d["calendar"]["blocks"].append({"start": first.isoformat(),
                                                "end": (nxt - dt.timedelta(days=1)).isoformat(), name: value})
                return ScenarioConfig.from_dict(d)
            cal = self.calendar.override(**{name: _setting_value(name, value)})
            return dataclasses.replace(self, calendar=cal)
        if section not in d or not isinstance(d[section], dict):
            raise ConfigurationError(f"override path {path!r}: unknown section {section!r}")
        node = d[section]
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigurationError(f"override path {path!r}: unknown key {p!r}")
            node = node[p]
        if parts[-1] not in node and section != "population":
            raise ConfigurationError(f"override path {path!r}: unknown key {parts[-1]!r}")
        node[parts[-1]] = value
        return ScenarioConfig.from_dict(d)

    def build_population(self) -> Population:
        p = self.population
        if p.source == "kolkata":
            wards, sectors = kolkata_wards(), kolkata_sectors()
        else:
            wards, sectors = load_ward_table(p.wards), load_sector_table(p.sectors)
        return synthesize_population(wards, sectors, p.options, p.seed)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"{path}: no such config file")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    try:
        return ScenarioConfig.from_dict(data)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(f"# citysim scenario '{cfg.name}'\n" + dump_config(cfg))


# --------------------------------------------------------------------------
# presets

KOLKATA_START = dt.date(2020, 5, 3)
KOLKATA_DAYS = 152
WARMUP_START = dt.date(2020, 3, 25)

# State-wide lockdown days announced for July to September.
STATE_LOCKDOWN_DAYS = (
    "2020-07-23", "2020-07-25", "2020-07-29", "2020-07-31", "2020-08-05", "2020-08-08", "2020-08-20",
    "2020-08-21", "2020-08-27", "2020-08-28", "2020-08-31", "2020-09-07", "2020-09-11", "2020-09-12",
)

KOLKATA_DEFAULTS = {
    "lockdown": "none", "education_closed": True, "compliance_rate": 0.8, "external_ifp": 0.01,
    "transport_fraction": 0.01, "sd_factor": 1.0, "tracing_efficacy_workplace": 0.6,
    "tracing_efficacy_transport": 0.3, "test_capacity": 1000, "containment_zones": False,
}


def _block(start, end, **settings) -> dict:
    return {"start": start, "end": end, **settings}


def _kolkata_blocks() -> list[dict]:
    return [
        _block("2020-03-25", "2020-05-14", compliance_rate=0.5),
        _block("2020-05-15", "2020-07-31", compliance_rate=0.8),
        _block("2020-08-01", "2020-12-31", compliance_rate=0.4),
        _block("2020-07-01", "2020-08-31", external_ifp=[0.01, 0.25]),
        _block("2020-09-01", "2020-12-31", external_ifp=0.25),
        _block("2020-06-01", "2020-08-31", transport_fraction=0.05),
        _block("2020-09-01", "2020-12-31", transport_fraction=0.085),
        _block("2020-05-16", "2020-05-31", test_capacity=2500),
        _block("2020-06-01", "2020-06-30", test_capacity=5000),
        _block("2020-07-01", "2020-07-31", test_capacity=7500),
        _block("2020-08-01", "2020-12-31", test_capacity=10000),
        _block("2020-03-25", "2020-05-31", lockdown="citywide"),
        _block("2020-06-01", "2020-12-31", containment_zones=True),
    ] + [_block(d, d, lockdown="citywide") for d in STATE_LOCKDOWN_DAYS]


def _base(name: str, blocks: list[dict], defaults: Optional[dict] = None, start=KOLKATA_START,
          days=KOLKATA_DAYS) -> dict:
    return {
        "version": CONFIG_VERSION, "name": name,
        "population": {"source": "kolkata", "scale": DEFAULT_SCALE},
        "calendar": {"defaults": {**KOLKATA_DEFAULTS, **(defaults or {})}, "blocks": blocks},
        "simulation": {"start": start.isoformat(), "days": days, "seeds": list(range(10))},
    }


def _no_restrictions(blocks: list[dict]) -> list[dict]:
    """Kolkata blocks minus lockdowns and containment."""
    out = []
    for b in blocks:
        rest = {k: v for k, v in b.items() if k not in ("lockdown", "containment_zones")}
        if set(rest) - {"start", "end"}:
            out.append(rest)
    return out


def _month_ends(start: dt.date, end: dt.date) -> list[tuple[str, str]]:
    out = []
    y, m = start.year, start.month
    while dt.date(y, m, 1) <= end:
        nxt = dt.date(y + (m == 12), m % 12 + 1, 1)
        last = nxt - dt.timedelta(days=1)
        out.append(((last - dt.timedelta(days=6)).isoformat(), last.isoformat()))
        y, m = nxt.year, nxt.month
    return out


FIXED_PRESETS = ("kolkata-2020", "weekend-lockdown", "monthly-lockdown", "education-only", "no-lockdown")
FAMILIES = {
    "long-lockdown-D": (30, 45, 60, 75, 90),
    "transport-F": (0.01, 0.05, 0.085, 0.1),
    "tracing-W-T": [(w, t) for w in (60, 70, 80, 90, 100) for t in (30, 40, 50, 60, 70, 100)],
    "compliance-C": (0.8, 0.7, 0.6, 0.5, 0.4, 0.3),
    "sdfactor-S": (2, 1.8, 1.6, 1.4, 1.2, 1, 0.8, 0.6, 0.4),
}


def preset_names() -> list[str]:
    names = list(FIXED_PRESETS)
    for fam, values in FAMILIES.items():
        stem = fam.rsplit("-", 2 if fam == "tracing-W-T" else 1)[0]
        for v in values:
            names.append(f"{stem}-{v[0]}-{v[1]}" if isinstance(v, tuple) else f"{stem}-{v}")
    return names


def _number(text: str, name: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"unknown preset {name!r}") from None


def preset(name: str) -> ScenarioConfig:
    """Resolve a named scenario; parameterised families accept any numeric value."""
    kolkata = _kolkata_blocks()
    relaxed = _no_restrictions(kolkata)
    open_all = {"education_closed": False, "transport_fraction": 0.17}
    end = KOLKATA_START + dt.timedelta(days=KOLKATA_DAYS - 1)
    if name == "kolkata-2020":
        data = _base(name, kolkata)
    elif name == "no-lockdown":
        data = _base(name, [b for b in relaxed if "transport_fraction" not in b], open_all)
    elif name == "education-only":
        data = _base(name, [b for b in relaxed if "transport_fraction" not in b],
                     {**open_all, "education_closed": True})
    elif name == "weekend-lockdown":
        data = _base(name, relaxed + [_block("2020-03-25", end.isoformat(), weekdays=[5, 6], lockdown="citywide")])
    elif name == "monthly-lockdown":
        data = _base(name, relaxed + [_block(a, b, lockdown="citywide") for a, b in _month_ends(KOLKATA_START, end)])
    elif m := re.fullmatch(r"long-lockdown-(\d+)", name):
        days = int(m.group(1))
        if days < 1:
            raise ConfigurationError(f"unknown preset {name!r}")
        start = dt.date(2020, 5, 1)
        last = start + dt.timedelta(days=days - 1)
        blocks = [b for b in relaxed if "external_ifp" not in b]
        blocks.append(_block(start.isoformat(), last.isoformat(), lockdown="citywide"))
        data = _base(name, blocks, {"external_ifp": 0.0}, start=start)
    elif name.startswith("transport-"):
        f = _number(name[len("transport-"):], name)
        data = _base(name, [b for b in kolkata if "transport_fraction" not in b], {"transport_fraction": f})
    elif m := re.fullmatch(r"tracing-([\d.]+)-([\d.]+)", name):
        w, t = _number(m.group(1), name) / 100, _number(m.group(2), name) / 100
        data = _base(name, kolkata, {"tracing_efficacy_workplace": w, "tracing_efficacy_transport": t})
    elif name.startswith("compliance-"):
        c = _number(name[len("compliance-"):], name)
        data = _base(name, [b for b in kolkata if "compliance_rate" not in b], {"compliance_rate": c})
    elif name.startswith("sdfactor-"):
        s = _number(name[len("sdfactor-"):], name)
        data = _base(name, kolkata, {"sd_factor": s})
    else:
        raise ConfigurationError(f"unknown preset {name!r}; run 'citysim presets' for the list")
    try:
        return ScenarioConfig.from_dict(data)
    except ConfigurationError as exc:
        raise ConfigurationError(f"preset {name!r}: {exc}") from None


def warmup_for(cfg: ScenarioConfig, target_positive: int = 651, **kw) -> ScenarioConfig:
    """Add a reverse-seeding warm-up from the lockdown start to ``cfg``."""
    return dataclasses.replace(cfg, simulation=dataclasses.replace(
        cfg.simulation, warmup=WarmupSection(target_positive=target_positive, **kw)))
