"""Disease progression and pairwise transmission.

Every function accepts scalars; the ``*_arrays`` variants are the vectorised
kernels the engine runs over the whole population, and the scalar versions
are thin wrappers around them so both paths share one implementation.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .core_types import (
    ConfigurationError, DiseaseState, DomainError, MobilityState, ValidationError, VirusState,
)

# Probability that a symptomatic case dies, per age group: (no comorbidity, comorbidity).
DEFAULT_DEATH_TABLE = (
    (0.0002, 0.0005), (0.0002, 0.0005), (0.0005, 0.001), (0.001, 0.003), (0.003, 0.008),
    (0.008, 0.02), (0.02, 0.05), (0.05, 0.10), (0.10, 0.20), (0.15, 0.25), (0.20, 0.30),
)


@dataclass(frozen=True)
class DiseaseParams:
    beta_a: float = 2.0
    beta_b: float = 5.0
    symptomatic_threshold: float = 0.3
    incubation_days: int = 5
    peak_mean_days: float = 7.0
    peak_sd_days: float = 2.0
    recovery_mean_days: float = 14.0
    recovery_sd_days: float = 3.0
    base_transmission_rate: float = 0.003
    asymptomatic_infectiousness: float = 0.5
    death_prob_table: tuple = DEFAULT_DEATH_TABLE

    def __post_init__(self):
        table = tuple(tuple(float(p) for p in row) for row in self.death_prob_table)
        object.__setattr__(self, "death_prob_table", table)
        if self.beta_a <= 0 or self.beta_b <= 0:
            raise ValidationError("Beta shape parameters must be positive")
        if not 0 < self.symptomatic_threshold < 1:
            raise ValidationError("symptomatic_threshold must lie in (0, 1)")
        if self.incubation_days < 0 or int(self.incubation_days) != self.incubation_days:
            raise ValidationError("incubation_days must be a non-negative integer")
        if min(self.peak_sd_days, self.recovery_sd_days) < 0:
            raise ValidationError("standard deviations must be >= 0")
        if min(self.peak_mean_days, self.recovery_mean_days) <= 0:
            raise ValidationError("mean durations must be positive")
        if self.base_transmission_rate < 0:
            raise ValidationError("base_transmission_rate must be >= 0")
        if not 0 <= self.asymptomatic_infectiousness <= 1:
            raise ValidationError("asymptomatic_infectiousness must lie in [0, 1]")
        if any(len(row) != 2 or not all(0 <= p <= 1 for p in row) for row in table):
            raise ValidationError("death_prob_table rows must be (p, p_comorbid) probabilities")

    def death_probability(self, age_group, comorbidity) -> np.ndarray:
        table = np.asarray(self.death_prob_table)
        g = np.asarray(age_group)
        if np.any(g < 0) or np.any(g >= len(table)):
            raise ConfigurationError(f"death_prob_table has no entry for age group {g}")
        return table[g, np.asarray(comorbidity, dtype=np.int64)]


class Outcome(enum.Enum):
    RECOVERS = "recovers"
    DIES = "dies"


@dataclass(frozen=True)
class Courseplan:
    """Day offsets (from the infection day) of one infection's course."""

    symptomatic: bool
    peak_day_offset: int
    recovery_or_death_day_offset: int
    onset_day_offset: int = 0
    dies: bool = False

    def with_outcome(self, outcome: Outcome) -> "Courseplan":
        if outcome is Outcome.DIES:
            return replace(self, dies=True, recovery_or_death_day_offset=self.peak_day_offset)
        return replace(self, dies=False)


# --------------------------------------------------------------------------
# sampling

def viral_load_from_uniform(params: DiseaseParams, u):
    """Inverse-CDF transform of uniforms into Beta(beta_a, beta_b) viral loads."""
    u = np.asarray(u, dtype=float)
    if params.beta_a == 1.0 and params.beta_b == 1.0:
        return u.copy()
    return special.betaincinv(params.beta_a, params.beta_b, u)


def sample_viral_load(params: DiseaseParams, rng: np.random.Generator) -> float:
    return float(viral_load_from_uniform(params, rng.random()))


def course_offsets(params: DiseaseParams, z_peak, z_recovery):
    """Peak and recovery offsets from standard-normal draws (rounded, >= 1 day each)."""
    peak_len = np.maximum(1, np.rint(params.peak_mean_days + params.peak_sd_days * np.asarray(z_peak)))
    rec_len = np.maximum(1, np.rint(params.recovery_mean_days + params.recovery_sd_days * np.asarray(z_recovery)))
    peak = params.incubation_days + peak_len.astype(np.int64)
    return peak, peak + rec_len.astype(np.int64)


def classify_course(viral_load: float, params: DiseaseParams, rng: np.random.Generator) -> Courseplan:
    if not 0.0 <= viral_load <= 1.0:
        raise DomainError(f"viral load must lie in [0, 1], got {viral_load}")
    z = rng.standard_normal(2)
    peak, rec = course_offsets(params, z[0], z[1])
    return Courseplan(
        symptomatic=bool(viral_load >= params.symptomatic_threshold),
        peak_day_offset=int(peak), recovery_or_death_day_offset=int(rec),
        onset_day_offset=int(params.incubation_days),
    )


def resolve_outcome(age_group: int, comorbidity: bool, params: DiseaseParams,
                    rng: np.random.Generator) -> Outcome:
    p = float(params.death_probability(age_group, comorbidity))
    return Outcome.DIES if rng.random() < p else Outcome.RECOVERS


# --------------------------------------------------------------------------
# transmission

def infection_hazard(distance_m, duration_h, sd_factor, rate):
    distance_m = np.asarray(distance_m, dtype=float)
    sd_factor = np.asarray(sd_factor, dtype=float)
    if np.any(distance_m <= 0):
        raise DomainError("contact distance must be positive")
    if np.any(sd_factor <= 0):
        raise DomainError("sd_factor must be positive")
    d = sd_factor * distance_m
    return rate * np.asarray(duration_h, dtype=float) / (d * d)


def transmission_probability(distance_m, duration_h, sd_factor, params: DiseaseParams | float):
    """Per-contact infection probability ``1 - exp(-rate * hours / (sd * distance)^2)``."""
    rate = params.base_transmission_rate if isinstance(params, DiseaseParams) else float(params)
    p = -np.expm1(-infection_hazard(distance_m, duration_h, sd_factor, rate))
    return float(p) if np.ndim(p) == 0 else p


# --------------------------------------------------------------------------
# state machine

INFECTED_CODES = (int(VirusState.INFECTED_SYMPTOMATIC), int(VirusState.INFECTED_ASYMPTOMATIC))
CONFINED_CODES = (int(MobilityState.QUARANTINED), int(MobilityState.ISOLATED), int(MobilityState.HOSPITALIZED))


@dataclass
class Transitions:
    """Indices of agents whose virus state changed in one progression step."""

    onset: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    recovered: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    died: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def advance_arrays(virus, mobility, infected_on, symptomatic, onset, peak, end, dies, today) -> Transitions:
    """Advance infected agents to ``today`` in place.

    ``onset``, ``peak`` and ``end`` are absolute days. Recovered agents leave
    quarantine, isolation and hospital; the dead keep their last mobility state.
    """
    infected = np.isin(virus, INFECTED_CODES)
    idx = np.flatnonzero(infected)
    dying = idx[dies[idx] & (today >= peak[idx])]
    recovering = idx[~dies[idx] & (today >= end[idx])]
    virus[dying] = VirusState.DEAD
    virus[recovering] = VirusState.RECOVERED
    rel = recovering[np.isin(mobility[recovering], CONFINED_CODES)]
    mobility[rel] = MobilityState.FREE
    still = idx[(virus[idx] != VirusState.DEAD) & (virus[idx] != VirusState.RECOVERED)]
    show = still[symptomatic[still] & (today >= onset[still])]
    onset_now = show[virus[show] == VirusState.INFECTED_ASYMPTOMATIC]
    virus[show] = VirusState.INFECTED_SYMPTOMATIC
    return Transitions(onset=onset_now, recovered=recovering, died=dying)


def advance_agent(state: DiseaseState, plan: Courseplan | None, today: int) -> DiseaseState:
    """Single-agent form of :func:`advance_arrays`."""
    if plan is None or not state.virus.infected:
        return state
    start = state.infected_on
    virus = np.array([int(state.virus)], dtype=np.int8)
    mobility = np.array([int(state.mobility)], dtype=np.int8)
    advance_arrays(
        virus, mobility, np.array([start]), np.array([plan.symptomatic]),
        np.array([start + plan.onset_day_offset]), np.array([start + plan.peak_day_offset]),
        np.array([start + plan.recovery_or_death_day_offset]), np.array([plan.dies]), today,
    )
    return replace(state, virus=VirusState(int(virus[0])), mobility=MobilityState(int(mobility[0])),
                   peak_day=start + plan.peak_day_offset,
                   recovery_day=start + plan.recovery_or_death_day_offset)


def infect(state: DiseaseState, day: int, viral_load: float, plan: Courseplan) -> DiseaseState:
    """Move a healthy agent into infection on ``day`` (asymptomatic until onset)."""
    if state.virus != VirusState.HEALTHY:
        raise ValidationError("only healthy agents can be infected")
    virus = (VirusState.INFECTED_SYMPTOMATIC if plan.symptomatic and plan.onset_day_offset == 0
             else VirusState.INFECTED_ASYMPTOMATIC)
    return replace(state, virus=virus, infected_on=day, viral_load=float(viral_load),
                   peak_day=day + plan.peak_day_offset,
                   recovery_day=day + plan.recovery_or_death_day_offset)
