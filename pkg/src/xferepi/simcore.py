"""Stochastic SIRD chain-binomial simulator.

Each time step draws the number of infections, recoveries, deaths and
waning-immunity events from binomial distributions.  Under the default
``"hazard"`` convention an event with per-step rate ``r`` happens with
probability ``1 - exp(-r)``; the ``"literal"`` convention uses ``exp(-r)``
directly as the event probability.

Recoveries and deaths compete for the same infectious pool and are drawn
jointly from a trinomial over {recover, die, stay}, which can never remove
more people than are infectious.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .rng import make_rng

SOURCE_LABEL = "source"

CONVENTIONS = ("hazard", "literal")


@dataclass(frozen=True)
class SirdParams:
    beta: float
    gamma: float
    zeta: float
    mu: float
    max_rate: float = 10.0

    def __post_init__(self):
        for name in ("beta", "gamma", "zeta", "mu"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            if v >= self.max_rate:
                raise ValueError(f"{name}={v} exceeds the rate bound {self.max_rate}")


# reference endemic disease
SOURCE_PARAMS = SirdParams(beta=0.191, gamma=0.05, zeta=0.008, mu=0.0294)
TARGET_BETAS = (0.25, 0.3, 0.35)
TARGET_GAMMAS = (0.01, 0.1, 0.15)


@dataclass(frozen=True)
class SirdState:
    s: int
    i: int
    r: int
    d: int
    t: int = 0

    def __post_init__(self):
        if min(self.s, self.i, self.r, self.d) < 0:
            raise ValueError(f"negative compartment in {self}")

    @property
    def n(self) -> int:
        return self.s + self.i + self.r + self.d

    @classmethod
    def initial(cls, population_n: int, initial_infected: int) -> "SirdState":
        return cls(s=population_n - initial_infected, i=initial_infected, r=0, d=0, t=0)


@dataclass(frozen=True)
class SimConfig:
    population_n: int = 10_000
    initial_infected: int = 10
    t_max: int = 1000
    replicates: int = 100
    seed: int = 0
    convention: str = "hazard"
    kind: str = "incidence"

    def __post_init__(self):
        if self.population_n < 1 or self.population_n > 2**31:
            raise ValueError("population_n must be in [1, 2**31]")
        if not 0 <= self.initial_infected <= self.population_n:
            raise ValueError("initial_infected must lie in [0, population_n]")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        if self.kind not in ("incidence", "prevalence"):
            raise ValueError("kind must be 'incidence' or 'prevalence'")


@dataclass(frozen=True)
class EpidemicSeries:
    disease: str
    replicate: int | str
    values: np.ndarray
    kind: str = "incidence"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 1:
            raise ValueError("series values must be one-dimensional")
        if v.size and (v.min() < 0 or not np.all(np.isfinite(v))):
            raise ValueError(f"series {self.id} has negative or non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def id(self) -> str:
        return f"{self.disease}/{self.replicate}"

    def __len__(self) -> int:
        return len(self.values)


def event_probabilities(params: SirdParams, infected: int, population_n: int,
                        convention: str = "hazard"):
    """Per-individual probabilities (infect, recover, die, wane) for one step.

    Recovery and death are rescaled when their sum would reach 1 so that the
    pair always leaves a positive probability of staying infectious.
    """
    force = params.beta * infected / population_n
    if convention == "hazard":
        p_inf = -math.expm1(-force)
        p_rec = -math.expm1(-params.gamma)
        p_die = -math.expm1(-params.mu)
        p_wane = -math.expm1(-params.zeta)
        total = -math.expm1(-(params.gamma + params.mu))
    else:
        p_inf = math.exp(-force)
        p_rec = math.exp(-params.gamma)
        p_die = math.exp(-params.mu)
        p_wane = math.exp(-params.zeta)
        total = 1.0 - 1e-9
    if p_rec + p_die >= 1.0:
        scale = total / (p_rec + p_die)
        p_rec *= scale
        p_die *= scale
    return p_inf, p_rec, p_die, p_wane


def _draw_events(state: SirdState, params: SirdParams, rng: np.random.Generator,
                 population_n: int, convention: str):
    p_inf, p_rec, p_die, p_wane = event_probabilities(params, state.i, population_n,
                                                      convention)
    infections = int(rng.binomial(state.s, p_inf)) if state.i else 0
    # trinomial over {recover, die, stay}, drawn as recover then die | not recovered
    recoveries = int(rng.binomial(state.i, p_rec))
    rest = state.i - recoveries
    deaths = int(rng.binomial(rest, min(1.0, p_die / (1.0 - p_rec)))) if rest else 0
    waning = int(rng.binomial(state.r, p_wane))
    return infections, recoveries, deaths, waning


def step(state: SirdState, params: SirdParams, rng: np.random.Generator, *,
         population_n: int | None = None, convention: str = "hazard") -> SirdState:
    """Advance one time step."""
    return step_with_events(state, params, rng, population_n=population_n,
                            convention=convention)[0]


def step_with_events(state: SirdState, params: SirdParams, rng: np.random.Generator, *,
                     population_n: int | None = None, convention: str = "hazard"):
    """Like :func:`step` but also returns the (infections, recoveries, deaths,
    waning) event counts."""
    n = state.n if population_n is None else population_n
    inf, rec, die, wane = _draw_events(state, params, rng, n, convention)
    new = SirdState(
        s=state.s - inf + wane,
        i=state.i + inf - rec - die,
        r=state.r + rec - wane,
        d=state.d + die,
        t=state.t + 1,
    )
    return new, (inf, rec, die, wane)


def simulate_trajectory(config: SimConfig, params: SirdParams,
                        rng: np.random.Generator) -> np.ndarray:
    """Full (t_max, 6) trajectory: columns s, i, r, d, new infections, t.

    Row ``k`` is the state after step ``k + 1``; the event column holds the
    infections drawn during that step.
    """
    n = config.population_n
    s, i, r, d = n - config.initial_infected, config.initial_infected, 0, 0
    out = np.empty((config.t_max, 6), dtype=np.int64)
    p_rec, p_die, p_wane = event_probabilities(params, 0, n, config.convention)[1:]
    p_die_given = min(1.0, p_die / (1.0 - p_rec))
    literal = config.convention == "literal"
    binomial = rng.binomial
    for k in range(config.t_max):
        if i:
            force = params.beta * i / n
            p_inf = math.exp(-force) if literal else -math.expm1(-force)
            inf = int(binomial(s, p_inf))
        else:
            inf = 0
        rec = int(binomial(i, p_rec))
        rest = i - rec
        die = int(binomial(rest, p_die_given)) if rest else 0
        wane = int(binomial(r, p_wane))
        s += wane - inf
        i += inf - rec - die
        r += rec - wane
        d += die
        out[k] = (s, i, r, d, inf, k + 1)
    return out


def simulate(config: SimConfig, params: SirdParams, *, disease: str = SOURCE_LABEL,
             replicate: int = 0, split: str = "train",
             rng: np.random.Generator | None = None) -> EpidemicSeries:
    """Simulate one replicate and return its incidence (or prevalence) series.

    The random stream is derived from ``(config.seed, disease, split,
    replicate)`` unless ``rng`` is given.
    """
    if rng is None:
        rng = make_rng(config.seed, "sim", disease, split, replicate)
    traj = simulate_trajectory(config, params, rng)
    values = traj[:, 4] if config.kind == "incidence" else traj[:, 1]
    return EpidemicSeries(disease=disease, replicate=replicate,
                          values=values.astype(np.int64), kind=config.kind)


def target_label(beta: float, gamma: float) -> str:
    return f"beta={beta:g};gamma={gamma:g}"


def parse_target_label(label: str) -> tuple[float, float]:
    parts = dict(kv.split("=") for kv in label.split(";"))
    return float(parts["beta"]), float(parts["gamma"])


@dataclass(frozen=True)
class DiseaseSets:
    label: str
    params: SirdParams
    train: tuple[EpidemicSeries, ...]
    test: tuple[EpidemicSeries, ...]


def simulate_set(config: SimConfig, params: SirdParams, disease: str, split: str):
    return tuple(
        simulate(config, params, disease=disease, replicate=k, split=split)
        for k in range(config.replicates)
    )


def generate_grid(source: SirdParams, beta_values, gamma_values,
                  config: SimConfig, include_source: bool = True) -> list[DiseaseSets]:
    """Source disease plus one target disease per (beta, gamma) pair.

    Targets keep the source's waning and death rates.  Every disease gets an
    independent train and test set of ``config.replicates`` series.
    """
    beta_values = list(beta_values)
    gamma_values = list(gamma_values)
    if not beta_values or not gamma_values:
        raise ValueError("beta_values and gamma_values must be non-empty")
    specs = [(SOURCE_LABEL, source)] if include_source else []
    for b, g in itertools.product(beta_values, gamma_values):
        specs.append((target_label(b, g), replace(source, beta=b, gamma=g)))
    return [
        DiseaseSets(label, params,
                    simulate_set(config, params, label, "train"),
                    simulate_set(config, params, label, "test"))
        for label, params in specs
    ]


def check_trajectory(traj: np.ndarray, population_n: int) -> None:
    """Raise AssertionError if conservation or monotonicity is violated."""
    comps = traj[:, :4]
    if np.any(comps < 0):
        raise AssertionError("negative compartment")
    if not np.all(comps.sum(axis=1) == population_n):
        raise AssertionError("s+i+r+d != N")
    if np.any(np.diff(traj[:, 3]) < 0):
        raise AssertionError("cumulative deaths decreased")
    if np.any(np.diff(traj[:, 5]) <= 0):
        raise AssertionError("time did not advance")


def series_to_rows(series_list):
    """Yield ``(disease, replicate, t, cases)`` rows for CSV export."""
    for s in series_list:
        for t, v in enumerate(s.values):
            yield s.disease, s.replicate, t, int(v)
