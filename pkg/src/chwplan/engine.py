"""Monte Carlo simulation of cohorts under a visit policy.

Runs the period loop (select visits -> patients decide -> states advance),
sweeps policies x capacity levels x replications with common random
numbers, summarizes the result table, and provides a small exhaustive
search over visit schedules used as a test oracle for the policy rules.
"""

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import NoiseModel, PatientParams, PatientState, step_patient
from .policy import PolicySpec, interest_set, select_visits

DEFAULT_DELTA = math.log(125.0)
DEFAULT_CAPACITY_FRACTIONS = tuple(round(0.05 * k, 2) for k in range(1, 21))


class InstanceTooLargeError(Exception):
    """Exhaustive schedule search would exceed the enumeration budget."""

    def __init__(self, enumeration_count: int, budget: int):
        self.enumeration_count = enumeration_count
        self.budget = budget
        super().__init__(
            f"schedule enumeration needs {enumeration_count} evaluations"
            f" (budget {budget})"
        )


@dataclass(frozen=True)
class Cohort:
    """A population to simulate: aligned parameter and initial-state tuples."""

    params: Tuple[PatientParams, ...]
    initial_states: Tuple[PatientState, ...]

    def __post_init__(self):
        if len(self.params) != len(self.initial_states):
            raise ValueError("cohort params/states misaligned")
        if not self.params:
            raise ValueError("cohort must be nonempty")

    def __len__(self):
        return len(self.params)


@dataclass(frozen=True)
class SimulationConfig:
    horizon: int = 60
    capacity_fractions: Tuple[float, ...] = DEFAULT_CAPACITY_FRACTIONS
    replications: int = 10
    base_seed: int = 0
    noise: NoiseModel = field(default_factory=NoiseModel)
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.capacity_fractions:
            raise ValueError("need at least one capacity fraction")
        for f in self.capacity_fractions:
            if not (0.0 < f <= 1.0):
                raise ValueError(f"capacity fraction {f} outside (0, 1]")
        if list(self.capacity_fractions) != sorted(self.capacity_fractions):
            raise ValueError("capacity fractions must be sorted ascending")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")


@dataclass(frozen=True)
class RunResult:
    """Per-period metrics for one (policy, capacity, replication) cell."""

    policy_kind: str
    capacity_fraction: float
    replication: int
    seed: int
    in_control: Tuple[int, ...]
    enrolled: Tuple[int, ...]
    visits_total: Tuple[int, ...]
    screening_visits: Tuple[int, ...]
    final_log_fbg: Tuple[float, ...]
    ppc_fraction: float

    @property
    def population(self) -> int:
        return len(self.final_log_fbg)


@dataclass(frozen=True)
class SummaryRow:
    """Aggregates for one (policy, capacity) cell across replications."""

    policy_kind: str
    capacity_fraction: float
    ppc_mean: float
    ppc_ci_halfwidth: float
    screening_share: Tuple[float, ...]  # per period; nan where no visits
    enrollment_share: Tuple[float, ...]
    final_fbg_percentiles: Tuple[float, float, float, float]  # 25/50/75/90


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def stable_hash64(*parts) -> int:
    """Deterministic 64-bit hash of a tuple of ints/strings.

    Python's builtin hash() is salted per process, so reproducible seeds go
    through sha256 instead.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def cohort_stream_seed(base_seed: int, replication: int) -> int:
    """Seed for the cohort draw: shared by every policy and capacity level."""
    return stable_hash64(base_seed, "cohort", replication)


def noise_stream_seed(base_seed: int, replication: int) -> int:
    """Seed for the process-noise matrix: likewise shared across cells."""
    return stable_hash64(base_seed, "xi", replication)


def cell_seed(base_seed: int, kind: str, fraction: float, replication: int) -> int:
    """Identifying seed recorded with each result cell."""
    return stable_hash64(base_seed, kind, int(round(fraction * 10000)), replication)


# ---------------------------------------------------------------------------
# core simulation
# ---------------------------------------------------------------------------

def capacity_from_fraction(fraction: float, population: int) -> int:
    """Visit budget from a capacity fraction, rounding half up."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction {fraction} outside (0, 1]")
    if population < 1:
        raise ValueError("population must be >= 1")
    return int(math.floor(fraction * population + 0.5))


def _draw_noise_matrix(config: SimulationConfig, replication: int, population: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(noise_stream_seed(config.base_seed, replication)))
    if config.noise.sigma_xi == 0.0:
        return np.zeros((config.horizon, population))
    return rng.normal(0.0, config.noise.sigma_xi, size=(config.horizon, population))


def simulate(
    cohort: Cohort,
    spec: PolicySpec,
    config: SimulationConfig,
    fraction: float,
    replication: int = 0,
) -> RunResult:
    """Run one policy over one cohort for one replication.

    Per period: the policy selects at most C patients (classified as
    screening visits when the patient was unenrolled), every patient
    advances one step with its own noise draw, and metrics are recorded on
    the post-transition states. Fully deterministic given (cohort, spec,
    config, fraction, replication).
    """
    n_periods = config.horizon
    population = len(cohort)
    C = capacity_from_fraction(fraction, population)
    xi = _draw_noise_matrix(config, replication, population)

    states = list(cohort.initial_states)
    params = list(cohort.params)

    in_control: List[int] = []
    enrolled: List[int] = []
    visits_total: List[int] = []
    screening: List[int] = []

    for t in range(1, n_periods + 1):
        remaining = n_periods - t + 1
        chosen = select_visits(states, params, C, spec, remaining)
        screening.append(sum(1 for i in chosen if states[i].z_prev == 0))
        visits_total.append(len(chosen))

        n_in, n_enr = 0, 0
        for i in range(population):
            y = 1 if i in chosen else 0
            states[i], z = step_patient(states[i], params[i], y, float(xi[t - 1, i]))
            n_in += states[i].b <= config.delta
            n_enr += z
        in_control.append(n_in)
        enrolled.append(n_enr)

    return RunResult(
        policy_kind=spec.kind,
        capacity_fraction=fraction,
        replication=replication,
        seed=cell_seed(config.base_seed, spec.kind, fraction, replication),
        in_control=tuple(in_control),
        enrolled=tuple(enrolled),
        visits_total=tuple(visits_total),
        screening_visits=tuple(screening),
        final_log_fbg=tuple(s.b for s in states),
        ppc_fraction=sum(in_control) / (population * n_periods),
    )


def capacity_sweep(
    cohort_generator: Callable[[int], Cohort],
    specs: Sequence[PolicySpec],
    config: SimulationConfig,
) -> List[RunResult]:
    """Cartesian product of policy x capacity fraction x replication.

    The cohort and process-noise draws are keyed by replication alone, so
    every policy and capacity level sees identical patients and identical
    disturbances within a replication (common random numbers).
    """
    results: List[RunResult] = []
    for replication in range(config.replications):
        cohort = cohort_generator(cohort_stream_seed(config.base_seed, replication))
        for spec in specs:
            for fraction in config.capacity_fractions:
                results.append(simulate(cohort, spec, config, fraction, replication))
    results.sort(key=lambda r: (r.policy_kind, r.capacity_fraction, r.replication))
    return results


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def summarize(results: Sequence[RunResult]) -> List[SummaryRow]:
    """Collapse replications into one row per (policy, capacity).

    PPC gets a mean and a normal-approximation 95% half-width (0 by
    convention for a single replication); screening and enrollment shares
    are averaged per period (periods without visits carry no screening
    share and are skipped); final log-FBG percentiles pool every patient
    across replications.
    """
    if not results:
        raise ValueError("nothing to summarize")
    cells: Dict[Tuple[str, float], List[RunResult]] = {}
    for r in results:
        cells.setdefault((r.policy_kind, r.capacity_fraction), []).append(r)

    rows: List[SummaryRow] = []
    for (kind, fraction), group in sorted(cells.items()):
        ppcs = np.array([r.ppc_fraction for r in group])
        if len(ppcs) > 1:
            half = 1.96 * ppcs.std(ddof=1) / math.sqrt(len(ppcs))
        else:
            half = 0.0

        n_periods = len(group[0].in_control)
        scr_share, enr_share = [], []
        for t in range(n_periods):
            shares = [
                r.screening_visits[t] / r.visits_total[t]
                for r in group if r.visits_total[t] > 0
            ]
            scr_share.append(sum(shares) / len(shares) if shares else math.nan)
            enr_share.append(
                sum(r.enrolled[t] / r.population for r in group) / len(group)
            )

        pooled = np.concatenate([np.asarray(r.final_log_fbg) for r in group])
        pcts = tuple(float(np.percentile(pooled, q)) for q in (25, 50, 75, 90))

        rows.append(SummaryRow(
            policy_kind=kind,
            capacity_fraction=fraction,
            ppc_mean=float(ppcs.mean()),
            ppc_ci_halfwidth=float(half),
            screening_share=tuple(scr_share),
            enrollment_share=tuple(enr_share),
            final_fbg_percentiles=pcts,
        ))
    return rows


def screening_share_window(
    results: Sequence[RunResult], first_period: int, last_period: int
) -> float:
    """Mean screening share over a 1-based inclusive period window.

    Averages screening_visits/visits_total over every (replication, period)
    cell in the window that had at least one visit; idle periods say
    nothing about the screening mix.
    """
    shares = [
        r.screening_visits[t - 1] / r.visits_total[t - 1]
        for r in results
        for t in range(first_period, last_period + 1)
        if r.visits_total[t - 1] > 0
    ]
    if not shares:
        return math.nan
    return sum(shares) / len(shares)


def enrollment_share_window(
    results: Sequence[RunResult], first_period: int, last_period: int
) -> float:
    """Mean fraction of the cohort enrolled over a 1-based inclusive window."""
    vals = [
        r.enrolled[t - 1] / r.population
        for r in results
        for t in range(first_period, last_period + 1)
    ]
    return sum(vals) / len(vals)


# ---------------------------------------------------------------------------
# exhaustive schedule oracle
# ---------------------------------------------------------------------------

ENUMERATION_BUDGET = 10_000_000


def brute_force_plan(
    cohort: Cohort,
    C: int,
    N: int,
    delta: float,
    interest_only: bool = False,
) -> Tuple[int, Tuple[Tuple[int, ...], ...]]:
    """Exhaustively maximize total in-control periods under zero noise.

    Searches every per-period visit subset of size <= C (optionally only
    subsets of the current patients-of-interest set), advancing the cohort
    deterministically. Ties keep the lexicographically smallest schedule
    (periods compared first to last, each period's visit set as a sorted
    tuple). Raises InstanceTooLargeError when the full enumeration would
    exceed the evaluation budget.
    """
    population = len(cohort)
    per_period = sum(
        math.comb(population, k) for k in range(0, min(C, population) + 1)
    )
    total = per_period ** N
    if total > ENUMERATION_BUDGET:
        raise InstanceTooLargeError(total, ENUMERATION_BUDGET)

    subsets = sorted(
        itertools.chain.from_iterable(
            itertools.combinations(range(population), k)
            for k in range(0, min(C, population) + 1)
        )
    )

    best_value = -1
    best_schedule: Optional[Tuple[Tuple[int, ...], ...]] = None
    schedule: List[Tuple[int, ...]] = []

    def dfs(states: Tuple[PatientState, ...], t: int, reward: int):
        nonlocal best_value, best_schedule
        if t == N:
            if reward > best_value:
                best_value = reward
                best_schedule = tuple(schedule)
            return
        allowed = subsets
        if interest_only:
            members = interest_set(states, cohort.params)
            allowed = [sub for sub in subsets if set(sub) <= members]
        for sub in allowed:
            nxt = []
            gained = 0
            for i in range(population):
                y = 1 if i in sub else 0
                ns, _ = step_patient(states[i], cohort.params[i], y, xi=0.0)
                gained += ns.b <= delta
                nxt.append(ns)
            schedule.append(sub)
            dfs(tuple(nxt), t + 1, reward + gained)
            schedule.pop()

    dfs(tuple(cohort.initial_states), 0, 0)
    assert best_schedule is not None
    return best_value, best_schedule
