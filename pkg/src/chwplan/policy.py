"""Visit-selection policies.

The optimal single-patient rule reduces to a sign test on the enrollment
benefit with and without a visit. The multi-patient heuristic filters the
cohort to the "patients of interest" (those the single-patient rule would
visit), then breaks capacity ties with one of four rankings. Naive
baselines rank everyone with no filtering.
"""

from dataclasses import dataclass
from typing import List, Sequence, Set

from .model import PatientParams, PatientState, benefit, step_patient

EA_KINDS = ("ea_asc_fbg", "ea_desc_fbg", "ea_desc_vtg", "ea_desc_vtg_per_visit")
BASELINE_KINDS = ("visit_no_one", "visit_everyone", "asc_fbg", "desc_fbg")
POLICY_KINDS = BASELINE_KINDS + EA_KINDS


@dataclass(frozen=True)
class PolicySpec:
    """Which rule picks the <=C patients to visit each period.

    delta is the in-control threshold on log-FBG, used by the
    rollout-based rankings.
    """

    kind: str
    delta: float

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if not self.delta > 0:
            raise ValueError(f"PolicySpec.delta must be > 0, got {self.delta}")


@dataclass(frozen=True)
class RolloutSummary:
    """Deterministic look-ahead forecast for one patient.

    v_tilde counts future in-control periods; visits counts the visits the
    single-patient rule would spend producing them.
    """

    v_tilde: int
    visits: int


def single_patient_action(state: PatientState, params: PatientParams) -> int:
    """Optimal visit decision for an isolated patient.

    Visit exactly when the visit either causes an enrollment that would not
    happen otherwise, prevents a dropout, or strictly raises an enrolled
    patient's benefit; in every remaining case (including indifference)
    don't spend the visit.
    """
    b1 = benefit(state, params, y=1)
    if b1 < 0.0:
        return 0
    b0 = benefit(state, params, y=0)
    if b0 < 0.0:
        return 1
    if state.z_prev == 0:
        return 1
    # enrolled either way; visit only for a strict benefit improvement
    return 1 if (b1 - b0) > 0.0 else 0


def interest_set(
    states: Sequence[PatientState], params: Sequence[PatientParams]
) -> Set[int]:
    """Indices of patients the single-patient rule would visit right now."""
    if len(states) != len(params):
        raise ValueError(
            f"states/params misaligned: {len(states)} states vs {len(params)} params"
        )
    return {
        i for i, (st, pr) in enumerate(zip(states, params))
        if single_patient_action(st, pr) == 1
    }


def rollout_single(
    state: PatientState,
    params: PatientParams,
    periods_remaining: int,
    delta: float,
) -> RolloutSummary:
    """Noise-free forward simulation under the single-patient rule.

    Args:
        state: current (pre-decision) patient state.
        params: patient constants.
        periods_remaining: number of decisions left, counting the current
            period's.
        delta: in-control threshold on log-FBG.

    Returns:
        RolloutSummary counting post-transition in-control periods and
        visits over the window. periods_remaining=0 yields (0, 0).
    """
    if periods_remaining < 0:
        raise ValueError("periods_remaining must be >= 0")
    v_tilde = 0
    visits = 0
    cur = state
    for _ in range(periods_remaining):
        y = single_patient_action(cur, params)
        cur, _ = step_patient(cur, params, y, xi=0.0)
        visits += y
        if cur.b <= delta:
            v_tilde += 1
    return RolloutSummary(v_tilde=v_tilde, visits=visits)


def _value_per_visit_key(rs: RolloutSummary, index: int):
    """Sort key for the value-per-visit ranking (ascending sort order).

    A patient predicted to need zero visits is free value and outranks
    every finite ratio; free patients order among themselves by more value
    first, and any remaining ties fall back to ascending patient index.
    """
    if rs.visits == 0:
        return (0, -rs.v_tilde, index)
    return (1, -rs.v_tilde / rs.visits, index)


def _rank_interest_set(
    members: List[int],
    states: Sequence[PatientState],
    params: Sequence[PatientParams],
    spec: PolicySpec,
    periods_remaining: int,
) -> List[int]:
    """Order interest-set members by the policy kind's tie-breaking rule."""
    if spec.kind == "ea_asc_fbg":
        return sorted(members, key=lambda i: (states[i].b, i))
    if spec.kind == "ea_desc_fbg":
        return sorted(members, key=lambda i: (-states[i].b, i))

    summaries = {
        i: rollout_single(states[i], params[i], periods_remaining, spec.delta)
        for i in members
    }
    if spec.kind == "ea_desc_vtg":
        return sorted(members, key=lambda i: (-summaries[i].v_tilde, i))
    return sorted(members, key=lambda i: _value_per_visit_key(summaries[i], i))


def select_visits(
    states: Sequence[PatientState],
    params: Sequence[PatientParams],
    C: int,
    spec: PolicySpec,
    periods_remaining: int,
) -> Set[int]:
    """Pick this period's visit set.

    Heuristic kinds filter to the interest set first and only rank when it
    exceeds capacity. Baseline kinds rank the whole cohort by log-FBG with
    no filtering; visit_everyone ignores the capacity (it is the
    unconstrained benchmark) and visit_no_one always returns the empty set.
    All rankings break ties by ascending patient index.
    """
    if C < 0:
        raise ValueError("capacity must be >= 0")
    n = len(states)
    if spec.kind == "visit_no_one":
        return set()
    if spec.kind == "visit_everyone":
        return set(range(n))
    if spec.kind == "asc_fbg":
        order = sorted(range(n), key=lambda i: (states[i].b, i))
        return set(order[:C])
    if spec.kind == "desc_fbg":
        order = sorted(range(n), key=lambda i: (-states[i].b, i))
        return set(order[:C])

    members = sorted(interest_set(states, params))
    if len(members) <= C:
        return set(members)
    ranked = _rank_interest_set(members, states, params, spec, periods_remaining)
    return set(ranked[:C])
