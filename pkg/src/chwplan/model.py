"""Patient-level state model for CHW diabetes interventions.

A patient carries four pieces of state: log fasting blood glucose (b),
an adverse-factors level (s, social stigma / cognitive burden of being
in the program), the perceived importance of those adverse factors
(theta), and whether they were enrolled in the previous period (z_prev).
Each period the provider decides whether to visit (y); the patient then
decides whether to (stay) enrolled (z) by thresholding a closed-form
net benefit, and all states advance through linear dynamics.

Everything in this module is a pure function of its arguments.
"""

import warnings
from dataclasses import dataclass
from typing import Tuple

# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatientParams:
    """Per-patient behavioral constants.

    Attributes:
        p: log-FBG drift per period (disease progression, log units).
        mu: log-FBG reduction per period while enrolled.
        alpha: extra log-FBG reduction in a period with a management visit.
        beta: adverse-factor increase per visit received while enrolled.
        lam: drop in perceived importance per visit received while enrolled.
        gamma: adverse-factor carryover per period, in (0, 1).
        rho: perception carryover per period, in (0, 1).
        s_base: steady-state adverse-factor level while enrolled.
        theta_base: steady-state perceived importance.
    """

    p: float
    mu: float
    alpha: float
    beta: float
    lam: float
    gamma: float
    rho: float
    s_base: float
    theta_base: float

    def __post_init__(self):
        for name in ("p", "mu", "alpha", "beta", "lam", "s_base", "theta_base"):
            if getattr(self, name) < 0:
                raise ValueError(f"PatientParams.{name} must be >= 0, got {getattr(self, name)}")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"PatientParams.gamma must be in (0, 1), got {self.gamma}")
        if not (0.0 < self.rho < 1.0):
            raise ValueError(f"PatientParams.rho must be in (0, 1), got {self.rho}")
        if self.p >= self.mu + self.alpha:
            # Enrollment plus a visit cannot hold the line against progression.
            # Some published patient groups sit in this regime on purpose, so it
            # is a warning rather than an error.
            warnings.warn(
                f"intervention cannot offset progression: p={self.p} >= mu+alpha={self.mu + self.alpha}",
                stacklevel=2,
            )


@dataclass(frozen=True)
class PatientState:
    """Evolving patient state (b, s, theta, z_prev).

    b is clamped at 0 on construction; process noise may push the raw
    update negative but log-FBG is kept in the model's feasible region.
    """

    b: float
    s: float
    theta: float
    z_prev: int

    def __post_init__(self):
        if self.b < 0.0:
            object.__setattr__(self, "b", 0.0)
        if self.s < 0:
            raise ValueError(f"PatientState.s must be >= 0, got {self.s}")
        if self.theta < 0:
            raise ValueError(f"PatientState.theta must be >= 0, got {self.theta}")
        if self.z_prev not in (0, 1):
            raise ValueError(f"PatientState.z_prev must be 0 or 1, got {self.z_prev}")


@dataclass(frozen=True)
class NoiseModel:
    """Mean-zero disturbance spec: process noise xi and observation noise eps."""

    sigma_xi: float = 0.05
    sigma_eps: float = 0.1
    family: str = "gaussian"

    def __post_init__(self):
        if self.sigma_xi < 0 or self.sigma_eps < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.family != "gaussian":
            raise ValueError(f"unsupported noise family: {self.family!r}")


# ---------------------------------------------------------------------------
# state dynamics
# ---------------------------------------------------------------------------


def step_fbg(state: PatientState, params: PatientParams, y: int, z: int, xi: float) -> float:
    """Next log-FBG: b + p - mu*z - alpha*y*z + xi.

    Unmitigated, log-FBG drifts up by p each period; enrollment pulls it
    down by mu and a management visit by a further alpha. The return value
    may be any real — clamping to >= 0 happens at state construction.
    """
    return state.b + params.p - params.mu * z - params.alpha * y * z + xi


def step_adverse(s: float, params: PatientParams, y: int, z: int) -> float:
    """Next adverse-factor level: z*(gamma*(s - s_base) + s_base) + beta*y*z.

    Deviations from the enrolled steady state s_base decay geometrically at
    rate gamma; each visit adds beta. Unenrolled patients carry none.
    """
    return z * (params.gamma * (s - params.s_base) + params.s_base) + params.beta * y * z


def step_perception(theta: float, params: PatientParams, y: int, z: int) -> float:
    """Next perceived importance, floored at zero.

    Reverts toward theta_base at rate rho; a visit while enrolled reduces
    it by lam. The raw recurrence can go negative when lam is large, so the
    result is clamped at 0 to stay in the model's feasible region.
    """
    raw = params.rho * (theta - params.theta_base) + params.theta_base - params.lam * y * z
    return max(0.0, raw)


def benefit(state: PatientState, params: PatientParams, y: int) -> float:
    """Net benefit of enrolling this period, given the visit decision y.

    Closed form: mu - theta*(gamma*(s - s_base) + s_base) + (alpha - theta*beta)*y.
    Deterministic — the FBG disturbance cancels out of the comparison.
    """
    decayed = params.gamma * (state.s - params.s_base) + params.s_base
    return params.mu - state.theta * decayed + (params.alpha - state.theta * params.beta) * y


def enroll_decision(z_prev: int, y: int, B: float) -> int:
    """Enrollment indicator (z_prev OR y) * 1[B >= 0].

    A patient can only be enrolled if already enrolled or visited this
    period, and stays/joins exactly when the net benefit is nonnegative
    (ties break in favor of enrolling).
    """
    offered = z_prev or y
    return 1 if (offered and B >= 0.0) else 0


def step_patient(
    state: PatientState, params: PatientParams, y: int, xi: float
) -> Tuple[PatientState, int]:
    """Advance one period: visit decision -> enrollment decision -> dynamics.

    The provider's y precedes the patient's z within the period; the benefit
    is evaluated at the current (s, theta). Returns the next state (with
    z_prev set to the realized z) and the realized z itself.
    """
    B = benefit(state, params, y)
    z = enroll_decision(state.z_prev, y, B)
    nxt = PatientState(
        b=step_fbg(state, params, y, z, xi),
        s=step_adverse(state.s, params, y, z),
        theta=step_perception(state.theta, params, y, z),
        z_prev=z,
    )
    return nxt, z
