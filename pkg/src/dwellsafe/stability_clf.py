"""Quadratic Lyapunov tracking machinery and stability conditions.

Provides the quadratic form ``V = (x - x_t(t))' P (x - x_t(t))`` against a
moving target, its first/second time derivatives along an uncontrolled
flow, and the decision-time conditions used by stabilizing controllers:

* one-step predicted descent over the next sample period or dwell window
  ("one-step MPC" conditions),
* certified-rate descent along coasting flows via an upper bound on Vdot,
* instantaneous descent across a jump, and
* the maximum-dwell trigger forcing an impulse.

Each condition reports ``margin = LHS - RHS`` of its inequality; the
condition is satisfied iff the margin is nonpositive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .hybrid_core import ImpulseSchedule, JumpMap, flow
from .integrate import FlowMap, IntegratorConfig

__all__ = [
    "TargetPath",
    "StaticTarget",
    "QuadraticLyapunov",
    "StabilityRates",
    "ConditionResult",
    "RegimePartition",
    "v_rate",
    "v_accel",
    "mpc_coast_condition",
    "mpc_jump_condition",
    "coast_flow_condition",
    "jump_descent_condition",
    "max_dwell_trigger",
    "make_regime_partition",
]


@runtime_checkable
class TargetPath(Protocol):
    """Reference trajectory with two time derivatives of the full state."""

    def state(self, t): ...
    def state_dot(self, t): ...
    def state_ddot(self, t): ...


@dataclass(frozen=True)
class StaticTarget:
    """Constant reference; the zero vector recovers ``V(x) = x' P x``."""

    x_ref: np.ndarray

    def state(self, t):
        return np.broadcast_to(self.x_ref, np.shape(t) + self.x_ref.shape).copy() \
            if np.ndim(t) else self.x_ref

    def state_dot(self, t):
        return np.zeros_like(self.state(t))

    def state_ddot(self, t):
        return np.zeros_like(self.state(t))


@dataclass(frozen=True)
class QuadraticLyapunov:
    """``V(t, x) = (x - x_t(t))' P (x - x_t(t))`` with symmetric P > 0."""

    P: np.ndarray
    target: TargetPath

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        object.__setattr__(self, "P", P)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12 * np.abs(P).max()):
            raise ValueError("P must be symmetric")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise ValueError("P must be positive definite")

    @property
    def eig_bounds(self) -> tuple[float, float]:
        """(lambda_min, lambda_max) of P: sandwich coefficients for V."""
        w = np.linalg.eigvalsh(self.P)
        return float(w[0]), float(w[-1])

    def error(self, t, x):
        return np.asarray(x, dtype=float) - self.target.state(t)

    def value(self, t, x) -> float:
        z = self.error(t, x)
        return np.einsum("...i,ij,...j->...", z, self.P, z)

    def rate(self, t, x, f: FlowMap) -> float:
        """Vdot along the uncontrolled flow."""
        z = self.error(t, x)
        zdot = np.asarray(f.eval(t, np.asarray(x, dtype=float))) - self.target.state_dot(t)
        return 2.0 * np.einsum("...i,ij,...j->...", z, self.P, zdot)

    def accel(self, t, x, f) -> float:
        """Vddot along the flow; requires ``f.eval_dot`` (flow time derivative)."""
        x = np.asarray(x, dtype=float)
        z = self.error(t, x)
        zdot = np.asarray(f.eval(t, x)) - self.target.state_dot(t)
        zddot = np.asarray(f.eval_dot(t, x)) - self.target.state_ddot(t)
        return 2.0 * (
            np.einsum("...i,ij,...j->...", zdot, self.P, zdot)
            + np.einsum("...i,ij,...j->...", z, self.P, zddot)
        )


def v_rate(L: QuadraticLyapunov, f: FlowMap, t, x) -> float:
    """Total derivative of V along the flow at (t, x)."""
    return L.rate(t, x, f)


def v_accel(L: QuadraticLyapunov, f, t, x) -> float:
    return L.accel(t, x, f)


@dataclass(frozen=True)
class StabilityRates:
    """Linear strict-decrease rates and the maximum dwell time.

    ``beta1`` scales the flow-descent requirement (units 1/s), ``beta2``
    the per-step contraction (dimensionless, < 1). A controller honoring
    the maximum dwell time must impulse once ``sigma >= dT_max``.
    """

    beta1: float = 0.0
    beta2: float = 0.0
    dT_max: float = np.inf

    def __post_init__(self):
        if self.beta1 < 0:
            raise ValueError("beta1 must be nonnegative")
        if not 0 <= self.beta2 < 1:
            raise ValueError("beta2 must lie in [0, 1)")

    def b1(self, w: float) -> float:
        return self.beta1 * w

    def b2(self, w: float) -> float:
        return self.beta2 * w


_NO_RATES = StabilityRates()


@dataclass(frozen=True)
class ConditionResult:
    satisfied: bool
    margin: float

    def __bool__(self) -> bool:
        return self.satisfied


def _result(margin: float) -> ConditionResult:
    return ConditionResult(bool(margin <= 0.0), float(margin))


def mpc_coast_condition(
    L: QuadraticLyapunov,
    f: FlowMap,
    icfg: IntegratorConfig,
    schedule: ImpulseSchedule,
    t: float,
    x: np.ndarray,
    rates: StabilityRates | None = None,
) -> ConditionResult:
    """Predicted V one sample period ahead must not exceed V now (minus the
    strict-rate allowance when rates are given)."""
    rates = rates or _NO_RATES
    w = L.value(t, x)
    v_next = L.value(t + schedule.dt, flow(f, icfg, t + schedule.dt, t, x))
    return _result(v_next - w + rates.b2(w))


def mpc_jump_condition(
    L: QuadraticLyapunov,
    f: FlowMap,
    icfg: IntegratorConfig,
    jump: JumpMap,
    schedule: ImpulseSchedule,
    t: float,
    x: np.ndarray,
    u: np.ndarray,
    rates: StabilityRates | None = None,
) -> ConditionResult:
    """Predicted V a full dwell time after the impulse must not exceed V now."""
    rates = rates or _NO_RATES
    w = L.value(t, x)
    y = jump.eval(t, np.asarray(x, dtype=float), np.asarray(u, dtype=float))
    v_next = L.value(t + schedule.dT, flow(f, icfg, t + schedule.dT, t, y))
    return _result(v_next - w + rates.b2(w))


def coast_flow_condition(
    L: QuadraticLyapunov,
    bound: Callable[[float, float, np.ndarray], float | np.ndarray],
    schedule: ImpulseSchedule,
    t: float,
    x: np.ndarray,
    horizon: float,
    rates: StabilityRates | None = None,
) -> ConditionResult:
    """Certified Vdot bound over [t, t+horizon] must stay nonpositive.

    ``bound`` is a scalar or segmented upper bound on Vdot along the
    uncontrolled flow (apply to the post-jump state for the dwell-horizon
    form). The strict form requires ``<= -beta1(V)``.
    """
    rates = rates or _NO_RATES
    w = L.value(t, x)
    val = np.max(np.asarray(bound(t + horizon, t, x)))
    return _result(float(val) + rates.b1(w))


def jump_descent_condition(
    L: QuadraticLyapunov,
    jump: JumpMap,
    t: float,
    x: np.ndarray,
    u: np.ndarray,
    rates: StabilityRates | None = None,
) -> ConditionResult:
    """V must not increase across the jump itself."""
    rates = rates or _NO_RATES
    w = L.value(t, x)
    y = jump.eval(t, np.asarray(x, dtype=float), np.asarray(u, dtype=float))
    return _result(L.value(t, y) - w + rates.b2(w))


def max_dwell_trigger(rates: StabilityRates, t: float, sigma: float) -> bool:
    """True when the controller is obligated to apply a nonzero impulse."""
    return sigma >= rates.dT_max


@dataclass(frozen=True)
class RegimePartition:
    """Classifies a decision into one of four disjoint regimes.

    Z1/Z2 are the coast/impulse cases handled by one-step predicted
    descent; Z3/Z4 are the cases where a certified Vdot bound holds along
    the coming flow (coast and post-impulse respectively).
    """

    classifier: Callable[[float, float, np.ndarray, np.ndarray], str]

    def __call__(self, t, sigma, x, u) -> str:
        return self.classifier(t, sigma, x, u)


def make_regime_partition(
    L: QuadraticLyapunov,
    jump: JumpMap,
    schedule: ImpulseSchedule,
    vbound: Callable[[float, float, np.ndarray], float | np.ndarray],
) -> RegimePartition:
    """Partition decisions by whether the Vdot bound certifies the flow."""

    def classify(t, sigma, x, u) -> str:
        u = np.asarray(u, dtype=float)
        if not np.any(u != 0.0):
            ok = coast_flow_condition(L, vbound, schedule, t, x, schedule.dt)
            return "Z3" if ok else "Z1"
        y = jump.eval(t, np.asarray(x, dtype=float), u)
        flow_ok = coast_flow_condition(L, vbound, schedule, t, y, schedule.dT)
        drop_ok = jump_descent_condition(L, jump, t, x, u)
        return "Z4" if (flow_ok and drop_ok) else "Z2"

    return RegimePartition(classify)
