"""Impulsive hybrid system: sample grid, dwell rule, flows, jumps, simulation.

The system flows continuously between controller sample times; at sample
times where at least the minimum dwell time has elapsed since the last
impulse (an *impulse opportunity*), the controller may apply an
instantaneous control jump, which resets the dwell clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from . import _kernel
from .errors import SimulationAborted
from .integrate import FlowMap, IntegratorConfig, dp45_path, dp45_step_to

__all__ = [
    "HybridState",
    "ImpulseSchedule",
    "JumpMap",
    "HybridSystem",
    "SimulationRecord",
    "GRID_REL_TOL",
    "is_impulse_opportunity",
    "on_sample_grid",
    "flow",
    "flow_path",
    "apply_jump",
    "simulate",
]

# |t - nearest grid point| <= GRID_REL_TOL * dt counts as on-grid, so that
# float accumulation over long horizons cannot drop impulse opportunities.
GRID_REL_TOL = 1e-9


@dataclass(frozen=True)
class HybridState:
    """Time, time-since-last-impulse, and continuous state."""

    t: float
    sigma: float
    x: np.ndarray

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))


@dataclass(frozen=True)
class ImpulseSchedule:
    """Sample grid ``t0 + k*dt`` plus the minimum dwell time ``dT``.

    ``dT`` must be an integer multiple of ``dt`` and strictly larger than
    ``dt``.
    """

    t0: float
    dt: float
    dT: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("sample period dt must be positive")
        if self.dT <= self.dt:
            raise ValueError("dwell time dT must exceed the sample period dt")
        q = self.dT / self.dt
        if abs(q - round(q)) > GRID_REL_TOL:
            raise ValueError("dwell time dT must be an integer multiple of dt")

    @property
    def q(self) -> int:
        """Number of sample periods per dwell time."""
        return round(self.dT / self.dt)

    def grid_index(self, t: float) -> int:
        return round((t - self.t0) / self.dt)

    def grid_time(self, k: int) -> float:
        return self.t0 + k * self.dt


@runtime_checkable
class JumpMap(Protocol):
    """Instantaneous state change ``x+ = g(t, x, u)`` with ``g(t, x, 0) = x``."""

    m: int

    def eval(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class HybridSystem:
    flow: FlowMap
    jump: JumpMap
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)


def on_sample_grid(schedule: ImpulseSchedule, t: float) -> bool:
    k = schedule.grid_index(t)
    return abs(t - schedule.grid_time(k)) <= GRID_REL_TOL * schedule.dt


def is_impulse_opportunity(schedule: ImpulseSchedule, t: float, sigma: float) -> bool:
    """True iff ``t`` lies on the sample grid and the dwell time has elapsed."""
    if t < schedule.t0 - GRID_REL_TOL * schedule.dt:
        raise ValueError("time precedes the schedule origin")
    return on_sample_grid(schedule, t) and sigma >= schedule.dT


def flow(f: FlowMap, cfg: IntegratorConfig, tau: float, t: float, x: np.ndarray) -> np.ndarray:
    """Propagate ``x`` along the uncontrolled flow from ``t`` to ``tau >= t``."""
    if tau < t:
        raise ValueError("flow horizon must satisfy tau >= t")
    x = np.asarray(x, dtype=float)
    if tau == t:
        return x.copy()
    mu = getattr(f, "_twobody_mu", None)
    if mu is not None:
        return _kernel.tb_propagate(mu, t, tau, x, cfg.rtol, cfg.atol, cfg.max_step)
    return dp45_step_to(f.eval, t, tau, x, cfg)


def flow_path(
    f: FlowMap, cfg: IntegratorConfig, taus: Sequence[float], t: float, x: np.ndarray
) -> np.ndarray:
    """Propagate through the nondecreasing times ``taus``; returns (len, n)."""
    taus = np.asarray(taus, dtype=float)
    if taus.size and (np.any(np.diff(taus) < 0) or taus[0] < t):
        raise ValueError("output times must be nondecreasing and start at or after t")
    x = np.asarray(x, dtype=float)
    mu = getattr(f, "_twobody_mu", None)
    if mu is not None:
        return _kernel.tb_propagate_path(mu, t, taus, x, cfg.rtol, cfg.atol, cfg.max_step)
    return dp45_path(f.eval, t, taus, x, cfg)


def apply_jump(
    g: JumpMap, t: float, x: np.ndarray, u: np.ndarray, sigma: float
) -> tuple[np.ndarray, float]:
    """Apply the jump map; a nonzero impulse resets the dwell clock."""
    u = np.asarray(u, dtype=float)
    x_plus = np.asarray(g.eval(t, np.asarray(x, dtype=float), u), dtype=float)
    sigma_plus = sigma if not np.any(u != 0.0) else 0.0
    return x_plus, sigma_plus


@dataclass
class SimulationRecord:
    """Dense closed-loop log: states, impulses, observed scalars."""

    schedule: ImpulseSchedule
    times: np.ndarray
    sigmas: np.ndarray
    states: np.ndarray
    controls: np.ndarray           # zero except on post-impulse rows
    impulse_times: np.ndarray
    impulse_controls: np.ndarray
    observations: dict[str, np.ndarray]
    t_end: float
    complete: bool = True

    @property
    def n_impulses(self) -> int:
        return len(self.impulse_times)


class _RecordBuilder:
    def __init__(self, schedule, n, m, observers, t_end):
        self.schedule = schedule
        self.observers = observers or {}
        self.t_end = t_end
        self.rows_t: list[float] = []
        self.rows_sigma: list[float] = []
        self.rows_x: list[np.ndarray] = []
        self.rows_u: list[np.ndarray] = []
        self.obs: dict[str, list[float]] = {k: [] for k in self.observers}
        self.imp_t: list[float] = []
        self.imp_u: list[np.ndarray] = []
        self.m = m

    def log(self, t, sigma, x, u=None):
        self.rows_t.append(t)
        self.rows_sigma.append(sigma)
        self.rows_x.append(np.array(x, dtype=float))
        self.rows_u.append(
            np.zeros(self.m) if u is None else np.array(u, dtype=float)
        )
        for key, fn in self.observers.items():
            self.obs[key].append(float(fn(t, x)))

    def impulse(self, t, u):
        self.imp_t.append(t)
        self.imp_u.append(np.array(u, dtype=float))

    def build(self, complete=True) -> SimulationRecord:
        return SimulationRecord(
            schedule=self.schedule,
            times=np.array(self.rows_t),
            sigmas=np.array(self.rows_sigma),
            states=np.array(self.rows_x) if self.rows_x else np.zeros((0, 0)),
            controls=np.array(self.rows_u) if self.rows_u else np.zeros((0, self.m)),
            impulse_times=np.array(self.imp_t),
            impulse_controls=(
                np.array(self.imp_u) if self.imp_u else np.zeros((0, self.m))
            ),
            observations={k: np.array(v) for k, v in self.obs.items()},
            t_end=self.t_end,
            complete=complete,
        )


def simulate(
    system: HybridSystem,
    schedule: ImpulseSchedule,
    controller: Callable[[float, float, np.ndarray], np.ndarray],
    x0: np.ndarray,
    t_end: float,
    log_step: float | None = None,
    observers: Mapping[str, Callable[[float, np.ndarray], float]] | None = None,
) -> SimulationRecord:
    """Run the closed loop from ``schedule.t0`` (with the dwell clock already
    expired, so the very first sample is an impulse opportunity) to ``t_end``.

    The time loop iterates an integer grid counter; sample times are always
    computed as ``t0 + k*dt`` so no floating-point drift accumulates. The
    controller is queried at every opportunity; returning a zero vector
    means coasting and leaves the dwell clock running.
    """
    if t_end < schedule.t0:
        raise ValueError("t_end must not precede t0")
    if log_step is None:
        log_step = schedule.dt / 3.0
    if log_step <= 0:
        raise ValueError("log_step must be positive")
    x = np.asarray(x0, dtype=float).copy()
    m = system.jump.m
    builder = _RecordBuilder(schedule, x.size, m, observers, t_end)

    q = schedule.q
    n_grid = int(math.floor((t_end - schedule.t0) / schedule.dt + GRID_REL_TOL))
    n_sub = max(1, round(schedule.dt / log_step))
    sub_fracs = [(i + 1) / n_sub for i in range(n_sub)]
    k_jump: int | None = None  # grid index of the last impulse

    def sigma_at(k: int) -> float:
        if k_jump is None:
            return schedule.dT + k * schedule.dt
        return (k - k_jump) * schedule.dt

    builder.log(schedule.t0, sigma_at(0), x)
    try:
        for k in range(n_grid + 1):
            t_k = schedule.grid_time(k)
            sigma = sigma_at(k)
            dwell_ok = (sigma >= schedule.dT) if k_jump is None else (k - k_jump >= q)
            if dwell_ok:
                u = np.asarray(controller(t_k, sigma, x), dtype=float)
                if np.any(u != 0.0):
                    x, sigma = apply_jump(system.jump, t_k, x, u, sigma)
                    k_jump = k
                    builder.impulse(t_k, u)
                    builder.log(t_k, sigma, x, u)
            if k == n_grid:
                break
            t_next = schedule.grid_time(k + 1)
            sub_times = [t_k + f * (t_next - t_k) for f in sub_fracs]
            path = flow_path(system.flow, system.integrator, sub_times, t_k, x)
            for ts, xs in zip(sub_times[:-1], path[:-1]):
                builder.log(ts, sigma + (ts - t_k), xs)
            x = path[-1]
            builder.log(t_next, sigma_at(k + 1), x)
        t_last = schedule.grid_time(n_grid)
        if t_end - t_last > GRID_REL_TOL * schedule.dt:
            sigma = sigma_at(n_grid)
            n_tail = max(1, round((t_end - t_last) / log_step))
            tail_times = [
                t_last + (i + 1) * (t_end - t_last) / n_tail for i in range(n_tail)
            ]
            path = flow_path(system.flow, system.integrator, tail_times, t_last, x)
            for ts, xs in zip(tail_times, path):
                builder.log(ts, sigma + (ts - t_last), xs)
    except Exception as exc:
        raise SimulationAborted(
            f"simulation aborted at t={builder.rows_t[-1]:.3f}: {exc}",
            builder.build(complete=False),
            cause=exc,
        ) from exc
    return builder.build()
