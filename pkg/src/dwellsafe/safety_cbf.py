"""Barrier predicates: set membership, decision-time conditions, falsifier.

A barrier spec pairs a scalar constraint ``h`` (safe iff nonpositive) with
a certified bound on its evolution along uncontrolled flows. The two
decision-time conditions ask whether coasting one sample period, or
jumping and then coasting a full dwell time, keeps every barrier
nonpositive. The falsifier searches sampled states for points where no
control in a finite grid can satisfy the dwell-horizon condition; it can
refute the certificate assumption but never prove it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .hybrid_core import ImpulseSchedule, JumpMap

__all__ = [
    "BarrierSpec",
    "SafetyVerdict",
    "ItcbfSample",
    "ItcbfReport",
    "in_set",
    "coast_condition",
    "jump_condition",
    "check_itcbf",
]


@dataclass(frozen=True)
class BarrierSpec:
    """Scalar constraint plus a bound on its flow evolution.

    ``bound(tau, t, x)`` returns either a scalar or a vector of segment
    bounds; the constraint is certified over [t, tau] iff every element is
    nonpositive.
    """

    label: str
    h: Callable[[float, np.ndarray], float]
    bound: Callable[[float, float, np.ndarray], float | np.ndarray]


@dataclass(frozen=True)
class SafetyVerdict:
    satisfied: bool
    worst_value: float
    which: str

    def __bool__(self) -> bool:
        return self.satisfied


def in_set(spec: BarrierSpec, t: float, x: np.ndarray) -> bool:
    """Exact sign test ``h(t, x) <= 0``; the boundary is inside."""
    return float(spec.h(t, x)) <= 0.0


def _specs(spec) -> Sequence[BarrierSpec]:
    return [spec] if isinstance(spec, BarrierSpec) else list(spec)


def _worst_bound(specs, tau, t, x) -> SafetyVerdict:
    worst = -np.inf
    which = ""
    for s in specs:
        vals = np.atleast_1d(np.asarray(s.bound(tau, t, x), dtype=float))
        j = int(np.argmax(vals))
        if vals[j] > worst:
            worst = float(vals[j])
            which = s.label if vals.size == 1 else f"{s.label}[{j}]"
    return SafetyVerdict(worst <= 0.0, worst, which)


def coast_condition(
    spec: BarrierSpec | Iterable[BarrierSpec],
    schedule: ImpulseSchedule,
    t: float,
    x: np.ndarray,
) -> SafetyVerdict:
    """Do all barriers stay nonpositive while coasting one sample period?"""
    return _worst_bound(_specs(spec), t + schedule.dt, t, x)


def jump_condition(
    spec: BarrierSpec | Iterable[BarrierSpec],
    schedule: ImpulseSchedule,
    t: float,
    x: np.ndarray,
    u: np.ndarray,
    jump: JumpMap,
) -> SafetyVerdict:
    """Does the post-impulse state flow safely for the full dwell time?"""
    y = jump.eval(t, np.asarray(x, dtype=float), np.asarray(u, dtype=float))
    return _worst_bound(_specs(spec), t + schedule.dT, t, y)


@dataclass(frozen=True)
class ItcbfSample:
    t: float
    x: np.ndarray
    min_value: float
    argmin_u: np.ndarray
    flagged: bool


@dataclass
class ItcbfReport:
    """Falsifier outcome over sampled states and a finite control grid."""

    samples: list[ItcbfSample] = field(default_factory=list)

    @property
    def flagged(self) -> list[ItcbfSample]:
        return [s for s in self.samples if s.flagged]

    @property
    def clean(self) -> bool:
        return not self.flagged

    def write_jsonl(self, path) -> None:
        """One JSON line per flagged sample."""
        with open(path, "w") as fh:
            for s in self.flagged:
                fh.write(
                    json.dumps(
                        {
                            "t": s.t,
                            "x": list(s.x),
                            "min_value": s.min_value,
                            "argmin_u": list(s.argmin_u),
                        }
                    )
                    + "\n"
                )


def check_itcbf(
    spec: BarrierSpec,
    jump: JumpMap,
    schedule: ImpulseSchedule,
    control_grid: Sequence[np.ndarray],
    state_samples: Sequence[np.ndarray],
    times: Sequence[float],
) -> ItcbfReport:
    """Sampling falsifier for the certificate assumption.

    For every sampled (t, x) inside the barrier set, minimizes the
    dwell-horizon bound over the control grid and flags samples where even
    the best grid control leaves it positive. A flag is a *candidate*
    counterexample (the grid is finite); an empty report proves nothing.
    """
    control_grid = [np.asarray(u, dtype=float) for u in control_grid]
    state_samples = [np.asarray(x, dtype=float) for x in state_samples]
    times = list(times)
    if not control_grid or not state_samples or not times:
        raise ValueError("control grid, state samples and times must be nonempty")
    report = ItcbfReport()
    for t in times:
        for x in state_samples:
            if not in_set(spec, t, x):
                raise ValueError(
                    f"state sample outside the barrier set at t={t}: h > 0"
                )
            best = np.inf
            best_u = control_grid[0]
            for u in control_grid:
                y = jump.eval(t, x, u)
                val = float(np.max(np.asarray(spec.bound(t + schedule.dT, t, y))))
                if val < best:
                    best = val
                    best_u = u
            report.samples.append(
                ItcbfSample(float(t), x.copy(), best, best_u.copy(), best > 0.0)
            )
    return report
