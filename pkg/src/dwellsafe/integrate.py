"""Adaptive Dormand-Prince 5(4) integration of flow maps.

This is the generic (pure NumPy) integrator. The compiled kernel in
``dwellsafe._kernel`` implements the identical scheme specialized to the
planar two-body flow; both must stay step-for-step equivalent since tests
cross-validate them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import PropagationError

__all__ = ["FlowMap", "IntegratorConfig", "dp45_step_to", "dp45_path"]


@runtime_checkable
class FlowMap(Protocol):
    """Right-hand side of an autonomous-in-structure ODE ``xdot = f(t, x)``."""

    n: int

    def eval(self, t: float, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and step cap for the adaptive integrator.

    ``max_step`` should not exceed the controller sample period when the
    integrator feeds bound-soundness checks, so that no sample-time event
    can fall inside a single step.
    """

    method: str = "dp45"
    atol: float = 1e-12
    rtol: float = 1e-12
    max_step: float = 15.0

    def __post_init__(self):
        if self.atol <= 0 or self.rtol <= 0:
            raise ValueError("integrator tolerances must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.method != "dp45":
            raise ValueError(f"unknown integrator method {self.method!r}")


# Dormand-Prince 5(4) tableau. The fifth-order solution is propagated; the
# difference to the embedded fourth-order solution estimates local error.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
# b - bhat, including the FSAL stage
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def dp45_step_to(
    f: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    t1: float,
    y0: np.ndarray,
    cfg: IntegratorConfig,
) -> np.ndarray:
    """Propagate ``y0`` from ``t0`` to ``t1`` (either direction), returning y(t1)."""
    return dp45_path(f, t0, (t1,), y0, cfg)[-1]


def dp45_path(
    f: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    ts: Sequence[float],
    y0: np.ndarray,
    cfg: IntegratorConfig,
) -> np.ndarray:
    """Propagate through the monotone output times ``ts``, chaining segments.

    Returns an array of shape ``(len(ts), n)``. Output times must be
    monotone (nondecreasing or nonincreasing) starting from ``t0``.
    """
    y = np.asarray(y0, dtype=float).copy()
    out = np.empty((len(ts), y.size))
    t = float(t0)
    k1 = None  # FSAL carry
    for i, tau in enumerate(ts):
        y, k1 = _advance(f, t, float(tau), y, cfg, k1)
        out[i] = y
        t = float(tau)
    return out


def _advance(f, t0, t1, y, cfg, k1):
    """Single-segment adaptive advance with FSAL reuse across steps."""
    span = t1 - t0
    if span == 0.0:
        return y.copy(), k1
    direction = 1.0 if span > 0 else -1.0
    t = t0
    h = direction * min(cfg.max_step, abs(span))
    if k1 is None:
        k1 = np.asarray(f(t, y), dtype=float)
    k = [None] * 7
    while (t1 - t) * direction > 0.0:
        h_abs = min(abs(h), cfg.max_step, abs(t1 - t))
        if h_abs < 1e-13 * max(1.0, abs(t)):
            raise PropagationError("step size underflow", t, y.copy())
        h = direction * h_abs
        k[0] = k1
        failed_state = False
        for s in range(1, 6):
            ys = y + h * sum(a * k[j] for j, a in enumerate(_A[s]))
            k[s] = np.asarray(f(t + _C[s] * h, ys), dtype=float)
            if not np.all(np.isfinite(k[s])):
                failed_state = True
                break
        if failed_state:
            raise PropagationError("non-finite derivative", t, y.copy())
        y_new = y + h * sum(b * k[j] for j, b in enumerate(_B))
        k[6] = np.asarray(f(t + h, y_new), dtype=float)
        if not np.all(np.isfinite(k[6])):
            raise PropagationError("non-finite derivative", t, y.copy())
        err_vec = h * sum(e * k[j] for j, e in enumerate(_E))
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
        if err <= 1.0:
            t = t + h
            y = y_new
            k1 = k[6]  # FSAL
            factor = _MAX_FACTOR if err == 0.0 else min(_MAX_FACTOR, _SAFETY * err ** -0.2)
            h = h * factor
        else:
            h = h * max(_MIN_FACTOR, _SAFETY * err ** -0.2)
    return y, k1
