"""Certified upper bounds on scalar quantities along uncontrolled flows.

Given second-order dynamics, an obstacle barrier is built from the signed
penetration ``kappa = rho - ||r - r0(t)||`` and its rate. The bound over a
horizon ``delta`` is the larger of the barrier now and its Taylor-form
extrapolation with a configured ceiling on the second derivative:

    max{ kappa + gamma*kdot,
         kappa + (gamma + delta)*kdot + (delta^2/2 + gamma*delta)*kddot_max }

The extrapolation branch is convex in the elapsed time, so taking the
endpoint dominates the whole interval whenever ``kddot <= kddot_max``
holds along the flow. The analogous bound for the rate of a Lyapunov
function stops at its third derivative ceiling. Both can be sharpened by
splitting the horizon into exactly-propagated segments (``psi_star``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .errors import SingularityError
from .hybrid_core import flow_path
from .integrate import FlowMap, IntegratorConfig

__all__ = [
    "CenterPath",
    "ObstacleBarrier",
    "LyapunovRateBound",
    "SegmentedBoundConfig",
    "kappa",
    "kappa_dot",
    "kappa_ddot",
    "h_obstacle",
    "psi_h",
    "psi_v",
    "psi_star",
    "taylor_pair_bound",
    "estimate_bound",
]

SINGULARITY_REL_TOL = 1e-9


@runtime_checkable
class CenterPath(Protocol):
    """Moving point with two derivatives (an obstacle center trajectory)."""

    def pos(self, t): ...
    def vel(self, t): ...
    def acc(self, t): ...


@dataclass(frozen=True)
class ObstacleBarrier:
    """Keep-out ball of radius ``rho`` around a moving center.

    ``gamma`` is the lead-time constant converting approach rate into
    barrier margin; ``kappa_ddot_max`` must upper-bound the second
    derivative of ``kappa`` along every flow the bound will certify.
    """

    rho: float
    gamma: float
    center: CenterPath
    kappa_ddot_max: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("obstacle radius must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.kappa_ddot_max < 0:
            raise ValueError("kappa_ddot_max must be nonnegative")

    # state decomposition: x = (r, rdot), planar or higher even dimension

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1] // 2
        return x[..., :d], x[..., d:]

    def _offset(self, t, x):
        r, v = self._split(x)
        dvec = r - np.asarray(self.center.pos(t))
        dist = np.asarray(np.linalg.norm(dvec, axis=-1))
        return dvec, dist, v

    def _unit(self, t, x):
        dvec, dist, v = self._offset(t, x)
        if np.any(dist < SINGULARITY_REL_TOL * self.rho):
            raise SingularityError("barrier derivative undefined at the obstacle center")
        return dvec / dist[..., None], dist, v

    def kappa(self, t, x):
        _, dist, _ = self._offset(t, x)
        return self.rho - dist

    def kappa_dot(self, t, x):
        e, _, v = self._unit(t, x)
        rel_v = v - np.asarray(self.center.vel(t))
        return -np.sum(e * rel_v, axis=-1)

    def kappa_ddot(self, t, x, f: FlowMap):
        e, dist, v = self._unit(t, x)
        rel_v = v - np.asarray(self.center.vel(t))
        d = e.shape[-1]
        accel = np.asarray(f.eval(t, np.asarray(x, dtype=float)))[..., d:]
        rel_a = accel - np.asarray(self.center.acc(t))
        radial = np.sum(e * rel_v, axis=-1)
        tangential_sq = np.sum(rel_v * rel_v, axis=-1) - radial**2
        return -tangential_sq / dist - np.sum(e * rel_a, axis=-1)

    def h(self, t, x):
        e, dist, v = self._unit(t, x)
        rel_v = v - np.asarray(self.center.vel(t))
        kdot = -np.sum(e * rel_v, axis=-1)
        return (self.rho - dist) + self.gamma * kdot

    def psi(self, tau, t, x):
        if np.any(np.asarray(tau) < t):
            raise ValueError("bound horizon must satisfy tau >= t")
        e, dist, v = self._unit(t, x)
        rel_v = v - np.asarray(self.center.vel(t))
        kap = self.rho - dist
        kdot = -np.sum(e * rel_v, axis=-1)
        return taylor_pair_bound(
            kap, kdot, self.gamma, self.kappa_ddot_max, np.asarray(tau) - t
        )


def taylor_pair_bound(kap, kapdot, gamma, kddot_max, delta):
    """max of the barrier now and its worst-case extrapolation at delta."""
    h_now = kap + gamma * kapdot
    horizon = kap + (gamma + delta) * kapdot + (0.5 * delta**2 + gamma * delta) * kddot_max
    return np.maximum(h_now, horizon)


def kappa(b: ObstacleBarrier, t, x):
    """Signed penetration depth: positive inside the keep-out ball."""
    return b.kappa(t, x)


def kappa_dot(b: ObstacleBarrier, t, x):
    """Closing rate toward the obstacle (positive when approaching)."""
    return b.kappa_dot(t, x)


def kappa_ddot(b: ObstacleBarrier, t, x, f: FlowMap):
    """Second derivative of kappa along the flow (chain rule, exact)."""
    return b.kappa_ddot(t, x, f)


def h_obstacle(b: ObstacleBarrier, t, x):
    """Barrier value ``kappa + gamma * kappa_dot``."""
    return b.h(t, x)


def psi_h(b: ObstacleBarrier, tau, t, x):
    """Upper bound on h along the uncontrolled flow over [t, tau]."""
    return b.psi(tau, t, x)


@dataclass(frozen=True)
class LyapunovRateBound:
    """Bound on Vdot along flows; needs a third-derivative ceiling.

    ``lyapunov`` must provide ``value/rate/accel`` (see
    :class:`dwellsafe.stability_clf.QuadraticLyapunov`).
    """

    lyapunov: object
    v_dddot_max: float

    def __post_init__(self):
        if self.v_dddot_max < 0:
            raise ValueError("v_dddot_max must be nonnegative")

    def psi(self, f, tau, t, x):
        if np.any(np.asarray(tau) < t):
            raise ValueError("bound horizon must satisfy tau >= t")
        delta = np.asarray(tau) - t
        vdot = self.lyapunov.rate(t, x, f)
        vddot = self.lyapunov.accel(t, x, f)
        return vdot + np.maximum(0.0, vddot) * delta + 0.5 * self.v_dddot_max * delta**2


def psi_v(lb: LyapunovRateBound, f, tau, t, x):
    """Upper bound on Vdot along the uncontrolled flow over [t, tau]."""
    return lb.psi(f, tau, t, x)


@dataclass(frozen=True)
class SegmentedBoundConfig:
    """Number of exact-prediction segments the horizon is split into."""

    n_psi: int = 1

    def __post_init__(self):
        if self.n_psi < 1:
            raise ValueError("segment count must be at least 1")


def psi_star(
    base_bound: Callable[[float, float, np.ndarray], float],
    f: FlowMap,
    icfg: IntegratorConfig,
    cfg: SegmentedBoundConfig,
    tau: float,
    t: float,
    x: np.ndarray,
) -> np.ndarray:
    """Segmented bound: exact predictions at segment starts, ``base_bound``
    across each segment. All elements must be nonpositive for the bound to
    certify the horizon.

    Segment states are chained (each prediction continues from the previous
    one) so the integration cost is one pass over [t, tau].
    """
    if tau < t:
        raise ValueError("bound horizon must satisfy tau >= t")
    n = cfg.n_psi
    delta = (tau - t) / n
    starts = [t + j * delta for j in range(n)]
    states = [np.asarray(x, dtype=float)]
    if n > 1:
        path = flow_path(f, icfg, starts[1:], t, x)
        states.extend(path)
    out = np.empty(n)
    for j in range(n):
        out[j] = base_bound(starts[j] + delta, starts[j], states[j])
    return out


def estimate_bound(
    quantity_fn: Callable[[np.ndarray], float],
    state_box: tuple[np.ndarray, np.ndarray],
    n_samples: int,
    seed: int = 0,
    safety_factor: float = 1.2,
) -> float:
    """Calibration helper: sampled maximum of a quantity over a box, inflated.

    Samples the box corners plus ``n_samples`` uniform draws. This is a
    heuristic for configuring derivative ceilings offline, not a certified
    maximization.
    """
    lo = np.asarray(state_box[0], dtype=float)
    hi = np.asarray(state_box[1], dtype=float)
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("state_box must be (lo, hi) with hi >= lo elementwise")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    points = [np.array(c) for c in itertools.product(*zip(lo, hi))]
    rng = np.random.default_rng(seed)
    points.extend(lo + rng.random((n_samples, lo.size)) * (hi - lo))
    best = -np.inf
    for i, pt in enumerate(points):
        val = float(quantity_fn(pt))
        if not np.isfinite(val):
            raise ValueError(f"non-finite quantity at sample {i}: {pt.tolist()}")
        best = max(best, val)
    return safety_factor * best
