"""Optimization-based impulse controller.

At every impulse opportunity the controller first tests the coast branch:
the barrier bounds and the Vdot bound over the next sample period, the
latter relaxed by ``gamma1 * V``. If coasting is not certified it solves,
over the impulse vector, a slack-relaxed program

    min  u'u + J d^2
    s.t. segmented Vdot bound over the dwell horizon <= gamma1 V + d
         V after the jump                            <= gamma2 V + d
         every barrier bound over the dwell horizon  <= 0   (hard)

The slack enters the two soft constraints linearly and the objective
quadratically, so for fixed u the optimal slack is the positive part of
the worst soft residual; substituting it leaves an exact-penalty objective
minimized by multi-start Nelder-Mead under an increasing-weight exterior
quadratic penalty on the hard constraints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bounding import LyapunovRateBound, SegmentedBoundConfig, psi_star, psi_v
from .errors import InfeasibleError
from .hybrid_core import ImpulseSchedule, JumpMap
from .integrate import FlowMap, IntegratorConfig
from .neldermead import nelder_mead
from .safety_cbf import BarrierSpec, coast_condition
from .stability_clf import QuadraticLyapunov

__all__ = [
    "SolverSettings",
    "ControllerConfig",
    "ControlDecision",
    "GenericStack",
    "decide",
    "solve_impulse",
]


@dataclass(frozen=True)
class SolverSettings:
    """Multi-start exterior-penalty solver knobs."""

    penalty_initial: float = 1e3
    penalty_growth: float = 10.0
    penalty_rounds: int = 5
    n_random_starts: int = 6
    random_scale: float = 1.0       # magnitude of random start offsets
    round_max_eval: int = 140
    polish_max_eval: int = 500
    xatol: float = 1e-7
    polish_xatol: float = 1e-11
    feasibility_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.penalty_initial <= 0 or self.penalty_growth <= 1:
            raise ValueError("penalty schedule must be positive and increasing")
        if self.penalty_rounds < 1:
            raise ValueError("at least one penalty round is required")


@dataclass
class ControllerConfig:
    """Everything the decision law needs about the plant and its constraints.

    ``barriers`` must already be built with the chosen predictor (plain or
    segmented dwell-horizon bounds); ``compiled_stack`` optionally supplies
    a kernel-backed constraint stack for the docking benchmark.
    """

    flow: FlowMap
    jump: JumpMap
    integrator: IntegratorConfig
    barriers: Sequence[BarrierSpec]
    lyapunov: QuadraticLyapunov
    rate_bound: LyapunovRateBound
    slack_weight: float
    gamma1: float = 0.0
    gamma2: float = 1.0
    predictor: str = "psi"
    n_psi_h: int = 10
    n_psi_v: int = 1
    solver: SolverSettings = field(default_factory=SolverSettings)
    braking_start: Callable[[float, np.ndarray], np.ndarray] | None = None
    m: int = 2

    def __post_init__(self):
        if self.slack_weight <= 0:
            raise ValueError("slack_weight must be positive")
        if self.gamma1 < 0:
            raise ValueError("gamma1 must be nonnegative")
        if not 0 <= self.gamma2 <= 1:
            raise ValueError("gamma2 must lie in [0, 1]")
        if self.predictor not in ("psi", "psi_star"):
            raise ValueError("predictor must be 'psi' or 'psi_star'")
        self.compiled_stack = None

    def stack(self, schedule: ImpulseSchedule):
        if self.compiled_stack is not None:
            return self.compiled_stack
        return GenericStack(self, schedule)


@dataclass(frozen=True)
class ControlDecision:
    """Outcome of one controller query."""

    u: np.ndarray
    branch: str                   # "coast" | "impulse"
    slack: float
    objective: float
    residuals: np.ndarray         # hard (barrier) residual vector
    soft_residuals: tuple[float, float]
    lyapunov_value: float
    n_eval: int
    wall_time: float
    coast_margins: dict = field(default_factory=dict)

    def diagnostics(self) -> dict:
        return {
            "branch": self.branch,
            "u": list(map(float, np.atleast_1d(self.u))),
            "slack": self.slack,
            "objective": self.objective,
            "residuals": list(map(float, np.atleast_1d(self.residuals))),
            "soft_residuals": list(self.soft_residuals),
            "lyapunov_value": self.lyapunov_value,
            "n_eval": self.n_eval,
            "wall_time": self.wall_time,
        }


class GenericStack:
    """Pure-python constraint stack over the configured barrier specs.

    Semantically identical to the compiled docking stack; used as the
    fallback backend and as the reference in cross-validation tests.
    """

    def __init__(self, cfg: ControllerConfig, schedule: ImpulseSchedule):
        self.cfg = cfg
        self.schedule = schedule
        self._v_seg = SegmentedBoundConfig(cfg.n_psi_v)
        self.t = 0.0
        self.x = None
        self.V0 = 0.0

    def set_decision(self, t: float, x: np.ndarray) -> None:
        self.t = float(t)
        self.x = np.asarray(x, dtype=float)
        self.V0 = float(self.cfg.lyapunov.value(t, x))

    @property
    def lyapunov_value(self) -> float:
        return self.V0

    def _pieces(self, u):
        cfg = self.cfg
        t, dT = self.t, self.schedule.dT
        y = cfg.jump.eval(t, self.x, np.asarray(u, dtype=float))
        v_segments = psi_star(
            lambda tau, t0, s: float(psi_v(cfg.rate_bound, cfg.flow, tau, t0, s)),
            cfg.flow,
            cfg.integrator,
            self._v_seg,
            t + dT,
            t,
            y,
        )
        r1 = float(np.max(v_segments)) - cfg.gamma1 * self.V0
        r2 = float(cfg.lyapunov.value(t, y)) - cfg.gamma2 * self.V0
        hard = np.array(
            [float(np.max(np.asarray(b.bound(t + dT, t, y)))) for b in cfg.barriers]
        )
        return r1, r2, hard

    def objective(self, u, penalty_weight: float) -> float:
        r1, r2, hard = self._pieces(u)
        d = max(0.0, r1, r2)
        uu = float(np.dot(u, u))
        pen = float(np.sum(np.maximum(0.0, hard) ** 2))
        return uu + self.cfg.slack_weight * d * d + penalty_weight * pen

    def max_hard_residual(self, u) -> float:
        _, _, hard = self._pieces(u)
        return float(np.max(hard)) if hard.size else -np.inf

    def soft_residuals(self, u) -> tuple[float, float]:
        r1, r2, _ = self._pieces(u)
        return r1, r2

    def detail(self, u) -> dict:
        r1, r2, hard = self._pieces(u)
        d = max(0.0, r1, r2)
        return {
            "objective": float(np.dot(u, u)) + self.cfg.slack_weight * d * d,
            "slack": d,
            "soft_residuals": (r1, r2),
            "hard_residuals": hard,
            "max_hard_residual": float(np.max(hard)) if hard.size else -np.inf,
            "lyapunov_value": self.V0,
        }


class _StackObjective:
    """Binds a stack and penalty weight into a plain f(u) callable."""

    __slots__ = ("stack", "weight", "n_eval")

    def __init__(self, stack):
        self.stack = stack
        self.weight = 0.0
        self.n_eval = 0

    def __call__(self, u):
        self.n_eval += 1
        return self.stack.objective(u, self.weight)


def _starts(cfg: ControllerConfig, t: float, x: np.ndarray) -> list[np.ndarray]:
    s = cfg.solver
    rng = np.random.default_rng(s.seed)
    starts = [np.zeros(cfg.m)]
    if cfg.braking_start is not None:
        brake = np.asarray(cfg.braking_start(t, x), dtype=float)
        starts.append(brake)
    n_random = s.n_random_starts + (1 if cfg.braking_start is None else 0)
    for _ in range(n_random):
        starts.append(rng.normal(scale=s.random_scale, size=cfg.m))
    return starts


def solve_impulse(
    cfg: ControllerConfig,
    schedule: ImpulseSchedule,
    t: float,
    x: np.ndarray,
    stack=None,
) -> ControlDecision:
    """Solve the slack-relaxed impulse program at one opportunity."""
    t_start = time.perf_counter()
    x = np.asarray(x, dtype=float)
    stack = stack if stack is not None else cfg.stack(schedule)
    stack.set_decision(t, x)
    s = cfg.solver
    fobj = _StackObjective(stack, cfg.m)

    chains = _starts(cfg, t, x)
    weight = s.penalty_initial
    scale = max(s.random_scale, 1e-3)
    for rnd in range(s.penalty_rounds):
        fobj.weight = weight
        simplex = max(scale * 0.3**rnd, 1e-6)
        new_chains = []
        for u0 in chains:
            u_best, _, _ = nelder_mead(
                fobj, list(u0), scale=simplex, xatol=s.xatol, max_eval=s.round_max_eval
            )
            new_chains.append(np.array(u_best))
        chains = new_chains
        weight *= s.penalty_growth
    final_weight = weight / s.penalty_growth

    # rank chains: feasible ones by base objective, then polish the winner
    fobj.weight = final_weight
    ranked = []
    for u in chains:
        if cfg.m == 2 and fobj.compiled2:
            mh = stack.max_hard_residual(u[0], u[1])
        else:
            mh = stack.max_hard_residual(np.asarray(u, dtype=float))
        det = stack.detail(u[0], u[1]) if fobj.compiled2 else stack.detail(u)
        ranked.append((mh > s.feasibility_tol, det["objective"], tuple(u), u, mh))
    ranked.sort(key=lambda r: (r[0], r[1], r[2]))
    u_best = ranked[0][3]

    u_pol, _, _ = nelder_mead(
        fobj,
        list(u_best),
        scale=max(1e-5 * scale, 1e-8),
        xatol=s.polish_xatol,
        fatol=1e-18,
        max_eval=s.polish_max_eval,
    )
    u_pol = np.array(u_pol)
    det_pol = stack.detail(u_pol[0], u_pol[1]) if fobj.compiled2 else stack.detail(u_pol)
    det_old = stack.detail(u_best[0], u_best[1]) if fobj.compiled2 else stack.detail(u_best)
    feas_pol = det_pol["max_hard_residual"] <= s.feasibility_tol
    feas_old = det_old["max_hard_residual"] <= s.feasibility_tol
    if (feas_pol, det_pol["objective"]) <= (feas_old is False, det_old["objective"]) or (
        feas_pol and not feas_old
    ):
        pass
    if feas_pol and (not feas_old or det_pol["objective"] <= det_old["objective"]):
        u_final, det = u_pol, det_pol
    elif feas_old:
        u_final, det = u_best, det_old
    else:
        u_final, det = (u_pol, det_pol) if det_pol["max_hard_residual"] < det_old[
            "max_hard_residual"
        ] else (u_best, det_old)

    if det["max_hard_residual"] > s.feasibility_tol:
        raise InfeasibleError(
            f"no impulse meets the hard barrier constraints at t={t:.3f} "
            f"(best residual {det['max_hard_residual']:.3e})",
            best_u=u_final,
            residuals=det["hard_residuals"],
        )
    return ControlDecision(
        u=u_final,
        branch="impulse",
        slack=float(det["slack"]),
        objective=float(det["objective"]),
        residuals=np.asarray(det["hard_residuals"], dtype=float),
        soft_residuals=tuple(map(float, det["soft_residuals"])),
        lyapunov_value=float(det["lyapunov_value"]),
        n_eval=fobj.n_eval,
        wall_time=time.perf_counter() - t_start,
    )


def decide(
    cfg: ControllerConfig,
    schedule: ImpulseSchedule,
    t: float,
    sigma: float,
    x: np.ndarray,
    stack=None,
) -> ControlDecision:
    """Coast when certified; otherwise solve for the impulse.

    The coast branch requires the Vdot bound over the next sample period to
    stay below ``gamma1 * V`` and every barrier bound over the same period
    to be nonpositive. Coast is preferred whenever admissible.
    """
    t_start = time.perf_counter()
    x = np.asarray(x, dtype=float)
    w0 = float(cfg.lyapunov.value(t, x))
    vb = float(psi_v(cfg.rate_bound, cfg.flow, t + schedule.dt, t, x))
    v_ok = vb <= cfg.gamma1 * w0
    verdict = coast_condition(cfg.barriers, schedule, t, x)
    if v_ok and verdict.satisfied:
        return ControlDecision(
            u=np.zeros(cfg.m),
            branch="coast",
            slack=0.0,
            objective=0.0,
            residuals=np.array([verdict.worst_value]),
            soft_residuals=(vb - cfg.gamma1 * w0, 0.0),
            lyapunov_value=w0,
            n_eval=0,
            wall_time=time.perf_counter() - t_start,
            coast_margins={"v_bound": vb - cfg.gamma1 * w0, "h_bound": verdict.worst_value},
        )
    decision = solve_impulse(cfg, schedule, t, x, stack=stack)
    return ControlDecision(
        u=decision.u,
        branch="impulse",
        slack=decision.slack,
        objective=decision.objective,
        residuals=decision.residuals,
        soft_residuals=decision.soft_residuals,
        lyapunov_value=decision.lyapunov_value,
        n_eval=decision.n_eval,
        wall_time=time.perf_counter() - t_start,
        coast_margins={"v_bound": vb - cfg.gamma1 * w0, "h_bound": verdict.worst_value},
    )
