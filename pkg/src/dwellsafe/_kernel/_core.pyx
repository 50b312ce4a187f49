# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the planar two-body docking benchmark.

Two pieces live here because they dominate runtime:

* an adaptive Dormand-Prince 5(4) propagator hard-wired to the planar
  two-body flow (the step logic mirrors ``dwellsafe.integrate`` exactly), and
* ``DockingStack``, the per-candidate constraint stack evaluated thousands
  of times per impulse decision by the derivative-free solver.

Everything here is also available through pure NumPy code paths; the tests
cross-validate the two.
"""

from libc.math cimport sqrt, fabs, sin, cos, fmax, fmin, isfinite, pow

import numpy as np

from dwellsafe.errors import PropagationError, SingularityError

__all__ = ["tb_propagate", "tb_propagate_path", "DockingStack"]

DEF MAX_GRID = 64


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4), specialized to xdot = (x3, x4, -mu*x1/r^3, -mu*x2/r^3)
# ---------------------------------------------------------------------------

cdef inline int _tb_rhs(double mu, const double* y, double* out) nogil:
    cdef double r2 = y[0] * y[0] + y[1] * y[1]
    if r2 <= 0.0:
        return 1
    cdef double inv_r3 = 1.0 / (r2 * sqrt(r2))
    out[0] = y[2]
    out[1] = y[3]
    out[2] = -mu * y[0] * inv_r3
    out[3] = -mu * y[1] * inv_r3
    if not (isfinite(out[2]) and isfinite(out[3])):
        return 1
    return 0


cdef double _C2 = 1.0 / 5.0
cdef double _C3 = 3.0 / 10.0
cdef double _C4 = 4.0 / 5.0
cdef double _C5 = 8.0 / 9.0

cdef double _A21 = 1.0 / 5.0
cdef double _A31 = 3.0 / 40.0
cdef double _A32 = 9.0 / 40.0
cdef double _A41 = 44.0 / 45.0
cdef double _A42 = -56.0 / 15.0
cdef double _A43 = 32.0 / 9.0
cdef double _A51 = 19372.0 / 6561.0
cdef double _A52 = -25360.0 / 2187.0
cdef double _A53 = 64448.0 / 6561.0
cdef double _A54 = -212.0 / 729.0
cdef double _A61 = 9017.0 / 3168.0
cdef double _A62 = -355.0 / 33.0
cdef double _A63 = 46732.0 / 5247.0
cdef double _A64 = 49.0 / 176.0
cdef double _A65 = -5103.0 / 18656.0

cdef double _B1 = 35.0 / 384.0
cdef double _B3 = 500.0 / 1113.0
cdef double _B4 = 125.0 / 192.0
cdef double _B5 = -2187.0 / 6784.0
cdef double _B6 = 11.0 / 84.0

cdef double _E1 = 71.0 / 57600.0
cdef double _E3 = -71.0 / 16695.0
cdef double _E4 = 71.0 / 1920.0
cdef double _E5 = -17253.0 / 339200.0
cdef double _E6 = 22.0 / 525.0
cdef double _E7 = -1.0 / 40.0


cdef int _advance(double mu, double t0, double t1, double* y,
                  double rtol, double atol, double max_step,
                  double* k1, bint have_k1, double* t_fail) nogil:
    """Advance y in place from t0 to t1. Returns 0 ok, 1 bad rhs, 2 underflow.

    k1 carries the FSAL stage across calls when have_k1 is true; on return
    it holds the derivative at (t1, y).
    """
    cdef double span = t1 - t0
    if not have_k1:
        if _tb_rhs(mu, y, k1):
            t_fail[0] = t0
            return 1
    if span == 0.0:
        return 0
    cdef double direction = 1.0 if span > 0.0 else -1.0
    cdef double t = t0
    cdef double h = direction * fmin(max_step, fabs(span))
    cdef double h_abs, err, scale, acc, factor, ev
    cdef double k2[4]
    cdef double k3[4]
    cdef double k4[4]
    cdef double k5[4]
    cdef double k6[4]
    cdef double k7[4]
    cdef double ys[4]
    cdef double ynew[4]
    cdef int i
    while (t1 - t) * direction > 0.0:
        h_abs = fmin(fmin(fabs(h), max_step), fabs(t1 - t))
        if h_abs < 1e-13 * fmax(1.0, fabs(t)):
            t_fail[0] = t
            return 2
        h = direction * h_abs
        for i in range(4):
            ys[i] = y[i] + h * _A21 * k1[i]
        if _tb_rhs(mu, ys, k2):
            t_fail[0] = t
            return 1
        for i in range(4):
            ys[i] = y[i] + h * (_A31 * k1[i] + _A32 * k2[i])
        if _tb_rhs(mu, ys, k3):
            t_fail[0] = t
            return 1
        for i in range(4):
            ys[i] = y[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        if _tb_rhs(mu, ys, k4):
            t_fail[0] = t
            return 1
        for i in range(4):
            ys[i] = y[i] + h * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
        if _tb_rhs(mu, ys, k5):
            t_fail[0] = t
            return 1
        for i in range(4):
            ys[i] = y[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i]
                                + _A64 * k4[i] + _A65 * k5[i])
        if _tb_rhs(mu, ys, k6):
            t_fail[0] = t
            return 1
        for i in range(4):
            ynew[i] = y[i] + h * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i]
                                  + _B5 * k5[i] + _B6 * k6[i])
        if _tb_rhs(mu, ynew, k7):
            t_fail[0] = t
            return 1
        acc = 0.0
        for i in range(4):
            ev = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i]
                      + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i])
            scale = atol + rtol * fmax(fabs(y[i]), fabs(ynew[i]))
            acc += (ev / scale) * (ev / scale)
        err = sqrt(acc / 4.0)
        if err <= 1.0:
            t = t + h
            for i in range(4):
                y[i] = ynew[i]
                k1[i] = k7[i]
            factor = 5.0 if err == 0.0 else fmin(5.0, 0.9 * pow(err, -0.2))
            h = h * factor
        else:
            h = h * fmax(0.2, 0.9 * pow(err, -0.2))
    return 0


def tb_propagate(double mu, double t0, double t1, y0,
                 double rtol, double atol, double max_step):
    """Propagate a 4-state two-body state from t0 to t1."""
    cdef double y[4]
    cdef double k1[4]
    cdef double t_fail = 0.0
    cdef double[::1] yv = np.ascontiguousarray(y0, dtype=np.float64)
    cdef int i, status
    for i in range(4):
        y[i] = yv[i]
    status = _advance(mu, t0, t1, y, rtol, atol, max_step, k1, False, &t_fail)
    if status:
        msg = "non-finite derivative" if status == 1 else "step size underflow"
        raise PropagationError(msg, t_fail, np.array([y[0], y[1], y[2], y[3]]))
    return np.array([y[0], y[1], y[2], y[3]])


def tb_propagate_path(double mu, double t0, ts, y0,
                      double rtol, double atol, double max_step):
    """Propagate through monotone output times ``ts``, chaining segments."""
    cdef double[::1] tv = np.ascontiguousarray(ts, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y0, dtype=np.float64)
    cdef int n = tv.shape[0]
    out_arr = np.empty((n, 4))
    cdef double[:, ::1] out
    cdef double y[4]
    cdef double k1[4]
    cdef double t_fail = 0.0
    cdef double t = t0
    cdef int i, j, status
    cdef bint have_k1 = False
    for i in range(4):
        y[i] = yv[i]
    if n == 0:
        return out_arr
    out = out_arr
    for j in range(n):
        status = _advance(mu, t, tv[j], y, rtol, atol, max_step, k1, have_k1, &t_fail)
        if status:
            msg = "non-finite derivative" if status == 1 else "step size underflow"
            raise PropagationError(msg, t_fail, np.array([y[0], y[1], y[2], y[3]]))
        have_k1 = True
        t = tv[j]
        for i in range(4):
            out[j, i] = y[i]
    return out_arr


# ---------------------------------------------------------------------------
# Per-decision constraint stack for the docking benchmark
# ---------------------------------------------------------------------------

cdef class DockingStack:
    """Evaluates the impulse-decision objective for one (t, x) decision point.

    Obstacle centers and the target ride circular paths: position
    ``R (cos th, sin th)`` with ``th = phase + omega * t``; velocity and
    acceleration follow kinematically. The tracking function is the
    quadratic form ``V = (x - x_t)' P (x - x_t)`` against the target path.
    """

    cdef double mu, gamma1, gamma2, slack_weight, dwell
    cdef double delta_h, delta_v, vddd_max
    cdef double tgt_R, tgt_phase, tgt_omega
    cdef double hp_gamma, hp_kddmax
    cdef bint hp_enabled
    cdef double[:, ::1] obstacles  # rows: R, phase, omega, rho, gamma, kddmax
    cdef double[:, ::1] P
    cdef double rtol, atol, max_step
    cdef int n_obs, n_h, n_v, n_grid
    cdef double[::1] grid_rel     # sorted unique segment-start offsets, first 0
    cdef long[::1] h_idx
    cdef long[::1] v_idx
    cdef double t0, V0
    cdef double x0[4]

    def __init__(self, double mu, obstacles, halfplane, target, P,
                 double gamma1, double gamma2, double slack_weight,
                 double dwell, int n_h, int n_v, double vddd_max,
                 double rtol, double atol, double max_step):
        self.mu = mu
        self.obstacles = np.ascontiguousarray(obstacles, dtype=np.float64).reshape(-1, 6)
        self.n_obs = self.obstacles.shape[0]
        if halfplane is None:
            self.hp_enabled = False
            self.hp_gamma = 1.0
            self.hp_kddmax = 0.0
        else:
            self.hp_enabled = True
            self.hp_gamma = halfplane[0]
            self.hp_kddmax = halfplane[1]
        self.tgt_R = target[0]
        self.tgt_phase = target[1]
        self.tgt_omega = target[2]
        self.P = np.ascontiguousarray(P, dtype=np.float64).reshape(4, 4)
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.slack_weight = slack_weight
        self.dwell = dwell
        self.n_h = n_h
        self.n_v = n_v
        self.delta_h = dwell / n_h
        self.delta_v = dwell / n_v
        self.vddd_max = vddd_max
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        rel = np.unique(np.concatenate([
            np.arange(n_h) * self.delta_h,
            np.arange(n_v) * self.delta_v,
        ]))
        self.grid_rel = np.ascontiguousarray(rel)
        self.n_grid = self.grid_rel.shape[0]
        if self.n_grid > MAX_GRID:
            raise ValueError("too many prediction segments (grid cap %d)" % MAX_GRID)
        self.h_idx = np.searchsorted(rel, np.arange(n_h) * self.delta_h).astype(np.int64)
        self.v_idx = np.searchsorted(rel, np.arange(n_v) * self.delta_v).astype(np.int64)
        self.t0 = 0.0
        self.V0 = 0.0

    # -- target/Lyapunov helpers ------------------------------------------

    cdef void _target_state(self, double t, double* xt) nogil:
        cdef double th = self.tgt_phase + self.tgt_omega * t
        cdef double c = cos(th)
        cdef double s = sin(th)
        xt[0] = self.tgt_R * c
        xt[1] = self.tgt_R * s
        xt[2] = -self.tgt_R * self.tgt_omega * s
        xt[3] = self.tgt_R * self.tgt_omega * c

    cdef double _quad(self, const double* a, const double* b) nogil:
        # a' P b
        cdef double acc = 0.0
        cdef int i, j
        for i in range(4):
            for j in range(4):
                acc += a[i] * self.P[i, j] * b[j]
        return acc

    cdef double _lyap(self, double t, const double* x) nogil:
        cdef double xt[4]
        cdef double z[4]
        cdef int i
        self._target_state(t, xt)
        for i in range(4):
            z[i] = x[i] - xt[i]
        return self._quad(z, z)

    cdef int _v_rates(self, double t, const double* x, double* vdot, double* vddot) nogil:
        """First and second time derivatives of V along the uncontrolled flow."""
        cdef double xt[4]
        cdef double z[4]
        cdef double zd[4]
        cdef double zdd[4]
        cdef double r2, inv_r3, inv_r5, rv, ax, ay, jx, jy, w2
        cdef int i
        self._target_state(t, xt)
        for i in range(4):
            z[i] = x[i] - xt[i]
        r2 = x[0] * x[0] + x[1] * x[1]
        if r2 <= 0.0:
            return 1
        inv_r3 = 1.0 / (r2 * sqrt(r2))
        inv_r5 = inv_r3 / r2
        rv = x[0] * x[2] + x[1] * x[3]
        # chaser acceleration and jerk; target ones are kinematic (circular)
        ax = -self.mu * x[0] * inv_r3
        ay = -self.mu * x[1] * inv_r3
        jx = -self.mu * (x[2] * inv_r3 - 3.0 * x[0] * rv * inv_r5)
        jy = -self.mu * (x[3] * inv_r3 - 3.0 * x[1] * rv * inv_r5)
        w2 = self.tgt_omega * self.tgt_omega
        zd[0] = x[2] - xt[2]
        zd[1] = x[3] - xt[3]
        zd[2] = ax + w2 * xt[0]
        zd[3] = ay + w2 * xt[1]
        zdd[0] = zd[2]
        zdd[1] = zd[3]
        zdd[2] = jx + w2 * xt[2]
        zdd[3] = jy + w2 * xt[3]
        vdot[0] = 2.0 * self._quad(z, zd)
        vddot[0] = 2.0 * self._quad(zd, zd) + 2.0 * self._quad(z, zdd)
        return 0

    # -- barrier helpers ----------------------------------------------------

    cdef int _obstacle_pair(self, int i, double t, const double* x,
                            double* kap, double* kapdot) nogil:
        """kappa and kappa-dot against obstacle i at time t."""
        cdef double R = self.obstacles[i, 0]
        cdef double th = self.obstacles[i, 1] + self.obstacles[i, 2] * t
        cdef double om = self.obstacles[i, 2]
        cdef double rho = self.obstacles[i, 3]
        cdef double cx = R * cos(th)
        cdef double cy = R * sin(th)
        cdef double cvx = -R * om * sin(th)
        cdef double cvy = R * om * cos(th)
        cdef double dx = x[0] - cx
        cdef double dy = x[1] - cy
        cdef double dist = sqrt(dx * dx + dy * dy)
        if dist < 1e-9 * rho:
            return 1
        cdef double ex = dx / dist
        cdef double ey = dy / dist
        kap[0] = rho - dist
        kapdot[0] = -(ex * (x[2] - cvx) + ey * (x[3] - cvy))
        return 0

    cdef int _halfplane_pair(self, double t, const double* x,
                             double* kap, double* kapdot) nogil:
        """Along-track lead of the chaser ahead of the target, and its rate."""
        cdef double xt[4]
        self._target_state(t, xt)
        cdef double sp = sqrt(xt[2] * xt[2] + xt[3] * xt[3])
        if sp <= 0.0:
            return 1
        cdef double nx = xt[2] / sp
        cdef double ny = xt[3] / sp
        cdef double dx = x[0] - xt[0]
        cdef double dy = x[1] - xt[1]
        cdef double ddx = x[2] - xt[2]
        cdef double ddy = x[3] - xt[3]
        # target acceleration (kinematic circular)
        cdef double w2 = self.tgt_omega * self.tgt_omega
        cdef double aax = -w2 * xt[0]
        cdef double aay = -w2 * xt[1]
        cdef double sdot = nx * aax + ny * aay
        cdef double nxd = (aax - nx * sdot) / sp
        cdef double nyd = (aay - ny * sdot) / sp
        kap[0] = dx * nx + dy * ny
        kapdot[0] = ddx * nx + ddy * ny + dx * nxd + dy * nyd
        return 0

    cdef inline double _psi_seg(self, double kap, double kapdot,
                                double gamma, double kddmax, double delta) nogil:
        cdef double h = kap + gamma * kapdot
        cdef double taylor = kap + (gamma + delta) * kapdot \
            + (0.5 * delta * delta + gamma * delta) * kddmax
        return fmax(h, taylor)

    # -- public API ---------------------------------------------------------

    def set_decision(self, double t, x):
        cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        cdef int i
        self.t0 = t
        for i in range(4):
            self.x0[i] = xv[i]
        self.V0 = self._lyap(t, self.x0)

    @property
    def lyapunov_value(self):
        return self.V0

    def objective(self, double u1, double u2, double penalty_weight):
        """Exact-penalty objective: u'u + J d^2 + w * sum(max(0, hard)^2)."""
        cdef double F = 0.0
        cdef double mh = 0.0
        self._evaluate(u1, u2, &F, &mh, penalty_weight, NULL)
        return F

    def max_hard_residual(self, double u1, double u2):
        cdef double F = 0.0
        cdef double mh = 0.0
        self._evaluate(u1, u2, &F, &mh, 0.0, NULL)
        return mh

    def soft_residuals(self, double u1, double u2):
        cdef double r1 = 0.0
        cdef double r2 = 0.0
        self._evaluate_soft(u1, u2, &r1, &r2)
        return r1, r2

    def detail(self, double u1, double u2):
        """Diagnostics: slack, objective pieces and the hard residual vector."""
        cdef int n_hard = self.n_obs + (1 if self.hp_enabled else 0)
        hard = np.empty(n_hard)
        cdef double[::1] hv = hard
        cdef double F = 0.0
        cdef double mh = 0.0
        self._evaluate(u1, u2, &F, &mh, 0.0, &hv[0])
        r1, r2 = self.soft_residuals(u1, u2)
        d = max(0.0, r1, r2)
        return {
            "objective": u1 * u1 + u2 * u2 + self.slack_weight * d * d,
            "slack": d,
            "soft_residuals": (r1, r2),
            "hard_residuals": hard,
            "max_hard_residual": mh,
            "lyapunov_value": self.V0,
        }

    cdef int _propagate_grid(self, double u1, double u2, double* states) except -1:
        """Fill states[4*g] with the post-impulse flow at each grid offset."""
        cdef double y[4]
        cdef double k1[4]
        cdef double t_fail = 0.0
        cdef int g, i, status
        cdef bint have_k1 = False
        y[0] = self.x0[0]
        y[1] = self.x0[1]
        y[2] = self.x0[2] + u1
        y[3] = self.x0[3] + u2
        for i in range(4):
            states[i] = y[i]
        for g in range(1, self.n_grid):
            status = _advance(self.mu, self.t0 + self.grid_rel[g - 1],
                              self.t0 + self.grid_rel[g], y,
                              self.rtol, self.atol, self.max_step,
                              k1, have_k1, &t_fail)
            if status:
                msg = "non-finite derivative" if status == 1 else "step size underflow"
                raise PropagationError(msg, t_fail, np.array([y[0], y[1], y[2], y[3]]))
            have_k1 = True
            for i in range(4):
                states[4 * g + i] = y[i]
        return 0

    cdef int _evaluate_soft(self, double u1, double u2, double* r1, double* r2) except -1:
        cdef double states[256]
        self._propagate_grid(u1, u2, states)
        self._soft_from_states(states, r1, r2)
        return 0

    cdef int _soft_from_states(self, double* states, double* r1, double* r2) except -1:
        cdef double vdot = 0.0
        cdef double vddot = 0.0
        cdef double val, worst, tau
        cdef int j, g
        worst = -1e308
        for j in range(self.n_v):
            g = self.v_idx[j]
            tau = self.t0 + self.grid_rel[g]
            if self._v_rates(tau, &states[4 * g], &vdot, &vddot):
                raise SingularityError("gravity singularity in prediction")
            val = vdot + fmax(0.0, vddot) * self.delta_v \
                + 0.5 * self.vddd_max * self.delta_v * self.delta_v
            if val > worst:
                worst = val
        r1[0] = worst - self.gamma1 * self.V0
        r2[0] = self._lyap(self.t0, states) - self.gamma2 * self.V0
        return 0

    cdef int _evaluate(self, double u1, double u2, double* F_out, double* max_hard,
                       double penalty_weight, double* hard_out) except -1:
        cdef double states[256]
        cdef double r1 = 0.0
        cdef double r2 = 0.0
        cdef double kap = 0.0
        cdef double kapdot = 0.0
        cdef double d, val, worst, res, pen, mh, tau
        cdef int i, j, g, hi
        self._propagate_grid(u1, u2, states)
        self._soft_from_states(states, &r1, &r2)
        d = fmax(0.0, fmax(r1, r2))
        pen = 0.0
        mh = -1e308
        hi = 0
        for i in range(self.n_obs):
            worst = -1e308
            for j in range(self.n_h):
                g = self.h_idx[j]
                tau = self.t0 + self.grid_rel[g]
                if self._obstacle_pair(i, tau, &states[4 * g], &kap, &kapdot):
                    raise SingularityError("barrier evaluated at the obstacle center")
                val = self._psi_seg(kap, kapdot, self.obstacles[i, 4],
                                    self.obstacles[i, 5], self.delta_h)
                if val > worst:
                    worst = val
            if hard_out != NULL:
                hard_out[hi] = worst
            hi += 1
            if worst > mh:
                mh = worst
            res = fmax(0.0, worst)
            pen += res * res
        if self.hp_enabled:
            worst = -1e308
            for j in range(self.n_h):
                g = self.h_idx[j]
                tau = self.t0 + self.grid_rel[g]
                if self._halfplane_pair(tau, &states[4 * g], &kap, &kapdot):
                    raise SingularityError("degenerate target velocity")
                val = self._psi_seg(kap, kapdot, self.hp_gamma,
                                    self.hp_kddmax, self.delta_h)
                if val > worst:
                    worst = val
            if hard_out != NULL:
                hard_out[hi] = worst
            if worst > mh:
                mh = worst
            res = fmax(0.0, worst)
            pen += res * res
        F_out[0] = u1 * u1 + u2 * u2 + self.slack_weight * d * d + penalty_weight * pen
        max_hard[0] = mh
        return 0
