"""Per-node nonlinear least squares with neighbors held fixed.

Each epoch every node refines its own state by solving three small
unconstrained problems against the estimates its neighbors published at the
start of the epoch: clock offset and position from the one-way counter
differences, the same pair from the reply-leg residuals, and frequency bias
and position from the rate-corrected two-way ranges. The per-problem
solutions are then combined and broadcast.

The one-way stamps drift by (clock-rate difference) x (turnaround interval)
between the legs of an exchange, which at ppm rates over millisecond
turnarounds is meters of range-equivalent error, so both one-way residuals
are predicted including that drift. The rate estimates involved are the
frozen published ones, keeping each sub-problem's unknowns untouched.

All residuals are expressed in meters and the clock variables are scaled by
the speed of light, so every Jacobian column is O(1). The inner solver is
adaptively damped, which both traverses the strongly nonlinear early epochs
(clock errors put the per-problem minimum kilometers away in scaled
coordinates) and regularizes the underdetermined single-neighbor case.
"""

import numpy as np

from ..constants import (
    BIAS_INDEX,
    DEFAULT_PRIOR_SIGMA_BIAS,
    DEFAULT_PRIOR_SIGMA_OFFSET,
    DEFAULT_PRIOR_SIGMA_POS,
    DEFAULT_TIMESTAMP_STD,
    OFFSET_INDEX,
    SPEED_OF_LIGHT as C,
    STATE_DIM,
)
from .. import model
from ..errors import ConfigError, SingularityError
from ..model import NodeState
from .base import COINCIDENCE_NUDGE, NetworkEstimatorBase

MAX_ITER = 40
# converged when max|grad| <= GRAD_TOL * (1 + residual norm): the gradient
# vanishes at any interior minimum, however large the misfit there is
GRAD_TOL = 1e-6
STEP_TOL = 1e-9
DAMPING_INIT = 1e-3
DAMPING_SHRINK = 1.0 / 3.0
DAMPING_GROW = 10.0
DAMPING_MAX = 1e12

VARIANTS = ("type3", "type2")

# the three sub-problems, keyed by which clock entry they estimate
PROBLEM_NAMES = ("counter", "reply", "rate")


class JacobiLeastSquares(NetworkEstimatorBase):
    """Memoryless per-epoch refinement; no covariance, no time update."""

    def __init__(self, topology=None, master=0, epoch_period=0.5,
                 timestamp_std=DEFAULT_TIMESTAMP_STD,
                 offset_density=0.0, bias_density=0.0,
                 prior_position_std=DEFAULT_PRIOR_SIGMA_POS,
                 prior_offset_std=DEFAULT_PRIOR_SIGMA_OFFSET,
                 prior_bias_std=DEFAULT_PRIOR_SIGMA_BIAS,
                 mobile_nodes=(), mobile_position_std=0.0,
                 initial_positions=None, variant="type3",
                 position_relaxation=0.25):
        super().__init__(topology=topology, master=master,
                         epoch_period=epoch_period, timestamp_std=timestamp_std,
                         offset_density=offset_density,
                         bias_density=bias_density,
                         prior_position_std=prior_position_std,
                         prior_offset_std=prior_offset_std,
                         prior_bias_std=prior_bias_std,
                         mobile_nodes=mobile_nodes,
                         mobile_position_std=mobile_position_std,
                         initial_positions=initial_positions)
        self.variant = variant
        self.position_relaxation = position_relaxation

    def _setup_state(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if not 0.0 < self.position_relaxation <= 1.0:
            raise ConfigError("position_relaxation must be in (0, 1]")
        self._est = self._initial_state_matrix()
        self.posterior_ = self._est.copy()
        self.converged_ = np.ones(self.n_nodes_, dtype=bool)
        self.objective_history_ = []

    def _step_impl(self, batch):
        incident = {k: [] for k in range(self.n_nodes_)}
        for rec, z in batch.items:
            incident[rec.sender_id].append((rec, z))
            incident[rec.receiver_id].append((rec, z))

        prev = self._est  # published estimates all nodes read this epoch
        new = prev.copy()
        converged = np.ones(self.n_nodes_, dtype=bool)
        epoch_hist = {}
        for k in range(self.n_nodes_):
            if not incident[k]:
                continue
            est, ok, hist = self._solve_node(k, prev, incident[k])
            epoch_hist[k] = hist
            converged[k] = ok
            if ok:
                new[k] = est
                if k not in self._mobile:
                    # static nodes: smooth the published position, since the
                    # per-epoch solves are memoryless and measurement-noisy
                    gain = self.position_relaxation
                    new[k][:3] = prev[k][:3] + gain * (est[:3] - prev[k][:3])

        self._est = new
        self.converged_ = converged
        self.objective_history_.append(epoch_hist)
        self.posterior_ = self._est.copy()

    # -- per-node solve ---------------------------------------------------

    def _solve_node(self, k, estimates, items):
        """Solve the three sub-problems for node k; returns (state, ok, hist)."""
        own = estimates[k]
        is_master = k == self.master
        hist = {}
        positions, ok = [], True

        rate_rows = ("r",) if self.variant == "type2" else ("R",)
        problems = (
            ("counter", OFFSET_INDEX, self._counter_residuals),
            ("reply", OFFSET_INDEX, self._reply_residuals),
            ("rate", BIAS_INDEX, lambda *a: self._rate_residuals(*a, rate_rows)),
        )

        clock_sums = {OFFSET_INDEX: [], BIAS_INDEX: []}
        for name, clock_idx, builder in problems:
            theta0 = own[:3].copy() if is_master else np.concatenate(
                [own[:3], [C * own[clock_idx]]])
            fn = self._residual_fn(k, estimates, items, clock_idx, builder,
                                   is_master)
            res0 = fn(theta0, False)[0]
            if res0.size == 0:
                continue
            fn = self._anchored(fn, theta0, clock_idx, res0)
            theta, conv, obj_hist = _damped_least_squares(theta0, fn)
            hist[name] = obj_hist
            ok = ok and conv
            positions.append(theta[:3])
            if not is_master:
                clock_sums[clock_idx].append(theta[3] / C)

        if not positions:
            return own.copy(), True, hist

        out = own.copy()
        out[:3] = np.mean(positions, axis=0)
        if clock_sums[OFFSET_INDEX]:
            out[OFFSET_INDEX] = np.mean(clock_sums[OFFSET_INDEX])
        if clock_sums[BIAS_INDEX]:
            out[BIAS_INDEX] = np.mean(clock_sums[BIAS_INDEX])
        return out, ok, hist

    def _anchored(self, fn, theta0, clock_idx, res0):
        """Regularize a sub-problem: misfit-weighted rows, anchored variables.

        Unsynchronized clocks contaminate the offset-bearing rows at the
        kilometer scale (in light-distance units), and the bare per-problem
        minimum then puts positions kilometers off as well. Two standard
        ingredients keep each epoch's correction physically plausible without
        moving any stationary point. Data rows are weighted by the inverse of
        the problem's current RMS misfit (floored at the timestamp noise
        scale), so a problem that cannot yet be fit to within noise exerts
        correspondingly little pull. And every variable is anchored to its
        current value at the filter's prior scale, so weakly informed
        directions stay put instead of chasing inconsistent rows. Offsets
        keep moving under both terms (their prior scale matches the clock
        error scale), so the clock consensus proceeds while positions wait
        for rows they can actually explain; wherever the outer iteration
        settles, both terms' gradients vanish.
        """
        clock_std = (self.prior_offset_std if clock_idx == OFFSET_INDEX
                     else self.prior_bias_std)
        sig = np.full(theta0.size, self.prior_position_std, dtype=float)
        if theta0.size > 3:
            sig[3] = C * clock_std
        if np.any(sig <= 0.0):
            raise ConfigError("prior scales must be positive for this solver")
        inv_sig = np.diag(1.0 / sig)
        floor = C * self._stamp_std
        sw = 1.0 / max(float(np.sqrt(np.mean(res0 ** 2))), floor)

        def wrapped(theta, need_jac=True):
            res, jac = fn(theta, need_jac)
            res = np.concatenate([sw * res, (theta - theta0) / sig])
            if need_jac:
                jac = np.vstack([sw * jac, inv_sig])
            return res, jac

        return wrapped

    def _residual_fn(self, k, estimates, items, clock_idx, builder, is_master):
        def fn(theta, need_jac=True):
            state = estimates[k].copy()
            state[:3] = theta[:3]
            if not is_master:
                state[clock_idx] = theta[3] / C
            res, jac = builder(k, state, estimates, items, need_jac)
            if need_jac and res.size and is_master:
                jac = jac[:, :3]
            return res, jac

        return fn

    # -- residual builders: rows in meters, columns [p, c*clock] ----------

    def _counter_residuals(self, k, state, estimates, items, need_jac):
        return self._model_rows(k, state, estimates, items, ("d",), C,
                                OFFSET_INDEX, need_jac)

    def _rate_residuals(self, k, state, estimates, items, need_jac, rows):
        return self._model_rows(k, state, estimates, items, rows, 1.0,
                                BIAS_INDEX, need_jac)

    def _model_rows(self, k, state, estimates, items, rows, res_scale,
                    clock_idx, need_jac):
        """Residuals/Jacobian for one measurement row type via the model."""
        res, jac = [], []
        for rec, z in items:
            if rows[0] not in model.available_rows(rec.msg_type):
                continue
            s, r = rec.sender_id, rec.receiver_id
            xs = state if s == k else estimates[s]
            xr = state if r == k else estimates[r]
            ns, nr = NodeState.from_vector(xs), NodeState.from_vector(xr)
            pred = model.predict_measurement(ns, nr, rec, rows).as_array(rows)[0]
            if rows[0] == "d":
                pred += _oneway_drift(rec, estimates, span_reply=False)
            res.append(res_scale * (z.as_array(rows)[0] - pred))
            if not need_jac:
                continue
            try:
                h_send = model.jacobian_H(ns, nr, rec, rows)[0]
            except SingularityError:
                nudged = ns.as_vector()
                nudged[0] -= COINCIDENCE_NUDGE
                h_send = model.jacobian_H(NodeState.from_vector(nudged), nr,
                                          rec, rows)[0]
            h = h_send if s == k else -h_send
            # residual = scale*(z - pred); d/dtheta = -scale * dpred/dtheta
            jac.append(np.concatenate([
                -res_scale * h[:3],
                [-res_scale * h[clock_idx] / C],
            ]))
        if not res:
            return np.empty(0), np.empty((0, 4))
        return np.asarray(res), np.asarray(jac) if need_jac else None

    def _reply_residuals(self, k, state, estimates, items, need_jac):
        """Reply-leg residuals c*(t2 - t3) - [(co_j - co_k) - D]."""
        res, jac = [], []
        for rec, _ in items:
            if rec.t2 is None or rec.t3 is None:
                continue
            s, r = rec.sender_id, rec.receiver_id
            xs = state if s == k else estimates[s]
            xr = state if r == k else estimates[r]
            delta = xr[:3] - xs[:3]
            dist = float(np.linalg.norm(delta))
            if dist <= 0.0:
                continue
            u = delta / dist
            z = C * (rec.t2 - rec.t3)
            pred = (C * (xr[OFFSET_INDEX] - xs[OFFSET_INDEX]) - dist
                    + C * _oneway_drift(rec, estimates, span_reply=True))
            res.append(z - pred)
            if not need_jac:
                continue
            if s == k:
                dpred = np.concatenate([u, [-1.0]])
            else:
                dpred = np.concatenate([-u, [1.0]])
            jac.append(-dpred)
        if not res:
            return np.empty(0), np.empty((0, 4))
        return np.asarray(res), np.asarray(jac) if need_jac else None


def _oneway_drift(rec, estimates, span_reply):
    """Clock-rate drift (s) accumulated over a one-way row's turnarounds.

    The reply leg t2 - t3 spans the first turnaround (none when the exchange
    opens with it); the final leg t5 - t4 spans every turnaround before it.
    A full three-message exchange measures its own rate gap: the first and
    final legs cover the same flight time, so their stamp differences differ
    by exactly chi times the covered turnarounds. Two-message exchanges fall
    back to the frozen published rate estimates of the endpoints.
    """
    if rec.msg_type == 3:
        covered = rec.t_rsp0 + rec.t_rsp1
        chi = ((rec.t1 - rec.t0) - (rec.t5 - rec.t4)) / covered
        span = rec.t_rsp0 if span_reply else covered
        return -chi * span
    if span_reply or rec.msg_type < 2:
        return 0.0
    chi = (estimates[rec.sender_id][BIAS_INDEX]
           - estimates[rec.receiver_id][BIAS_INDEX])
    return -chi * rec.t_rsp1


def _grad_small(grad, obj, grad_tol):
    return bool(np.max(np.abs(grad)) <= grad_tol * (1.0 + np.sqrt(2.0 * obj)))


def _damped_least_squares(theta0, residual_fn, max_iter=MAX_ITER,
                          grad_tol=GRAD_TOL, step_tol=STEP_TOL):
    """Adaptively damped Gauss-Newton; the objective strictly decreases.

    Rejected steps raise the damping, which shortens the step and bends it
    toward steepest descent, so strongly nonlinear stretches are crossed
    without a line search. Probe evaluations skip the Jacobian.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    res, jac = residual_fn(theta, True)
    obj = 0.5 * float(res @ res)
    history = [obj]
    converged = False
    lam = DAMPING_INIT
    eye = np.eye(theta.size)
    for _ in range(max_iter):
        grad = jac.T @ res
        if _grad_small(grad, obj, grad_tol):
            converged = True
            break
        normal = jac.T @ jac
        mu = max(1.0, float(np.max(np.diag(normal))))
        accepted = False
        while lam <= DAMPING_MAX:
            try:
                delta = np.linalg.solve(normal + lam * mu * eye, -grad)
            except np.linalg.LinAlgError:
                lam *= DAMPING_GROW
                continue
            cand = theta + delta
            res_c = residual_fn(cand, False)[0]
            obj_c = 0.5 * float(res_c @ res_c)
            if np.isfinite(obj_c) and obj_c < obj:
                accepted = True
                break
            lam *= DAMPING_GROW
        if not accepted:
            break
        theta = cand
        res, jac = residual_fn(theta, True)
        obj = 0.5 * float(res @ res)
        history.append(obj)
        lam = max(lam * DAMPING_SHRINK, 1e-12)
        if float(np.max(np.abs(delta))) <= step_tol:
            converged = True
            break
    if not converged:
        converged = _grad_small(jac.T @ res, obj, grad_tol)
    return theta, converged, history
