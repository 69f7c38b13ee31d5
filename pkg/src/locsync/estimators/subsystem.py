"""Subsystem information filter: banded inverses over closed neighborhoods."""

from dataclasses import dataclass

import numpy as np

from ..constants import (
    BIAS_INDEX,
    DEFAULT_BIAS_PROCESS_DENSITY,
    DEFAULT_MOBILE_POSITION_STD,
    DEFAULT_OFFSET_PROCESS_DENSITY,
    DEFAULT_PRIOR_SIGMA_BIAS,
    DEFAULT_PRIOR_SIGMA_OFFSET,
    DEFAULT_PRIOR_SIGMA_POS,
    DEFAULT_TIMESTAMP_STD,
    OFFSET_INDEX,
    STATE_DIM,
)
from ..errors import NumericalError
from ..linalg import dici_or_invert, lband_approx_inverse
from ..validation import solve_sym, symmetrize
from .base import NetworkEstimatorBase, node_slice
from .diffusion import _inv_scaled

# Whitened-spectrum floor for the posterior projection; keeps every
# published covariance strictly positive definite for the next inversion.
POSTERIOR_EIG_FLOOR = 1e-14

# Max equilibrated residual of J @ P - I accepted from the iterative
# recovery before the node falls back to exact inversion.
DEFAULT_DICI_RESIDUAL_TOL = 1e-3


def _scaled_residual(j_mat, p):
    """Largest entry of J @ P - I after diagonal equilibration of J.

    Invariant under joint rescaling (J -> DJD, P -> D^-1 P D^-1), so one
    threshold works across the mixed position/offset/bias units.
    """
    s = 1.0 / np.sqrt(np.diag(j_mat))
    e = j_mat @ p - np.eye(j_mat.shape[0])
    return float(np.max(np.abs(e * np.outer(s, 1.0 / s))))


def contract_to_prior(p_cand, p_prior):
    """Project a recovered posterior onto {P : 0 < P <= P_prior} (Loewner).

    A measurement update can only shrink the covariance. The iterative
    recovery converges fastest exactly where fresh information is strongest,
    but its slowly converging modes can overshoot the prior, and publishing
    that overshoot would compound epoch over epoch. Clipping the spectrum in
    the prior-whitened metric restores the contraction property without
    touching directions the recovery already got right. Whitening happens in
    the diagonally equilibrated space so mixed units cannot spoil the
    factorization.
    """
    d = np.sqrt(np.diag(p_prior))
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        raise NumericalError("prior covariance has a non-positive diagonal")
    cs = symmetrize(p_prior / np.outer(d, d))
    try:
        ls = np.linalg.cholesky(cs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("prior covariance is not positive definite") from exc
    pc = symmetrize(p_cand / np.outer(d, d))
    g = np.linalg.solve(ls, np.linalg.solve(ls, pc).T)
    w, v = np.linalg.eigh(symmetrize(g))
    w = np.clip(w, POSTERIOR_EIG_FLOOR, 1.0)
    half = (ls @ v) * np.sqrt(w)
    return symmetrize((half @ half.T) * np.outer(d, d))


@dataclass(frozen=True)
class Subsystem:
    """A node's monitored set: itself plus its neighbors, in global order."""

    owner: int
    members: tuple

    def __post_init__(self):
        if self.owner not in self.members:
            raise ValueError("subsystem members must include the owner")
        if tuple(sorted(set(self.members))) != self.members:
            raise ValueError("subsystem members must be sorted and unique")

    @property
    def dim(self):
        return STATE_DIM * len(self.members)

    def local_index(self, node):
        return self.members.index(node)

    def local_slice(self, node):
        return node_slice(self.local_index(node))


def build_subsystems(topology):
    """One subsystem per node: the closed neighborhood in global stacking order."""
    out = []
    for k in range(topology.n_nodes):
        members = tuple(sorted(set(topology.neighbors(k)) | {k}))
        out.append(Subsystem(owner=k, members=members))
    return out


class SubsystemKalman(NetworkEstimatorBase):
    """Distributed filter that keeps covariance work inside each neighborhood.

    Per epoch and node: approximate the prior subsystem covariance's inverse
    with a banded completion, add information terms for the exchanges whose
    endpoints both lie in the subsystem, recover the posterior covariance with
    the iterative band-constrained inversion (warm-started from the prior,
    falling back to an exact local solve while the warm starts are still too
    far off), and update the state by solving the assembled information
    system exactly.
    Nodes then publish their own-state estimates, which overwrite the matching
    entries of every neighbor's subsystem vector, and time-update.
    """

    def __init__(self, topology=None, master=0, epoch_period=0.5,
                 timestamp_std=DEFAULT_TIMESTAMP_STD,
                 offset_density=DEFAULT_OFFSET_PROCESS_DENSITY,
                 bias_density=DEFAULT_BIAS_PROCESS_DENSITY,
                 prior_position_std=DEFAULT_PRIOR_SIGMA_POS,
                 prior_offset_std=DEFAULT_PRIOR_SIGMA_OFFSET,
                 prior_bias_std=DEFAULT_PRIOR_SIGMA_BIAS,
                 mobile_nodes=(), mobile_position_std=DEFAULT_MOBILE_POSITION_STD,
                 initial_positions=None, prior_bandwidth=None,
                 dici_bandwidth=None, dici_gamma=0.5, dici_iters=200,
                 dici_residual_tol=DEFAULT_DICI_RESIDUAL_TOL):
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
        self.prior_bandwidth = prior_bandwidth
        self.dici_bandwidth = dici_bandwidth
        self.dici_gamma = dici_gamma
        self.dici_iters = dici_iters
        self.dici_residual_tol = dici_residual_tol

    def _setup_state(self):
        self.subsystems_ = build_subsystems(self.topology)
        x0 = self._initial_state_matrix()
        self._x = []
        self._p = []
        for sub in self.subsystems_:
            self._x.append(np.concatenate([x0[j] for j in sub.members]))
            self._p.append(self._prior_cov(sub.members))
        self.posterior_ = x0.copy()

    # -- master pinning inside a subsystem -------------------------------

    def _pinned_indices(self, sub):
        if self.master not in sub.members:
            return []
        base = STATE_DIM * sub.local_index(self.master)
        return [base + OFFSET_INDEX, base + BIAS_INDEX]

    def _pin_unit(self, mat, idx):
        """Replace rows/cols at idx with unit diagonal (decoupled, invertible)."""
        for i in idx:
            mat[i, :] = 0.0
            mat[:, i] = 0.0
            mat[i, i] = 1.0
        return mat

    def _pin_zero(self, mat, idx):
        for i in idx:
            mat[i, :] = 0.0
            mat[:, i] = 0.0
        return mat

    # -- epoch ------------------------------------------------------------

    def _step_impl(self, batch):
        published = np.empty((self.n_nodes_, STATE_DIM))
        new_x, new_p = [], []
        for k, sub in enumerate(self.subsystems_):
            x_post, p_post = self._node_update(k, sub, batch)
            published[k] = x_post[sub.local_slice(k)]
            new_x.append(x_post)
            new_p.append(p_post)

        # publish: neighbors' own-state estimates replace subsystem entries
        for k, sub in enumerate(self.subsystems_):
            for j in sub.members:
                if j != k:
                    new_x[k][sub.local_slice(j)] = published[j]

        self._x, self._p = new_x, new_p
        self.posterior_ = published
        for k, sub in enumerate(self.subsystems_):
            self._x[k], self._p[k] = self._time_update_joint(
                self._x[k], self._p[k], sub.members)

    def _node_update(self, k, sub, batch):
        x = self._x[k].copy()
        pinned = self._pinned_indices(sub)
        p_prior = self._pin_unit(self._p[k].copy(), pinned)
        dim = sub.dim

        l_prior = dim - 1 if self.prior_bandwidth is None else min(
            int(self.prior_bandwidth), dim - 1)
        j_mat = lband_approx_inverse(p_prior, l_prior).as_array()
        self._pin_unit(j_mat, pinned)

        member_set = set(sub.members)
        b_vec = np.zeros(dim)
        n_terms = 0
        for rec, z in batch.items:
            s, r = rec.sender_id, rec.receiver_id
            if s not in member_set or r not in member_set:
                continue
            rows, nu, h_s, h_r, noise = self._edge_terms(
                rec, z, x[sub.local_slice(s)], x[sub.local_slice(r)])
            h = np.zeros((len(rows), dim))
            h[:, sub.local_slice(s)] = h_s
            h[:, sub.local_slice(r)] = h_r
            h[:, pinned] = 0.0
            r_inv = _inv_scaled(noise)
            j_mat += h.T @ (r_inv @ h)
            b_vec += h.T @ (r_inv @ nu)
            n_terms += 1
        j_mat = symmetrize(j_mat)

        if n_terms:
            x = x + solve_sym(j_mat, b_vec)
            for i in pinned:
                x[i] = 0.0

        band = dim - 1 if self.dici_bandwidth is None else min(
            int(self.dici_bandwidth), dim - 1)
        p_post = dici_or_invert(j_mat, p_prev=p_prior, gamma=self.dici_gamma,
                                iters=int(self.dici_iters),
                                half_bandwidth=band)
        # warm starts are poor until the filter settles; a node that can
        # see its recovery has not converged inverts its own system exactly
        if (self.dici_residual_tol is not None
                and _scaled_residual(j_mat, p_post) > self.dici_residual_tol):
            p_post = _inv_scaled(j_mat)
        p_post = contract_to_prior(p_post, p_prior)
        self._pin_zero(p_post, pinned)
        return x, p_post
