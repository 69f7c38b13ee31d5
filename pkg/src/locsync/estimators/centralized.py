"""Centralized joint Kalman filter over the full network state."""

import numpy as np

from ..constants import STATE_DIM
from ..validation import solve_sym, symmetrize
from .base import NetworkEstimatorBase, node_slice


class CentralizedKalman(NetworkEstimatorBase):
    """Joint EKF over all nodes, consuming every edge's exchange each epoch.

    The reference point for the distributed filters: one linearization at the
    shared prior, one simultaneous update over all measurement rows, Joseph
    form for the covariance.
    """

    def _setup_state(self):
        self._x = self._initial_state_matrix().reshape(-1)
        self._p = self._prior_cov()
        self.posterior_ = self._x.reshape(self.n_nodes_, STATE_DIM).copy()

    def _step_impl(self, batch):
        if batch.items:
            self._measurement_update(batch)
        self.posterior_ = self._x.reshape(self.n_nodes_, STATE_DIM).copy()
        self._x, self._p = self._time_update_joint(self._x, self._p)

    def _measurement_update(self, batch):
        dim = self._x.size
        h_rows, nus, noises = [], [], []
        for rec, z in batch.items:
            s, r = rec.sender_id, rec.receiver_id
            rows, nu, h_s, h_r, noise = self._edge_terms(
                rec, z, self._x[node_slice(s)], self._x[node_slice(r)])
            h = np.zeros((len(rows), dim))
            h[:, node_slice(s)] = h_s
            h[:, node_slice(r)] = h_r
            h_rows.append(h)
            nus.append(nu)
            noises.append(noise)
        h = np.vstack(h_rows)
        nu = np.concatenate(nus)
        m = nu.size
        r_big = np.zeros((m, m))
        at = 0
        for noise in noises:
            k = noise.shape[0]
            r_big[at:at + k, at:at + k] = noise
            at += k
        ph_t = self._p @ h.T
        s_mat = symmetrize(h @ ph_t + r_big)
        # gain via the equilibrated solve: S K^T = (P H^T)^T
        gain = solve_sym(s_mat, ph_t.T).T
        self._x = self._x + gain @ nu
        i_kh = np.eye(dim) - gain @ h
        self._p = symmetrize(i_kh @ self._p @ i_kh.T + gain @ r_big @ gain.T)

    @property
    def covariance_(self):
        """Current stacked covariance (prior for the next epoch)."""
        return self._p.copy()
