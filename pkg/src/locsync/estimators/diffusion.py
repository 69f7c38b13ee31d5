"""Diffusion Kalman filter: per-node information updates plus convex mixing."""

import numpy as np

from ..constants import (
    DEFAULT_BIAS_PROCESS_DENSITY,
    DEFAULT_MOBILE_POSITION_STD,
    DEFAULT_OFFSET_PROCESS_DENSITY,
    DEFAULT_PRIOR_SIGMA_BIAS,
    DEFAULT_PRIOR_SIGMA_OFFSET,
    DEFAULT_PRIOR_SIGMA_POS,
    DEFAULT_TIMESTAMP_STD,
    STATE_DIM,
)
from ..errors import ConfigError
from ..linalg import binomial_update_chain
from ..validation import solve_sym, symmetrize
from .base import NetworkEstimatorBase, node_slice

WEIGHT_SCHEMES = ("uniform", "metropolis", "self_only")


class DiffusionKalman(NetworkEstimatorBase):
    """Every node runs a full-network filter over its neighborhood's data.

    Neighbors relay the exchange records they collected, so per epoch node k
    assimilates every exchange with an endpoint in its closed neighborhood:
    (a) incorporate those records through the rank-update recursion (the full
    covariance is never inverted), producing an intermediate estimate psi^k;
    (b) replace the estimate by a convex, entry-wise combination of the
    closed neighborhood's psi values; (c) apply the affine time update. All
    nodes read the psi values published at the start of phase (b), so the
    phases are bulk-synchronous.
    """

    def __init__(self, topology=None, master=0, epoch_period=0.5,
                 timestamp_std=DEFAULT_TIMESTAMP_STD,
                 offset_density=DEFAULT_OFFSET_PROCESS_DENSITY,
                 bias_density=DEFAULT_BIAS_PROCESS_DENSITY,
                 prior_position_std=DEFAULT_PRIOR_SIGMA_POS,
                 prior_offset_std=DEFAULT_PRIOR_SIGMA_OFFSET,
                 prior_bias_std=DEFAULT_PRIOR_SIGMA_BIAS,
                 mobile_nodes=(), mobile_position_std=DEFAULT_MOBILE_POSITION_STD,
                 initial_positions=None, weight_scheme="uniform"):
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
        self.weight_scheme = weight_scheme

    def _setup_state(self):
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ConfigError(f"unknown weight scheme {self.weight_scheme!r}")
        x0 = self._initial_state_matrix().reshape(-1)
        p0 = self._prior_cov()
        self._x = [x0.copy() for _ in range(self.n_nodes_)]
        self._p = [p0.copy() for _ in range(self.n_nodes_)]
        self._weights = [self._combination_weights(k)
                         for k in range(self.n_nodes_)]
        self._closed_nbhd = [set(self.topology.neighbors(k)) | {k}
                             for k in range(self.n_nodes_)]
        self.posterior_ = self._self_estimates()

    def _combination_weights(self, k):
        """Convex weights over the closed neighborhood of k."""
        nbhd = list(self.topology.neighbors(k)) + [k]
        nbhd.sort()
        if self.weight_scheme == "self_only":
            return {k: 1.0}
        if self.weight_scheme == "uniform":
            w = 1.0 / len(nbhd)
            return {j: w for j in nbhd}
        weights = {}
        total = 0.0
        for j in nbhd:
            if j == k:
                continue
            w = 1.0 / (1.0 + max(self.topology.degree(k),
                                 self.topology.degree(j)))
            weights[j] = w
            total += w
        weights[k] = 1.0 - total
        return weights

    def _self_estimates(self):
        out = np.empty((self.n_nodes_, STATE_DIM))
        for k in range(self.n_nodes_):
            out[k] = self._x[k][node_slice(k)]
        return out

    def _step_impl(self, batch):
        visible = {k: [] for k in range(self.n_nodes_)}
        for rec, z in batch.items:
            for k, nbhd in enumerate(self._closed_nbhd):
                if rec.sender_id in nbhd or rec.receiver_id in nbhd:
                    visible[k].append((rec, z))

        psi = []
        for k in range(self.n_nodes_):
            psi_k, p_k = self._measurement_update(k, visible[k])
            psi.append(psi_k)
            self._p[k] = p_k

        for k in range(self.n_nodes_):
            mixed = np.zeros_like(psi[k])
            for j, w in self._weights[k].items():
                mixed += w * psi[j]
            self._x[k] = mixed

        self.posterior_ = self._self_estimates()
        for k in range(self.n_nodes_):
            self._x[k], self._p[k] = self._time_update_joint(
                self._x[k], self._p[k])

    def _measurement_update(self, k, items):
        """Rank-update recursion over the records delivered to node k."""
        x, p = self._x[k], self._p[k]
        if not items:
            return x.copy(), p
        dim = x.size
        terms, weighted = [], np.zeros(dim)
        for rec, z in items:
            s, r = rec.sender_id, rec.receiver_id
            rows, nu, h_s, h_r, noise = self._edge_terms(
                rec, z, x[node_slice(s)], x[node_slice(r)])
            h = np.zeros((len(rows), dim))
            h[:, node_slice(s)] = h_s
            h[:, node_slice(r)] = h_r
            r_inv = _inv_scaled(noise)
            terms.append((h.T, r_inv, h))
            weighted += h.T @ (r_inv @ nu)
        p_post = binomial_update_chain(p, terms)
        psi = x + p_post @ weighted
        return psi, p_post


def _inv_scaled(a):
    """Inverse of a small SPD matrix with mixed-unit rows."""
    return solve_sym(symmetrize(a), np.eye(a.shape[0]))
