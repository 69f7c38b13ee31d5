"""Shared estimator scaffolding: stacked states, measurement assembly, time update.

All filters track per-node states [px, py, pz, o, b] stacked in node order.
The master node's clock entries are the time reference: their prior variance,
process noise, and estimates are held at exactly zero, which every update
below preserves without special-casing (zero covariance rows produce zero
gain rows).
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .. import model
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
from ..errors import ConfigError, SingularityError, TopologyError
from ..model import NodeState
from ..validation import symmetrize

# Timestamp noise assumed by the filters is floored so that measurement
# covariances stay invertible even in noise-free validation runs.
MIN_STAMP_STD = 1e-12

# Nudge applied to the linearization point when two position estimates
# coincide and the range direction is undefined.
COINCIDENCE_NUDGE = 1e-6


@dataclass(frozen=True)
class EpochBatch:
    """One synchronous round of exchanges: (record, measurement) per edge."""

    epoch: int
    items: tuple

    def records(self):
        return [rec for rec, _ in self.items]


def make_batch(epoch, records):
    """Pair each exchange record with its extracted measurement vector."""
    items = tuple((rec, model.measurement_from_record(rec)) for rec in records)
    return EpochBatch(epoch=int(epoch), items=items)


def node_slice(k):
    return slice(STATE_DIM * k, STATE_DIM * (k + 1))


class NetworkEstimatorBase(BaseEstimator):
    """Common plumbing for the network filters.

    Subclasses implement _setup_state() and _step_impl(batch); both may rely
    on the helpers here for priors, process noise, linearization, and the
    per-node affine time update. Parameters follow the scikit-learn
    convention: stored verbatim, validated lazily on first use.
    """

    def __init__(self, topology=None, master=0, epoch_period=0.5,
                 timestamp_std=DEFAULT_TIMESTAMP_STD,
                 offset_density=DEFAULT_OFFSET_PROCESS_DENSITY,
                 bias_density=DEFAULT_BIAS_PROCESS_DENSITY,
                 prior_position_std=DEFAULT_PRIOR_SIGMA_POS,
                 prior_offset_std=DEFAULT_PRIOR_SIGMA_OFFSET,
                 prior_bias_std=DEFAULT_PRIOR_SIGMA_BIAS,
                 mobile_nodes=(), mobile_position_std=DEFAULT_MOBILE_POSITION_STD,
                 initial_positions=None):
        self.topology = topology
        self.master = master
        self.epoch_period = epoch_period
        self.timestamp_std = timestamp_std
        self.offset_density = offset_density
        self.bias_density = bias_density
        self.prior_position_std = prior_position_std
        self.prior_offset_std = prior_offset_std
        self.prior_bias_std = prior_bias_std
        self.mobile_nodes = mobile_nodes
        self.mobile_position_std = mobile_position_std
        self.initial_positions = initial_positions

    # -- lifecycle -----------------------------------------------------

    def step(self, batch):
        """Consume one epoch of exchanges; sets posterior_ to the (N, 5) snapshot."""
        if not hasattr(self, "n_nodes_"):
            self._setup()
        if not isinstance(batch, EpochBatch):
            batch = make_batch(self.epoch_, batch)
        for rec, _ in batch.items:
            if not self.topology.has_edge(rec.sender_id, rec.receiver_id):
                raise TopologyError(
                    f"exchange {rec.sender_id}-{rec.receiver_id} is not a "
                    "topology edge"
                )
        self._step_impl(batch)
        self.epoch_ += 1
        return self

    def fit(self, batches, y=None):
        """Run the filter over an iterable of epoch batches."""
        for batch in batches:
            self.step(batch)
        return self

    def _setup(self):
        if self.topology is None:
            raise ConfigError("topology is required")
        if not 0 <= self.master < self.topology.n_nodes:
            raise ConfigError(f"master {self.master} out of range")
        if self.epoch_period <= 0:
            raise ConfigError("epoch_period must be positive")
        self.n_nodes_ = self.topology.n_nodes
        self.epoch_ = 0
        self._mobile = frozenset(int(k) for k in self.mobile_nodes)
        if self._mobile - set(range(self.n_nodes_)):
            raise ConfigError("mobile_nodes contains unknown node indices")
        self._stamp_std = max(float(self.timestamp_std), MIN_STAMP_STD)
        self._setup_state()

    def _setup_state(self):
        raise NotImplementedError

    def _step_impl(self, batch):
        raise NotImplementedError

    # -- priors and process noise ---------------------------------------

    def _initial_state_matrix(self):
        """(N, 5) initial estimate: configured positions, zero clocks."""
        x = np.zeros((self.n_nodes_, STATE_DIM))
        if self.initial_positions is not None:
            pos = np.asarray(self.initial_positions, dtype=float)
            if pos.shape != (self.n_nodes_, 3):
                raise ConfigError(
                    f"initial_positions has shape {pos.shape}, expected "
                    f"{(self.n_nodes_, 3)}"
                )
            x[:, :3] = pos
        return x

    def _prior_block(self, k):
        """5x5 initial covariance for node k; master clock entries pinned."""
        d = np.array([self.prior_position_std ** 2] * 3
                     + [self.prior_offset_std ** 2, self.prior_bias_std ** 2])
        if k == self.master:
            d[OFFSET_INDEX] = 0.0
            d[BIAS_INDEX] = 0.0
        return np.diag(d)

    def _prior_cov(self, members=None):
        """Block-diagonal prior over the given nodes (default: all)."""
        members = range(self.n_nodes_) if members is None else members
        blocks = [self._prior_block(k) for k in members]
        out = np.zeros((STATE_DIM * len(blocks),) * 2)
        for i, blk in enumerate(blocks):
            out[node_slice(i), node_slice(i)] = blk
        return out

    def _process_block(self, k):
        """Per-epoch process noise for node k (diagonal 5x5)."""
        dt = self.epoch_period
        d = np.zeros(STATE_DIM)
        if k in self._mobile:
            d[:3] = self.mobile_position_std ** 2
        if k != self.master:
            d[OFFSET_INDEX] = self.offset_density * dt
            d[BIAS_INDEX] = self.bias_density * dt
        return np.diag(d)

    def _transition(self):
        return model.jacobian_F(None, self.epoch_period)

    def _time_update_joint(self, x, p, members=None):
        """Affine time update of a stacked state and covariance in place."""
        members = list(range(self.n_nodes_)) if members is None else list(members)
        f = self._transition()
        for i in range(len(members)):
            sl = node_slice(i)
            x[sl] = f @ x[sl]
        big_f = np.kron(np.eye(len(members)), f)
        p_new = big_f @ p @ big_f.T
        for i, k in enumerate(members):
            sl = node_slice(i)
            p_new[sl, sl] += self._process_block(k)
        return x, symmetrize(p_new)

    # -- measurement assembly --------------------------------------------

    def _edge_terms(self, rec, z_vec, x_sender, x_receiver):
        """Innovation, per-endpoint Jacobians, and noise for one exchange.

        Returns (rows, nu, h_sender, h_receiver, r). Linearization happens at
        the provided estimates; coincident position estimates are nudged along
        +x so the range direction stays defined.
        """
        rows = model.available_rows(rec.msg_type)
        xs = NodeState.from_vector(x_sender)
        xr = NodeState.from_vector(x_receiver)
        pred = model.predict_measurement(xs, xr, rec, rows)
        nu = z_vec.as_array(rows) - pred.as_array(rows)
        try:
            h_s = model.jacobian_H(xs, xr, rec, rows)
        except SingularityError:
            nudged = x_sender.copy()
            nudged[0] -= COINCIDENCE_NUDGE
            h_s = model.jacobian_H(NodeState.from_vector(nudged), xr, rec, rows)
        r = model.measurement_noise_cov(rec, rows, self._stamp_std)
        return rows, nu, h_s, -h_s, r
