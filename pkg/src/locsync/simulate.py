"""Deterministic ground-truth simulator.

Evolves true node states (positions, clock offsets, clock rate biases),
advances drifting clocks between epochs, and synthesizes timestamped
ranging exchanges with configurable stamp noise. Every random draw comes
from a caller-supplied numpy Generator in a fixed order, so a seed fully
determines a run.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .constants import (
    DEFAULT_BIAS_INIT_RANGE,
    DEFAULT_BIAS_PROCESS_DENSITY,
    DEFAULT_OFFSET_INIT_RANGE,
    DEFAULT_OFFSET_PROCESS_DENSITY,
    DEFAULT_TIMESTAMP_STD,
    DEFAULT_TURNAROUND_RANGE,
    SPEED_OF_LIGHT,
)
from .errors import ModelError, ProtocolError, TopologyError
from .model import ExchangeRecord, NodeState
from .topology import Topology


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-linear waypoint path traversed at constant speed.

    A closed path cycles back to the first waypoint; an open path parks at
    the last one. position(t) is arc-length parameterized from t = 0.
    """

    waypoints: np.ndarray
    speed: float
    closed: bool = True

    def __post_init__(self):
        pts = np.asarray(self.waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ModelError(f"waypoints must be (m, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ModelError("waypoints must be finite")
        if self.speed < 0:
            raise ModelError(f"speed must be >= 0, got {self.speed}")
        object.__setattr__(self, "waypoints", pts)
        segs = pts if not self.closed else np.vstack([pts, pts[:1]])
        lengths = np.linalg.norm(np.diff(segs, axis=0), axis=1)
        object.__setattr__(self, "_points", segs)
        object.__setattr__(self, "_lengths", lengths)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(lengths)]))

    @property
    def total_length(self):
        return float(self._cum[-1])

    def position(self, t):
        if t < 0:
            raise ModelError(f"time must be >= 0, got {t}")
        total = self.total_length
        if total == 0.0 or self.speed == 0.0:
            return self.waypoints[0].copy()
        s = self.speed * t
        if self.closed:
            s = s % total
        else:
            s = min(s, total)
        idx = int(np.searchsorted(self._cum, s, side="right") - 1)
        idx = min(idx, len(self._lengths) - 1)
        # skip zero-length segments the cursor may land on
        while self._lengths[idx] == 0.0 and idx + 1 < len(self._lengths):
            idx += 1
        frac = (s - self._cum[idx]) / self._lengths[idx]
        a, b = self._points[idx], self._points[idx + 1]
        return a + frac * (b - a)


@dataclass(frozen=True, eq=False)
class TruthWorld:
    """Snapshot of true node states plus the noise configuration.

    time is the world clock (seconds); each node's local clock reads
    t + o + b * (t - time) for event times t inside the current epoch,
    which stays continuous because advance_world folds b * dt into o.
    """

    time: float
    states: tuple
    trajectories: tuple
    master: int = 0
    offset_density: float = DEFAULT_OFFSET_PROCESS_DENSITY
    bias_density: float = DEFAULT_BIAS_PROCESS_DENSITY
    timestamp_std: float = DEFAULT_TIMESTAMP_STD
    turnaround_range: tuple = DEFAULT_TURNAROUND_RANGE

    def __post_init__(self):
        n = len(self.states)
        if n < 2:
            raise ModelError(f"need at least 2 nodes, got {n}")
        if len(self.trajectories) != n:
            raise ModelError("one trajectory slot per node required")
        if not (0 <= self.master < n):
            raise ModelError(f"master index {self.master} out of range")
        lo, hi = self.turnaround_range
        if not (0 < lo <= hi):
            raise ModelError(f"invalid turnaround range {self.turnaround_range}")
        if self.timestamp_std < 0:
            raise ModelError("timestamp_std must be >= 0")

    @property
    def n_nodes(self):
        return len(self.states)

    def positions(self):
        return np.array([s.p for s in self.states])

    def state_matrix(self):
        """True states stacked as an (n, 5) array."""
        return np.array([s.as_vector() for s in self.states])


def local_clock(world, node, t):
    """Noiseless local-clock reading of world event time t at a node."""
    s = world.states[node]
    return t + s.o + s.b * (t - world.time)


def make_world(
    positions,
    rng,
    *,
    trajectories=None,
    master=0,
    offset_range=DEFAULT_OFFSET_INIT_RANGE,
    bias_range=DEFAULT_BIAS_INIT_RANGE,
    offset_density=DEFAULT_OFFSET_PROCESS_DENSITY,
    bias_density=DEFAULT_BIAS_PROCESS_DENSITY,
    timestamp_std=DEFAULT_TIMESTAMP_STD,
    turnaround_range=DEFAULT_TURNAROUND_RANGE,
    start_time=0.0,
):
    """Build a TruthWorld at start_time with clocks drawn uniformly.

    Non-master offsets come from U(-offset_range, offset_range) and biases
    from U(-bias_range, bias_range), drawn in node order (offset first).
    The master clock is exactly zero. Nodes with a trajectory start at
    trajectory.position(0) regardless of the positions row.
    """
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    if trajectories is None:
        trajectories = (None,) * n
    trajectories = tuple(trajectories)
    states = []
    for k in range(n):
        if k == master:
            o, b = 0.0, 0.0
        else:
            o = float(rng.uniform(-offset_range, offset_range))
            b = float(rng.uniform(-bias_range, bias_range))
        p = positions[k]
        if trajectories[k] is not None:
            p = trajectories[k].position(0.0)
        states.append(NodeState(p=p, o=o, b=b))
    return TruthWorld(
        time=float(start_time),
        states=tuple(states),
        trajectories=trajectories,
        master=master,
        offset_density=offset_density,
        bias_density=bias_density,
        timestamp_std=timestamp_std,
        turnaround_range=turnaround_range,
    )


def advance_world(world, dt, rng):
    """Advance truth by dt seconds, returning a new TruthWorld.

    Offsets integrate their bias plus random-walk noise, biases random-walk,
    mobile positions follow their trajectory. The master draws nothing and
    stays exactly zero. Draw order per non-master node: offset noise, then
    bias noise.
    """
    if dt <= 0:
        raise ModelError(f"dt must be > 0, got {dt}")
    t_new = world.time + dt
    o_std = np.sqrt(world.offset_density * dt)
    b_std = np.sqrt(world.bias_density * dt)
    states = []
    for k, s in enumerate(world.states):
        if k == world.master:
            o, b = 0.0, 0.0
        else:
            o = s.o + s.b * dt + o_std * float(rng.standard_normal())
            b = s.b + b_std * float(rng.standard_normal())
        p = s.p
        if world.trajectories[k] is not None:
            p = world.trajectories[k].position(t_new)
        states.append(NodeState(p=p, o=o, b=b))
    return dataclasses.replace(world, time=t_new, states=tuple(states))


def _stamp(world, node, t_true, noise):
    return local_clock(world, node, t_true) + noise


def simulate_exchange(world, sender, receiver, msg_type, rng, topology=None):
    """Synthesize one ranging exchange starting at the current world time.

    sender initiates and transmits the final message. Type 3 runs the full
    three-message handshake (sender, receiver, sender), type 2 the last two
    messages (receiver opens), type 1 just the final message. Turnaround
    delays are drawn uniformly from the world's range before the stamp
    noises, which are drawn in chronological stamp order; every node's
    stamps carry noise, master included.
    """
    if sender == receiver:
        raise ProtocolError(f"node {sender} cannot range with itself")
    n = world.n_nodes
    if not (0 <= sender < n and 0 <= receiver < n):
        raise ProtocolError(f"exchange ({sender}, {receiver}) out of range")
    if msg_type not in (1, 2, 3):
        raise ProtocolError(f"msg_type must be 1, 2, or 3, got {msg_type}")
    if topology is not None and not topology.has_edge(sender, receiver):
        raise TopologyError(f"({sender}, {receiver}) is not a topology edge")

    dist = float(np.linalg.norm(world.states[sender].p - world.states[receiver].p))
    tof = dist / SPEED_OF_LIGHT
    t = world.time
    sigma = world.timestamp_std
    lo, hi = world.turnaround_range

    if msg_type == 3:
        ta0 = float(rng.uniform(lo, hi))
        ta1 = float(rng.uniform(lo, hi))
        times = {"t0": t, "t1": t + tof}
        times["t2"] = times["t1"] + ta0
        times["t3"] = times["t2"] + tof
        times["t4"] = times["t3"] + ta1
        times["t5"] = times["t4"] + tof
    elif msg_type == 2:
        ta1 = float(rng.uniform(lo, hi))
        times = {"t2": t, "t3": t + tof}
        times["t4"] = times["t3"] + ta1
        times["t5"] = times["t4"] + tof
    else:
        times = {"t4": t, "t5": t + tof}

    owner = {"t0": sender, "t1": receiver, "t2": receiver,
             "t3": sender, "t4": sender, "t5": receiver}
    stamps = {}
    for name in ("t0", "t1", "t2", "t3", "t4", "t5"):
        if name not in times:
            continue
        noise = sigma * float(rng.standard_normal()) if sigma > 0 else 0.0
        stamps[name] = _stamp(world, owner[name], times[name], noise)
    return ExchangeRecord(sender_id=sender, receiver_id=receiver,
                          msg_type=msg_type, **stamps)


def build_schedule(topology, msg_type):
    """One exchange per edge in sorted-edge order; lower index sends."""
    if not isinstance(topology, Topology):
        raise ProtocolError("build_schedule needs a Topology")
    return [(i, j, msg_type) for i, j in topology.sorted_edges()]


def simulate_epoch(world, topology, msg_type, rng):
    """Simulate the full per-edge exchange batch for one epoch."""
    return [simulate_exchange(world, s, r, m, rng)
            for s, r, m in build_schedule(topology, msg_type)]


def room8_layout():
    """Default 8-anchor indoor layout: 6 ceiling anchors at 2.5 m and 2 at
    waist height, spanning roughly 10 x 9 m (x spans width, z depth, y up)."""
    return np.array([
        [0.5, 2.5, 0.5],
        [5.0, 2.5, 0.8],
        [9.5, 2.5, 0.5],
        [0.5, 2.5, 8.5],
        [5.0, 2.5, 8.2],
        [9.5, 2.5, 8.5],
        [0.2, 1.0, 4.5],
        [9.8, 1.0, 4.5],
    ])


def default_mobile_loop(speed=0.5):
    """Rectangular loop inside the room8 anchor hull at constant speed."""
    return Trajectory(
        waypoints=np.array([
            [2.0, 1.5, 2.0],
            [8.0, 1.5, 2.0],
            [8.0, 1.5, 7.0],
            [2.0, 1.5, 7.0],
        ]),
        speed=speed,
        closed=True,
    )
