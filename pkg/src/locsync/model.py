"""State and measurement models for joint localization and clock synchronization.

Every node carries a 5-dimensional state [px, py, pz, o, b]: position in
meters, clock offset o in seconds, and dimensionless clock frequency bias b
(2e-6 = 2 ppm fast). A node's local clock maps true time t to
t + o + b * (t - t_ref).

Nodes range against each other with three kinds of two-node exchanges, all
built from the same message trio. The sender is the node that transmits the
final message of the exchange:

* type 1: the final message alone. The sender stamps transmission at t4 (its
  clock), the receiver stamps reception at t5 (its clock).
* type 2: a reply plus the final message. The receiver opens (TX t2), the
  sender answers (RX t3, TX t4), the receiver closes (RX t5).
* type 3: the full trio. The sender opens (TX t0), the receiver turns it
  around (RX t1, TX t2), and the exchange finishes as in type 2.

The derived durations are local to one clock each: t_rnd0 = t3 - t0 and
t_rsp1 = t4 - t3 on the sender's clock, t_rsp0 = t2 - t1 and t_rnd1 = t5 - t2
on the receiver's.
"""

from dataclasses import dataclass

import numpy as np

from .constants import (
    BIAS_INDEX,
    MEASUREMENT_ROW_ORDER,
    OFFSET_INDEX,
    SPEED_OF_LIGHT,
    STATE_DIM,
)
from .errors import ModelError, ProtocolError, SingularityError
from .validation import as_finite_array

# Minimum node separation (m) below which range Jacobians are undefined.
COINCIDENCE_LIMIT = 1e-12

_ROW_MIN_TYPE = {"d": 1, "r": 2, "R": 3}


def available_rows(msg_type):
    """Measurement rows physically contained in an exchange of the given type.

    A type-3 exchange replicates types 1 and 2, so it yields all three rows.
    """
    if msg_type not in (1, 2, 3):
        raise ProtocolError(f"msg_type must be 1, 2, or 3, got {msg_type!r}")
    return tuple(name for name in MEASUREMENT_ROW_ORDER if _ROW_MIN_TYPE[name] <= msg_type)


@dataclass(frozen=True)
class NodeState:
    """Single node state: position p (m), clock offset o (s), frequency bias b."""

    p: np.ndarray
    o: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", as_finite_array(self.p, shape=(3,), name="position"))
        object.__setattr__(self, "o", float(self.o))
        object.__setattr__(self, "b", float(self.b))
        if not np.isfinite(self.o) or not np.isfinite(self.b):
            raise ModelError("clock state contains non-finite entries")

    def as_vector(self):
        v = np.empty(STATE_DIM)
        v[:3] = self.p
        v[OFFSET_INDEX] = self.o
        v[BIAS_INDEX] = self.b
        return v

    @classmethod
    def from_vector(cls, v):
        v = as_finite_array(v, shape=(STATE_DIM,), name="state vector")
        return cls(p=v[:3].copy(), o=v[OFFSET_INDEX], b=v[BIAS_INDEX])


@dataclass(frozen=True)
class ExchangeRecord:
    """Raw timestamps of one exchange; missing stamps are None.

    All stamps are local clock readings in seconds: t0, t3, t4 on the sender's
    clock, t1, t2, t5 on the receiver's.
    """

    sender_id: int
    receiver_id: int
    msg_type: int
    t0: float | None = None
    t1: float | None = None
    t2: float | None = None
    t3: float | None = None
    t4: float | None = None
    t5: float | None = None

    def _stamp(self, name):
        value = getattr(self, name)
        if value is None:
            raise ProtocolError(
                f"type-{self.msg_type} exchange {self.sender_id}->{self.receiver_id} "
                f"is missing stamp {name}"
            )
        return value

    @property
    def t_rnd0(self):
        """First round trip, sender clock."""
        return self._stamp("t3") - self._stamp("t0")

    @property
    def t_rsp0(self):
        """First turnaround, receiver clock."""
        return self._stamp("t2") - self._stamp("t1")

    @property
    def t_rnd1(self):
        """Second round trip, receiver clock."""
        return self._stamp("t5") - self._stamp("t2")

    @property
    def t_rsp1(self):
        """Second turnaround, sender clock."""
        return self._stamp("t4") - self._stamp("t3")

    @classmethod
    def from_durations(cls, sender_id, receiver_id, msg_type,
                       t_rnd1, t_rsp1, t_rnd0=None, t_rsp0=None, start=0.0):
        """Build a record whose derived durations equal the given values exactly.

        Convenient for feeding the range formulas directly; the synthesized
        stamps place the legs back-to-back starting at `start`.
        """
        if msg_type == 3:
            if t_rnd0 is None or t_rsp0 is None:
                raise ProtocolError("type-3 record needs t_rnd0 and t_rsp0")
            gap = 0.5 * (t_rnd0 - t_rsp0)
            t0 = start
            t1 = t0 + gap
            t2 = t1 + t_rsp0
            t3 = t0 + t_rnd0
            return cls(sender_id, receiver_id, 3, t0=t0, t1=t1, t2=t2, t3=t3,
                       t4=t3 + t_rsp1, t5=t2 + t_rnd1)
        if msg_type == 2:
            t2 = start
            t3 = t2 + 0.5 * (t_rnd1 - t_rsp1)
            return cls(sender_id, receiver_id, 2, t2=t2, t3=t3,
                       t4=t3 + t_rsp1, t5=t2 + t_rnd1)
        raise ProtocolError(f"from_durations supports types 2 and 3, got {msg_type!r}")


@dataclass(frozen=True)
class MeasurementVector:
    """Measurement rows extracted from one exchange; absent rows are None.

    d is a raw counter difference in seconds; r and R are ranges in meters.
    """

    d: float | None = None
    r: float | None = None
    R: float | None = None

    def rows(self):
        return tuple(n for n in MEASUREMENT_ROW_ORDER if getattr(self, n) is not None)

    def as_array(self, rows=None):
        rows = self.rows() if rows is None else tuple(rows)
        out = np.empty(len(rows))
        for i, name in enumerate(rows):
            value = getattr(self, name)
            if value is None:
                raise ProtocolError(f"measurement row {name!r} not present")
            out[i] = value
        return out


def state_update(x, dt):
    """Propagate a node state by dt seconds: offset integrates bias, rest coasts."""
    if not np.isfinite(dt) or dt < 0.0:
        raise ModelError(f"dt must be finite and non-negative, got {dt!r}")
    return NodeState(p=x.p.copy(), o=x.o + x.b * dt, b=x.b)


def jacobian_F(x, dt):
    """State transition matrix: identity plus the offset-bias coupling.

    The transition is affine, so the Jacobian does not depend on x; the state
    argument is kept for interface symmetry with jacobian_H.
    """
    del x
    if not np.isfinite(dt):
        raise ModelError("dt must be finite")
    F = np.eye(STATE_DIM)
    F[OFFSET_INDEX, BIAS_INDEX] = dt
    return F


def state_affine_term(x, dt):
    """Affine remainder f(x) - F x of the transition; identically zero here.

    Kept in the interface so estimators can treat the transition as a general
    affine map.
    """
    del x
    if not np.isfinite(dt):
        raise ModelError("dt must be finite")
    return np.zeros(STATE_DIM)


def counter_difference(ex):
    """Type-1 measurement d = t5 - t4: receiver RX stamp minus sender TX stamp (s)."""
    return ex._stamp("t5") - ex._stamp("t4")


def ss_twr(ex):
    """Single-sided two-way range (m) from one round trip and one turnaround.

    r = (c/2) (t_rnd1 - t_rsp1). The round trip must not be shorter than the
    turnaround it contains.
    """
    rnd1 = ex.t_rnd1
    rsp1 = ex.t_rsp1
    if rnd1 < rsp1:
        raise ProtocolError(
            f"round trip {rnd1!r} s shorter than turnaround {rsp1!r} s"
        )
    return 0.5 * SPEED_OF_LIGHT * (rnd1 - rsp1)


def ds_twr(ex):
    """Double-sided two-way range (m) from both round trips and turnarounds.

    R = c (t_rnd0 t_rnd1 - t_rsp0 t_rsp1) / (t_rnd0 + t_rnd1 + t_rsp0 + t_rsp1).
    The product form cancels the first-order effect of either clock running
    fast or slow, even with asymmetric turnarounds.
    """
    rnd0, rsp0, rnd1, rsp1 = ex.t_rnd0, ex.t_rsp0, ex.t_rnd1, ex.t_rsp1
    denom = rnd0 + rnd1 + rsp0 + rsp1
    if denom <= 0.0:
        raise ProtocolError(f"non-positive duration sum {denom!r} s")
    return SPEED_OF_LIGHT * (rnd0 * rnd1 - rsp0 * rsp1) / denom


def measurement_from_record(ex, rows=None):
    """Extract the requested measurement rows from a record.

    rows defaults to everything the record's msg_type contains.
    """
    rows = available_rows(ex.msg_type) if rows is None else tuple(rows)
    values = {}
    for name in rows:
        if name not in MEASUREMENT_ROW_ORDER:
            raise ProtocolError(f"unknown measurement row {name!r}")
        if _ROW_MIN_TYPE[name] > ex.msg_type:
            raise ProtocolError(
                f"row {name!r} unavailable from a type-{ex.msg_type} exchange"
            )
        if name == "d":
            values["d"] = counter_difference(ex)
        elif name == "r":
            values["r"] = ss_twr(ex)
        else:
            values["R"] = ds_twr(ex)
    return MeasurementVector(**values)


def _rate_correction(ex, chi):
    """Residual range error term of ds_twr under a clock-rate difference chi.

    chi = b_sender - b_receiver. Evaluates
    chi * (t_rnd0 t_rnd1 - t_rsp0 t_rsp1) /
        ((1+chi) t_rnd0 + t_rnd1 + t_rsp0 + (1+chi) t_rsp1)
    and its derivative with respect to chi. The sender-clock durations carry
    the (1+chi) weight because they are the ones measured at the other rate.
    """
    rnd0, rsp0, rnd1, rsp1 = ex.t_rnd0, ex.t_rsp0, ex.t_rnd1, ex.t_rsp1
    num = rnd0 * rnd1 - rsp0 * rsp1
    base = rnd0 + rnd1 + rsp0 + rsp1
    weighted = rnd0 + rsp1
    denom = base + chi * weighted
    if denom <= 0.0:
        raise ModelError(f"non-positive rate-correction denominator {denom!r}")
    value = chi * num / denom
    slope = num * base / (denom * denom)
    return value, slope


def predict_measurement(x_sender, x_receiver, ex, rows=None):
    """Predicted MeasurementVector for an exchange, given both endpoint states.

    x_sender is the state of ex.sender_id (final-message transmitter) and
    x_receiver the state of ex.receiver_id. Turnaround durations are taken
    from the record itself; only the states are model inputs.
    """
    rows = available_rows(ex.msg_type) if rows is None else tuple(rows)
    dist = float(np.linalg.norm(x_receiver.p - x_sender.p))
    values = {}
    for name in rows:
        if name == "d":
            values["d"] = (x_receiver.o - x_sender.o) + dist / SPEED_OF_LIGHT
        elif name == "r":
            values["r"] = dist + 0.5 * SPEED_OF_LIGHT * (x_receiver.b - x_sender.b) * ex.t_rsp1
        elif name == "R":
            corr, _ = _rate_correction(ex, x_sender.b - x_receiver.b)
            values["R"] = dist + SPEED_OF_LIGHT * corr
        else:
            raise ProtocolError(f"unknown measurement row {name!r}")
    return MeasurementVector(**values)


def jacobian_H(x_sender, x_receiver, ex, rows=None):
    """Jacobian of predict_measurement with respect to the sender's state (m x 5).

    Every row of the model depends only on differences of the two states, so
    the Jacobian with respect to the receiver's state is the exact negation of
    the returned matrix.
    """
    rows = available_rows(ex.msg_type) if rows is None else tuple(rows)
    delta = x_receiver.p - x_sender.p
    dist = float(np.linalg.norm(delta))
    if dist < COINCIDENCE_LIMIT:
        raise SingularityError(
            f"nodes {ex.sender_id} and {ex.receiver_id} are coincident; "
            "range direction is undefined"
        )
    u = delta / dist
    H = np.zeros((len(rows), STATE_DIM))
    for i, name in enumerate(rows):
        if name == "d":
            H[i, :3] = -u / SPEED_OF_LIGHT
            H[i, OFFSET_INDEX] = -1.0
        elif name == "r":
            H[i, :3] = -u
            H[i, BIAS_INDEX] = -0.5 * SPEED_OF_LIGHT * ex.t_rsp1
        elif name == "R":
            _, slope = _rate_correction(ex, x_sender.b - x_receiver.b)
            H[i, :3] = -u
            H[i, BIAS_INDEX] = SPEED_OF_LIGHT * slope
        else:
            raise ProtocolError(f"unknown measurement row {name!r}")
    return H


_STAMP_NAMES = ("t0", "t1", "t2", "t3", "t4", "t5")


def measurement_noise_cov(ex, rows, stamp_std):
    """First-order measurement noise covariance from iid per-stamp noise.

    Propagates independent N(0, stamp_std^2) noise on every timestamp through
    the extraction formulas, including the covariance between rows that share
    stamps (d, r, and R from one record are correlated).
    """
    if not np.isfinite(stamp_std) or stamp_std <= 0.0:
        raise ModelError(f"stamp_std must be > 0, got {stamp_std!r}")
    rows = tuple(rows)
    G = np.zeros((len(rows), 6))
    for i, name in enumerate(rows):
        if name == "d":
            for stamp in ("t4", "t5"):
                ex._stamp(stamp)
            G[i, 4] = -1.0
            G[i, 5] = 1.0
        elif name == "r":
            for stamp in ("t2", "t3", "t4", "t5"):
                ex._stamp(stamp)
            half_c = 0.5 * SPEED_OF_LIGHT
            G[i, 2] = -half_c
            G[i, 3] = half_c
            G[i, 4] = -half_c
            G[i, 5] = half_c
        elif name == "R":
            rnd0, rsp0, rnd1, rsp1 = ex.t_rnd0, ex.t_rsp0, ex.t_rnd1, ex.t_rsp1
            total = rnd0 + rnd1 + rsp0 + rsp1
            if total <= 0.0:
                raise ProtocolError(f"non-positive duration sum {total!r} s")
            value = (rnd0 * rnd1 - rsp0 * rsp1) / total
            c = SPEED_OF_LIGHT
            g_rnd0 = c * (rnd1 - value) / total
            g_rnd1 = c * (rnd0 - value) / total
            g_rsp0 = c * (-rsp1 - value) / total
            g_rsp1 = c * (-rsp0 - value) / total
            G[i, 0] = -g_rnd0
            G[i, 1] = -g_rsp0
            G[i, 2] = g_rsp0 - g_rnd1
            G[i, 3] = g_rnd0 - g_rsp1
            G[i, 4] = g_rsp1
            G[i, 5] = g_rnd1
        else:
            raise ProtocolError(f"unknown measurement row {name!r}")
    return float(stamp_std) ** 2 * (G @ G.T)
