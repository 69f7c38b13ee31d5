"""Accuracy metrics and run reports.

Localization error is measured after a rigid Procrustes alignment because
range-only estimation fixes geometry only up to rotation, translation, and
reflection. Synchronization error is measured relative to the master clock,
the network's time reference. Reports aggregate per-epoch series into
convergence curves, steady-state summaries (the trailing fraction of the
run), and a mobile-tracking section when the scenario has moving nodes.
"""

from dataclasses import dataclass

import numpy as np

from .constants import OFFSET_INDEX
from .errors import AlignmentError
from .linalg import procrustes_align

# Fraction of the run treated as steady state (trailing window).
STEADY_FRACTION = 0.2


def steady_window(n_samples, fraction=STEADY_FRACTION):
    """Slice selecting the trailing fraction of a series, at least one sample."""
    n = int(n_samples)
    if n <= 0:
        raise ValueError(f"need at least one sample, got {n}")
    width = max(1, int(round(fraction * n)))
    return slice(n - width, n)


def _position_array(arr, name):
    a = np.asarray(arr, dtype=float)
    if a.ndim != 2 or a.shape[1] < 3:
        raise AlignmentError(f"{name} must be (n, 3) or (n, 5), got {a.shape}")
    return a[:, :3]


def _offset_array(arr, name):
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        return a
    if a.ndim == 2 and a.shape[1] > OFFSET_INDEX:
        return a[:, OFFSET_INDEX]
    raise ValueError(f"{name} must be (n,) offsets or (n, 5) states, got {a.shape}")


@dataclass(frozen=True, eq=False)
class NodeErrors:
    """Per-node error magnitudes with their node indices.

    mean and std are always the arithmetic mean and population standard
    deviation of `values`; they exist as properties so they cannot drift
    out of sync with the array.
    """

    node_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.node_ids),):
            raise ValueError(
                f"got {len(self.node_ids)} node ids for {vals.shape} values")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "node_ids", tuple(int(k) for k in self.node_ids))

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def std(self):
        return float(np.std(self.values))

    def as_dict(self):
        return {k: float(v) for k, v in zip(self.node_ids, self.values)}


def localization_error(estimated, truth):
    """Per-node position error after optimal rigid alignment.

    Both inputs are (n, 3) positions or (n, 5) states in the same node
    order. Requires at least three nodes with non-degenerate spread; the
    alignment is undefined otherwise and raises AlignmentError.
    """
    est = _position_array(estimated, "estimated")
    true = _position_array(truth, "truth")
    if est.shape != true.shape:
        raise AlignmentError(
            f"shape mismatch: estimated {est.shape} vs truth {true.shape}")
    _, _, aligned = procrustes_align(est, true)
    errs = np.linalg.norm(aligned - true, axis=1)
    return NodeErrors(tuple(range(est.shape[0])), errs)


def sync_error(estimated, truth, master=0):
    """Per-node absolute clock-offset error relative to the master (seconds).

    Inputs are (n,) offset vectors or (n, 5) state matrices. Offsets are
    re-referenced to the master node on both sides before differencing, so
    a common shift of all estimated clocks does not count as error. The
    master itself is excluded from the result.
    """
    est = _offset_array(estimated, "estimated")
    true = _offset_array(truth, "truth")
    if est.shape != true.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {true.shape}")
    n = est.shape[0]
    if not 0 <= master < n:
        raise ValueError(f"master {master} out of range for {n} nodes")
    rel = (est - est[master]) - (true - true[master])
    ids = tuple(k for k in range(n) if k != master)
    return NodeErrors(ids, np.abs(rel[list(ids)]))


def centroid_distance_series(points, reference):
    """Distance of a tracked point from the centroid of reference points.

    points is (s, 3), one position per epoch; reference is (m, 3) for a
    fixed reference set or (s, m, 3) for a per-epoch one. Returns (s,).
    """
    pts = np.asarray(points, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (s, 3), got {pts.shape}")
    if ref.ndim not in (2, 3) or ref.shape[-1] != 3:
        raise ValueError(f"reference must be (m, 3) or (s, m, 3), got {ref.shape}")
    centroid = ref.mean(axis=-2)
    return np.linalg.norm(pts - centroid, axis=-1)


def convergence_epoch(curve, steady=None, factor=2.0):
    """First epoch from which the curve stays within factor * steady.

    steady defaults to the mean of the curve's own trailing window. Returns
    None if even the final value exceeds the threshold.
    """
    c = np.asarray(curve, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError(f"curve must be a non-empty 1-d array, got {c.shape}")
    if steady is None:
        steady = float(np.mean(c[steady_window(c.size)]))
    threshold = factor * steady
    # suffix maxima: curve stays under the threshold from index e onward
    suffix_max = np.maximum.accumulate(c[::-1])[::-1]
    hits = np.nonzero(suffix_max <= threshold)[0]
    return int(hits[0]) if hits.size else None


@dataclass(eq=False)
class MobileReport:
    """Tracking summary for the mobile nodes of a run.

    Mobile estimates are mapped into the truth frame with the alignment
    fitted on the static nodes at the final epoch, then compared per epoch
    against the true trajectory. A per-epoch alignment would let the gauge
    fit absorb part of the tracking error, so a single frozen transform is
    used instead.
    """

    node_ids: tuple
    axis_error: np.ndarray  # (s, n_mobile, 3) aligned estimate minus truth
    error_norm: np.ndarray  # (s, n_mobile)
    rmse_3d: np.ndarray  # (n_mobile,)
    centroid_distance_est: np.ndarray  # (s, n_mobile)
    centroid_distance_true: np.ndarray  # (s, n_mobile)


@dataclass(eq=False)
class ErrorReport:
    """Full accuracy report for one run.

    Snapshots are the per-epoch post-update estimates; a run that executed
    no epochs reports on the initial estimates alone (one snapshot,
    n_epochs = 0). Static-node localization errors use a per-epoch
    alignment; mobile nodes use the final static alignment throughout (see
    MobileReport). Sync errors are master-relative, so the master column of
    sync_series is identically zero and the master is excluded from sync
    summaries. steady_* aggregate the trailing STEADY_FRACTION of the run.
    """

    n_epochs: int
    epoch_period: float
    master: int
    static_ids: tuple
    mobile_ids: tuple
    loc: NodeErrors
    sync: NodeErrors
    steady_loc: NodeErrors
    steady_sync: NodeErrors
    loc_curve: np.ndarray  # (s,) mean static localization error per epoch
    sync_curve: np.ndarray  # (s,) mean non-master sync error per epoch
    loc_series: np.ndarray  # (s, n) per-node localization error
    sync_series: np.ndarray  # (s, n) per-node sync error, master column zero
    mobile: MobileReport | None = None
    failure_epoch: int | None = None
    failure_message: str = ""

    @property
    def steady_loc_mean(self):
        return self.steady_loc.mean

    @property
    def steady_sync_mean(self):
        return self.steady_sync.mean

    def convergence_epoch(self, factor=2.0):
        """First epoch from which localization stays within factor * steady."""
        return convergence_epoch(self.loc_curve, self.steady_loc_mean, factor)

    def completed(self):
        return self.failure_epoch is None


def build_report(est_states, true_states, *, master=0, mobile_nodes=(),
                 epoch_period=0.5, n_epochs=None, failure_epoch=None,
                 failure_message=""):
    """Assemble an ErrorReport from per-epoch state snapshots.

    est_states and true_states are (s, n, 5) arrays in matching node order,
    one snapshot per executed epoch (or a single initial snapshot when no
    epoch ran). Needs at least three static nodes for the alignment.
    """
    est = np.asarray(est_states, dtype=float)
    true = np.asarray(true_states, dtype=float)
    if est.ndim != 3 or est.shape != true.shape or est.shape[2] < 5:
        raise ValueError(
            f"need matching (s, n, 5) snapshot arrays, got {est.shape} "
            f"and {true.shape}")
    s_count, n_nodes, _ = est.shape
    mobile_ids = tuple(sorted(int(k) for k in mobile_nodes))
    static_ids = tuple(k for k in range(n_nodes) if k not in mobile_ids)
    if len(static_ids) < 3:
        raise AlignmentError(
            f"need at least 3 static nodes to align, got {len(static_ids)}")
    if n_epochs is None:
        n_epochs = s_count
    static = list(static_ids)

    loc_series = np.zeros((s_count, n_nodes))
    sync_series = np.zeros((s_count, n_nodes))
    rot_final, shift_final = None, None
    for s in range(s_count):
        rot, shift, aligned = procrustes_align(
            est[s, static, :3], true[s, static, :3])
        loc_series[s, static] = np.linalg.norm(
            aligned - true[s, static, :3], axis=1)
        rel = ((est[s, :, OFFSET_INDEX] - est[s, master, OFFSET_INDEX])
               - (true[s, :, OFFSET_INDEX] - true[s, master, OFFSET_INDEX]))
        sync_series[s] = np.abs(rel)
        rot_final, shift_final = rot, shift

    mobile = None
    if mobile_ids:
        mlist = list(mobile_ids)
        aligned_mobile = est[:, mlist, :3] @ rot_final.T + shift_final
        axis_error = aligned_mobile - true[:, mlist, :3]
        error_norm = np.linalg.norm(axis_error, axis=2)
        loc_series[:, mlist] = error_norm
        rmse = np.sqrt(np.mean(error_norm ** 2, axis=0))
        cent_est = np.stack(
            [centroid_distance_series(aligned_mobile[:, j], true[:, static, :3])
             for j in range(len(mlist))], axis=1)
        cent_true = np.stack(
            [centroid_distance_series(true[:, mlist[j], :3], true[:, static, :3])
             for j in range(len(mlist))], axis=1)
        mobile = MobileReport(
            node_ids=mobile_ids, axis_error=axis_error, error_norm=error_norm,
            rmse_3d=rmse, centroid_distance_est=cent_est,
            centroid_distance_true=cent_true)

    non_master = [k for k in range(n_nodes) if k != master]
    loc_curve = loc_series[:, static].mean(axis=1)
    sync_curve = sync_series[:, non_master].mean(axis=1)
    window = steady_window(s_count)
    all_ids = tuple(range(n_nodes))
    return ErrorReport(
        n_epochs=int(n_epochs),
        epoch_period=float(epoch_period),
        master=int(master),
        static_ids=static_ids,
        mobile_ids=mobile_ids,
        loc=NodeErrors(all_ids, loc_series[-1]),
        sync=NodeErrors(tuple(non_master), sync_series[-1, non_master]),
        steady_loc=NodeErrors(all_ids, loc_series[window].mean(axis=0)),
        steady_sync=NodeErrors(
            tuple(non_master), sync_series[window][:, non_master].mean(axis=0)),
        loc_curve=loc_curve,
        sync_curve=sync_curve,
        loc_series=loc_series,
        sync_series=sync_series,
        mobile=mobile,
        failure_epoch=failure_epoch,
        failure_message=failure_message,
    )
