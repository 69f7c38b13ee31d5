"""Experiment runner: configured scenario in, error report and CSVs out.

One run is fully determined by its ScenarioConfig: a single seed fans out
into independent substreams for truth initialization, measurement noise,
and initial guesses, so identical configs reproduce identical outputs byte
for byte. CSV floats are written with repr, which round-trips doubles
exactly and does not depend on the process locale.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .config import ESTIMATOR_KEYS, replace
from .errors import LocsyncError
from .estimators import ALGORITHMS
from .metrics import build_report
from .simulate import advance_world, make_world, simulate_epoch

# Per-epoch series columns, one row per (epoch, node).
SERIES_COLUMNS = ("epoch", "node", "err_loc_m", "err_sync_s",
                  "x_est", "y_est", "z_est", "x_true", "y_true", "z_true")
SUMMARY_COLUMNS = ("node", "steady_loc_m", "final_loc_m",
                   "steady_sync_s", "final_sync_s")
TRACE_COLUMNS = ("epoch", "sender", "receiver", "msg_type",
                 "t0", "t1", "t2", "t3", "t4", "t5")
SWEEP_COLUMNS = ("axis", "value", "scenario", "algorithm", "seed", "epochs",
                 "failure_epoch", "steady_loc_m", "steady_sync_s",
                 "final_loc_m", "final_sync_s")

# Exceptions treated as an estimator failing on data, as opposed to a bug
# in the harness: the run stops and the report records the failure epoch.
FAILURE_EXCEPTIONS = (LocsyncError, np.linalg.LinAlgError, FloatingPointError)


@dataclass(eq=False)
class ExperimentResult:
    """Everything a run produced: report, raw series, file paths."""

    config: object
    report: object
    est_states: np.ndarray  # (s, n, 5) post-update estimates
    true_states: np.ndarray  # (s, n, 5) truth at each recorded epoch
    times: np.ndarray  # (s,) world time of each snapshot
    csv_paths: tuple = ()

    @property
    def run_id(self):
        cfg = self.config
        return f"{cfg.scenario_name}_{cfg.algorithm}_{cfg.seed}"


def _initial_guess(cfg, positions, rng):
    if cfg.init_mode == "bbox":
        lo = positions.min(axis=0)
        hi = positions.max(axis=0)
        return rng.uniform(lo, hi, size=positions.shape)
    return positions + rng.normal(scale=cfg.init_position_std,
                                  size=positions.shape)


def build_estimator(cfg, topology, initial_positions):
    """Instantiate the configured algorithm with the applicable overrides."""
    cls = ALGORITHMS[cfg.algorithm]
    extras = {k: v for k, v in cfg.estimator_overrides().items()
              if k in ESTIMATOR_KEYS[cfg.algorithm]}
    return cls(topology=topology, master=cfg.master,
               epoch_period=cfg.epoch_period, timestamp_std=cfg.timestamp_std,
               offset_density=cfg.offset_density,
               bias_density=cfg.bias_density, mobile_nodes=cfg.mobile_ids,
               initial_positions=initial_positions, **extras)


def _streams(seed):
    """The run's three independent RNG streams, in a fixed order."""
    ss = np.random.SeedSequence(seed)
    world, noise, init = [np.random.default_rng(s) for s in ss.spawn(3)]
    return world, noise, init


def _build_world(cfg, rng_world):
    positions = cfg.anchor_positions()
    trajectories = None
    trajectory = cfg.trajectory()
    if trajectory is not None:
        positions = np.vstack([positions, trajectory.position(0.0)[None, :]])
        trajectories = [None] * (positions.shape[0] - 1) + [trajectory]
    return make_world(
        positions, rng_world, trajectories=trajectories, master=cfg.master,
        offset_range=cfg.offset_init_range, bias_range=cfg.bias_init_range,
        offset_density=cfg.offset_density, bias_density=cfg.bias_density,
        timestamp_std=cfg.timestamp_std,
        turnaround_range=cfg.turnaround_range)


def run_experiment(cfg, out_dir=None):
    """Simulate and estimate one configured scenario.

    Returns an ExperimentResult whose report covers every completed epoch;
    if the estimator fails on an epoch the report carries that epoch index
    and message instead of raising. A zero-duration run reports the initial
    guesses. When out_dir is given, writes the per-epoch series CSV, the
    per-node summary CSV, and the effective config JSON there.
    """
    rng_world, rng_noise, rng_init = _streams(cfg.seed)
    world = _build_world(cfg, rng_world)
    topology = cfg.build_topology()
    guess = _initial_guess(cfg, world.positions(), rng_init)
    estimator = build_estimator(cfg, topology, guess)

    est_snaps, true_snaps, times = [], [], []
    failure_epoch, failure_message = None, ""
    for epoch in range(cfg.n_epochs):
        truth = world.state_matrix()
        records = []
        for msg_type in cfg.msg_types:
            records.extend(simulate_epoch(world, topology, msg_type,
                                          rng_noise))
        try:
            estimator.step(records)
        except FAILURE_EXCEPTIONS as exc:
            failure_epoch = epoch
            failure_message = f"{type(exc).__name__}: {exc}"
            break
        est_snaps.append(estimator.posterior_.copy())
        true_snaps.append(truth)
        times.append(world.time)
        if epoch + 1 < cfg.n_epochs:
            world = advance_world(world, cfg.epoch_period, rng_noise)

    completed = len(est_snaps)
    if not est_snaps:
        # nothing completed: report on the initial estimates
        init_est = np.zeros((cfg.n_nodes, 5))
        init_est[:, :3] = guess
        est_snaps = [init_est]
        true_snaps = [world.state_matrix()]
        times = [world.time]

    est_states = np.asarray(est_snaps)
    true_states = np.asarray(true_snaps)
    report = build_report(
        est_states, true_states, master=cfg.master,
        mobile_nodes=cfg.mobile_ids, epoch_period=cfg.epoch_period,
        n_epochs=completed,
        failure_epoch=failure_epoch, failure_message=failure_message)

    result = ExperimentResult(
        config=cfg, report=report, est_states=est_states,
        true_states=true_states, times=np.asarray(times))
    if out_dir is not None:
        result.csv_paths = write_run_outputs(result, out_dir)
    return result


def _fmt(value):
    """Locale-independent exact float formatting."""
    return repr(float(value))


def write_run_outputs(result, out_dir):
    """Write the series CSV, summary CSV, and effective config for a run."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = result.config
    report = result.report
    base = result.run_id
    series_path = os.path.join(out_dir, f"{base}.csv")
    summary_path = os.path.join(out_dir, f"{base}_summary.csv")
    config_path = os.path.join(out_dir, f"{base}_config.json")

    n_nodes = result.est_states.shape[1]
    with open(series_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_COLUMNS)
        for s in range(result.est_states.shape[0]):
            for node in range(n_nodes):
                est = result.est_states[s, node]
                true = result.true_states[s, node]
                writer.writerow([
                    s, node,
                    _fmt(report.loc_series[s, node]),
                    _fmt(report.sync_series[s, node]),
                    _fmt(est[0]), _fmt(est[1]), _fmt(est[2]),
                    _fmt(true[0]), _fmt(true[1]), _fmt(true[2]),
                ])

    steady = report.steady_loc.as_dict()
    final = report.loc.as_dict()
    steady_sync = report.steady_sync.as_dict()
    final_sync = report.sync.as_dict()
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for node in range(n_nodes):
            writer.writerow([
                node,
                _fmt(steady[node]), _fmt(final[node]),
                _fmt(steady_sync.get(node, 0.0)),
                _fmt(final_sync.get(node, 0.0)),
            ])
        writer.writerow([
            "mean",
            _fmt(report.steady_loc.mean), _fmt(report.loc.mean),
            _fmt(report.steady_sync.mean), _fmt(report.sync.mean),
        ])

    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json())
    return (series_path, summary_path, config_path)


def export_traces(cfg, out_dir):
    """Write the raw exchange log of a scenario as a CSV, one row per record.

    Uses the same seeding discipline as run_experiment, so the records match
    what the configured run's estimator would consume.
    """
    rng_world, rng_noise, _ = _streams(cfg.seed)
    world = _build_world(cfg, rng_world)
    topology = cfg.build_topology()
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{cfg.scenario_name}_traces_{cfg.seed}.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for epoch in range(cfg.n_epochs):
            for msg_type in cfg.msg_types:
                for rec in simulate_epoch(world, topology, msg_type,
                                          rng_noise):
                    stamps = [rec.t0, rec.t1, rec.t2, rec.t3, rec.t4, rec.t5]
                    writer.writerow(
                        [epoch, rec.sender_id, rec.receiver_id, rec.msg_type]
                        + ["" if t is None else _fmt(t) for t in stamps])
            if epoch + 1 < cfg.n_epochs:
                world = advance_world(world, cfg.epoch_period, rng_noise)
    return path


SWEEP_AXES = ("connectivity", "noise", "algorithm")


def _sweep_config(base_cfg, axis, value):
    if axis == "connectivity":
        k = int(value)
        if k >= base_cfg.n_nodes - 1:
            return replace(base_cfg, **{"topology": "full", "k": None})
        return replace(base_cfg, **{"topology": "k_nearest", "k": k})
    if axis == "noise":
        return replace(base_cfg, **{"noise.timestamp_std": float(value)})
    if axis == "algorithm":
        return replace(base_cfg, **{"algorithm": str(value)})
    raise ValueError(f"unknown sweep axis {axis!r}; axes: {SWEEP_AXES}")


def run_sweep(base_cfg, axis, values, out_dir=None):
    """Run the scenario once per axis value, in the order given.

    Returns [(value, ExperimentResult), ...]. When out_dir is given, each
    run writes its own outputs there plus one sweep summary CSV named
    sweep_<axis>.csv with a row per run, in the given value order.
    """
    results = []
    for value in values:
        cfg = _sweep_config(base_cfg, axis, value)
        results.append((value, run_experiment(cfg, out_dir=out_dir)))
    if out_dir is not None:
        path = os.path.join(out_dir, f"sweep_{axis}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SWEEP_COLUMNS)
            for value, result in results:
                report = result.report
                cfg = result.config
                writer.writerow([
                    axis, value, cfg.scenario_name, cfg.algorithm, cfg.seed,
                    report.n_epochs,
                    "" if report.failure_epoch is None else report.failure_epoch,
                    _fmt(report.steady_loc.mean), _fmt(report.steady_sync.mean),
                    _fmt(report.loc.mean), _fmt(report.sync.mean),
                ])
    return results
