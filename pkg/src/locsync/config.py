"""Scenario configuration: schema, validation, defaults, (de)serialization.

One canonical JSON document describes a complete run. Top-level keys cover
the scenario geometry and schedule; the `noise`, `init`, `mobile`, and
`estimator` sections group truth-model noise, initial-guess policy, the
optional mobile node, and per-algorithm tuning. Parsing applies defaults,
validates every field, and reports problems by dotted key path. A parsed
config serializes back to the identical document (round-trip fixpoint).
"""

import json
from dataclasses import dataclass

import numpy as np

from .constants import (
    DEFAULT_BIAS_INIT_RANGE,
    DEFAULT_BIAS_PROCESS_DENSITY,
    DEFAULT_OFFSET_INIT_RANGE,
    DEFAULT_OFFSET_PROCESS_DENSITY,
    DEFAULT_TIMESTAMP_STD,
    DEFAULT_TURNAROUND_RANGE,
)
from .errors import ConfigError, TopologyError
from .estimators import ALGORITHMS
from .estimators.diffusion import WEIGHT_SCHEMES
from .estimators.jacobi_ls import VARIANTS
from .simulate import Trajectory, default_mobile_loop, room8_layout
from .topology import build_topology

SCHEMA_VERSION = 1

LAYOUT_PRESETS = {"room8": room8_layout}
MOBILE_PATH_PRESETS = ("loop",)
TOPOLOGY_KINDS = ("full", "k_nearest", "explicit")
INIT_MODES = ("truth_noise", "bbox")
MSG_TYPES = (1, 2, 3)

# Estimator overrides accepted in the `estimator` section. Keys that do not
# apply to the configured algorithm are validated but silently unused, so a
# single config can drive an algorithm sweep.
_ESTIMATOR_BASE_KEYS = (
    "prior_position_std",
    "prior_offset_std",
    "prior_bias_std",
    "mobile_position_std",
)
_ESTIMATOR_EXTRA_KEYS = {
    "weight_scheme": "dkal",
    "prior_bandwidth": "mkal",
    "dici_gamma": "mkal",
    "dici_iters": "mkal",
    "dici_residual_tol": "mkal",
    "variant": "opt",
    "position_relaxation": "opt",
}
# Which extra keys each algorithm's constructor accepts.
ESTIMATOR_KEYS = {
    "ckal": _ESTIMATOR_BASE_KEYS,
    "dkal": _ESTIMATOR_BASE_KEYS + ("weight_scheme",),
    "mkal": _ESTIMATOR_BASE_KEYS + (
        "prior_bandwidth", "dici_gamma", "dici_iters", "dici_residual_tol"),
    "opt": _ESTIMATOR_BASE_KEYS + ("variant", "position_relaxation"),
}
_ALL_ESTIMATOR_KEYS = _ESTIMATOR_BASE_KEYS + tuple(_ESTIMATOR_EXTRA_KEYS)


def _err(path, message):
    raise ConfigError(f"{path}: {message}")


def _require(condition, path, message):
    if not condition:
        _err(path, message)


def _as_number(value, path, *, minimum=None, exclusive_minimum=None,
               maximum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _err(path, f"expected a number, got {value!r}")
    v = float(value)
    if not np.isfinite(v):
        _err(path, f"must be finite, got {value!r}")
    if minimum is not None and v < minimum:
        _err(path, f"must be >= {minimum}, got {value!r}")
    if exclusive_minimum is not None and v <= exclusive_minimum:
        _err(path, f"must be > {exclusive_minimum}, got {value!r}")
    if maximum is not None and v > maximum:
        _err(path, f"must be <= {maximum}, got {value!r}")
    return v


def _as_int(value, path, *, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        _err(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _err(path, f"must be >= {minimum}, got {value!r}")
    return int(value)


def _check_keys(section, allowed, prefix):
    for key in section:
        if key not in allowed:
            path = f"{prefix}.{key}" if prefix else key
            _err(path, "unknown key")


def _as_point_tuple(rows, path):
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, (list, tuple)) or len(row) != 3:
            _err(f"{path}[{i}]", f"expected [x, y, z], got {row!r}")
        out.append(tuple(
            _as_number(c, f"{path}[{i}][{j}]") for j, c in enumerate(row)))
    return tuple(out)


@dataclass(frozen=True)
class MobileSpec:
    """One mobile node appended after the anchors, following a waypoint path."""

    path: object = "loop"  # preset name or tuple of (x, y, z) waypoints
    speed: float = 0.5
    closed: bool = True

    def trajectory(self):
        if self.path == "loop":
            return default_mobile_loop(speed=self.speed)
        return Trajectory(np.asarray(self.path, dtype=float), self.speed,
                          closed=self.closed)

    def to_dict(self):
        path = self.path if isinstance(self.path, str) else [
            list(p) for p in self.path]
        return {"path": path, "speed": self.speed, "closed": self.closed}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated description of one simulation and estimation run.

    Instances are immutable; construct them through parse_config or
    from_dict so validation always runs. `layout` is a preset name or a
    tuple of anchor coordinates; the optional mobile node is appended after
    the anchors, so its index equals the anchor count.
    """

    schema_version: int = SCHEMA_VERSION
    name: str = ""
    layout: object = "room8"
    topology: str = "full"
    k: int | None = None
    edges: tuple | None = None
    algorithm: str = "ckal"
    msg_types: tuple = (3,)
    rate_hz: float = 2.0
    duration_s: float = 300.0
    master: int = 0
    seed: int = 0
    timestamp_std: float = DEFAULT_TIMESTAMP_STD
    offset_init_range: float = DEFAULT_OFFSET_INIT_RANGE
    bias_init_range: float = DEFAULT_BIAS_INIT_RANGE
    offset_density: float = DEFAULT_OFFSET_PROCESS_DENSITY
    bias_density: float = DEFAULT_BIAS_PROCESS_DENSITY
    turnaround_range: tuple = DEFAULT_TURNAROUND_RANGE
    init_mode: str = "truth_noise"
    init_position_std: float = 0.3
    mobile: MobileSpec | None = None
    estimator: tuple = ()  # sorted (key, value) override pairs

    # -- derived geometry -------------------------------------------------

    def anchor_positions(self):
        """(n_anchors, 3) anchor coordinates."""
        if isinstance(self.layout, str):
            return LAYOUT_PRESETS[self.layout]()
        return np.asarray(self.layout, dtype=float)

    def trajectory(self):
        return None if self.mobile is None else self.mobile.trajectory()

    @property
    def n_anchors(self):
        if isinstance(self.layout, str):
            return len(LAYOUT_PRESETS[self.layout]())
        return len(self.layout)

    @property
    def n_nodes(self):
        return self.n_anchors + (0 if self.mobile is None else 1)

    @property
    def mobile_ids(self):
        return () if self.mobile is None else (self.n_anchors,)

    @property
    def n_epochs(self):
        return int(round(self.duration_s * self.rate_hz))

    @property
    def epoch_period(self):
        return 1.0 / self.rate_hz

    @property
    def scenario_name(self):
        if self.name:
            return self.name
        base = self.layout if isinstance(self.layout, str) else (
            f"custom{self.n_anchors}")
        return base + ("_mobile" if self.mobile is not None else "")

    def estimator_overrides(self):
        return dict(self.estimator)

    def build_topology(self):
        positions = self.anchor_positions()
        if self.mobile is not None:
            start = self.trajectory().position(0.0)
            positions = np.vstack([positions, start[None, :]])
        if self.topology == "full":
            return build_topology("full", n_nodes=self.n_nodes)
        if self.topology == "k_nearest":
            return build_topology("k_nearest", positions, k=self.k)
        return build_topology("explicit", n_nodes=self.n_nodes,
                              edges=self.edges)

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        """Canonical nested document; parse_dict of it reproduces self."""
        layout = self.layout if isinstance(self.layout, str) else [
            list(p) for p in self.layout]
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "layout": layout,
            "topology": self.topology,
            "k": self.k,
            "edges": None if self.edges is None else [
                list(e) for e in self.edges],
            "algorithm": self.algorithm,
            "msg_types": list(self.msg_types),
            "rate_hz": self.rate_hz,
            "duration_s": self.duration_s,
            "master": self.master,
            "seed": self.seed,
            "noise": {
                "timestamp_std": self.timestamp_std,
                "offset_init_range": self.offset_init_range,
                "bias_init_range": self.bias_init_range,
                "offset_density": self.offset_density,
                "bias_density": self.bias_density,
                "turnaround_range": list(self.turnaround_range),
            },
            "init": {
                "mode": self.init_mode,
                "position_std": self.init_position_std,
            },
            "mobile": None if self.mobile is None else self.mobile.to_dict(),
            "estimator": dict(self.estimator),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_TOP_KEYS = (
    "schema_version", "name", "layout", "topology", "k", "edges", "algorithm",
    "msg_types", "rate_hz", "duration_s", "master", "seed", "noise", "init",
    "mobile", "estimator",
)
_NOISE_KEYS = (
    "timestamp_std", "offset_init_range", "bias_init_range", "offset_density",
    "bias_density", "turnaround_range",
)
_INIT_KEYS = ("mode", "position_std")
_MOBILE_KEYS = ("path", "speed", "closed")


def _parse_layout(value):
    if isinstance(value, str):
        if value not in LAYOUT_PRESETS:
            _err("layout", f"unknown preset {value!r}; presets: "
                 f"{sorted(LAYOUT_PRESETS)}")
        return value
    if isinstance(value, (list, tuple)):
        pts = _as_point_tuple(value, "layout")
        _require(len(pts) >= 2, "layout", "needs at least 2 anchors")
        return pts
    _err("layout", f"expected preset name or coordinate list, got {value!r}")


def _parse_mobile(section):
    if section is None:
        return None
    if not isinstance(section, dict):
        _err("mobile", f"expected an object or null, got {section!r}")
    _check_keys(section, _MOBILE_KEYS, "mobile")
    path = section.get("path", "loop")
    if isinstance(path, str):
        if path not in MOBILE_PATH_PRESETS:
            _err("mobile.path", f"unknown preset {path!r}; presets: "
                 f"{sorted(MOBILE_PATH_PRESETS)}")
    elif isinstance(path, (list, tuple)):
        path = _as_point_tuple(path, "mobile.path")
        _require(len(path) >= 2, "mobile.path", "needs at least 2 waypoints")
    else:
        _err("mobile.path", f"expected preset or waypoint list, got {path!r}")
    speed = _as_number(section.get("speed", 0.5), "mobile.speed",
                       exclusive_minimum=0.0)
    closed = section.get("closed", True)
    if not isinstance(closed, bool):
        _err("mobile.closed", f"expected a boolean, got {closed!r}")
    return MobileSpec(path=path, speed=speed, closed=closed)


def _parse_estimator(section):
    if not isinstance(section, dict):
        _err("estimator", f"expected an object, got {section!r}")
    _check_keys(section, _ALL_ESTIMATOR_KEYS, "estimator")
    out = {}
    for key, value in section.items():
        path = f"estimator.{key}"
        if key == "weight_scheme":
            _require(value in WEIGHT_SCHEMES, path,
                     f"must be one of {sorted(WEIGHT_SCHEMES)}, got {value!r}")
            out[key] = value
        elif key == "variant":
            _require(value in VARIANTS, path,
                     f"must be one of {sorted(VARIANTS)}, got {value!r}")
            out[key] = value
        elif key == "dici_iters":
            out[key] = _as_int(value, path, minimum=1)
        elif key == "prior_bandwidth":
            out[key] = None if value is None else _as_int(value, path,
                                                          minimum=0)
        elif key in ("dici_gamma", "position_relaxation"):
            out[key] = _as_number(value, path, exclusive_minimum=0.0,
                                  maximum=1.0)
        elif key == "mobile_position_std":
            out[key] = _as_number(value, path, minimum=0.0)
        else:
            out[key] = _as_number(value, path, exclusive_minimum=0.0)
    return tuple(sorted(out.items()))


def parse_dict(doc):
    """Validate a configuration document and return a ScenarioConfig."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object, got {type(doc).__name__}")
    _check_keys(doc, _TOP_KEYS, "")

    version = doc.get("schema_version", SCHEMA_VERSION)
    _require(version == SCHEMA_VERSION, "schema_version",
             f"unsupported version {version!r}; this build reads "
             f"{SCHEMA_VERSION}")

    name = doc.get("name", "")
    if not isinstance(name, str):
        _err("name", f"expected a string, got {name!r}")

    layout = _parse_layout(doc.get("layout", "room8"))
    mobile = _parse_mobile(doc.get("mobile"))

    algorithm = doc.get("algorithm", "ckal")
    _require(algorithm in ALGORITHMS, "algorithm",
             f"must be one of {sorted(ALGORITHMS)}, got {algorithm!r}")

    raw_types = doc.get("msg_types", [3])
    if not isinstance(raw_types, (list, tuple)) or not raw_types:
        _err("msg_types", f"expected a non-empty list, got {raw_types!r}")
    msg_types = []
    for i, t in enumerate(raw_types):
        t = _as_int(t, f"msg_types[{i}]")
        _require(t in MSG_TYPES, f"msg_types[{i}]",
                 f"must be one of {list(MSG_TYPES)}, got {t!r}")
        _require(t not in msg_types, f"msg_types[{i}]", f"duplicate type {t}")
        msg_types.append(t)
    msg_types = tuple(sorted(msg_types))

    rate_hz = _as_number(doc.get("rate_hz", 2.0), "rate_hz",
                         exclusive_minimum=0.0)
    duration_s = _as_number(doc.get("duration_s", 300.0), "duration_s",
                            minimum=0.0)
    seed = _as_int(doc.get("seed", 0), "seed", minimum=0)

    noise = doc.get("noise", {})
    if not isinstance(noise, dict):
        _err("noise", f"expected an object, got {noise!r}")
    _check_keys(noise, _NOISE_KEYS, "noise")
    timestamp_std = _as_number(
        noise.get("timestamp_std", DEFAULT_TIMESTAMP_STD),
        "noise.timestamp_std", minimum=0.0)
    offset_init_range = _as_number(
        noise.get("offset_init_range", DEFAULT_OFFSET_INIT_RANGE),
        "noise.offset_init_range", minimum=0.0)
    bias_init_range = _as_number(
        noise.get("bias_init_range", DEFAULT_BIAS_INIT_RANGE),
        "noise.bias_init_range", minimum=0.0)
    offset_density = _as_number(
        noise.get("offset_density", DEFAULT_OFFSET_PROCESS_DENSITY),
        "noise.offset_density", minimum=0.0)
    bias_density = _as_number(
        noise.get("bias_density", DEFAULT_BIAS_PROCESS_DENSITY),
        "noise.bias_density", minimum=0.0)
    turnaround = noise.get("turnaround_range", list(DEFAULT_TURNAROUND_RANGE))
    if not isinstance(turnaround, (list, tuple)) or len(turnaround) != 2:
        _err("noise.turnaround_range", f"expected [lo, hi], got {turnaround!r}")
    ta_lo = _as_number(turnaround[0], "noise.turnaround_range[0]",
                       exclusive_minimum=0.0)
    ta_hi = _as_number(turnaround[1], "noise.turnaround_range[1]",
                       minimum=ta_lo)

    init = doc.get("init", {})
    if not isinstance(init, dict):
        _err("init", f"expected an object, got {init!r}")
    _check_keys(init, _INIT_KEYS, "init")
    init_mode = init.get("mode", "truth_noise")
    _require(init_mode in INIT_MODES, "init.mode",
             f"must be one of {sorted(INIT_MODES)}, got {init_mode!r}")
    init_position_std = _as_number(init.get("position_std", 0.3),
                                   "init.position_std", minimum=0.0)

    estimator = _parse_estimator(doc.get("estimator", {}))

    n_anchors = len(LAYOUT_PRESETS[layout]()) if isinstance(layout, str) \
        else len(layout)
    n_nodes = n_anchors + (0 if mobile is None else 1)
    master = _as_int(doc.get("master", 0), "master", minimum=0)
    _require(master < n_nodes, "master",
             f"out of range for {n_nodes} nodes, got {master}")

    kind = doc.get("topology", "full")
    _require(kind in TOPOLOGY_KINDS, "topology",
             f"must be one of {sorted(TOPOLOGY_KINDS)}, got {kind!r}")
    k = doc.get("k")
    edges = doc.get("edges")
    if kind == "k_nearest":
        _require(k is not None, "k", "required for k_nearest topology")
        k = _as_int(k, "k", minimum=1)
        _require(k < n_nodes, "k", f"must be < {n_nodes} nodes, got {k}")
    else:
        _require(k is None, "k", f"only valid for k_nearest, not {kind!r}")
    if kind == "explicit":
        _require(isinstance(edges, (list, tuple)) and edges, "edges",
                 "required (non-empty) for explicit topology")
        parsed_edges = []
        for i, e in enumerate(edges):
            if not isinstance(e, (list, tuple)) or len(e) != 2:
                _err(f"edges[{i}]", f"expected [a, b], got {e!r}")
            a = _as_int(e[0], f"edges[{i}][0]", minimum=0)
            b = _as_int(e[1], f"edges[{i}][1]", minimum=0)
            _require(a < n_nodes and b < n_nodes, f"edges[{i}]",
                     f"node out of range for {n_nodes} nodes: {e!r}")
            parsed_edges.append((a, b))
        edges = tuple(parsed_edges)
    else:
        _require(edges is None, "edges",
                 f"only valid for explicit topology, not {kind!r}")

    cfg = ScenarioConfig(
        schema_version=SCHEMA_VERSION, name=name, layout=layout,
        topology=kind, k=k, edges=edges, algorithm=algorithm,
        msg_types=msg_types, rate_hz=rate_hz, duration_s=duration_s,
        master=master, seed=seed, timestamp_std=timestamp_std,
        offset_init_range=offset_init_range, bias_init_range=bias_init_range,
        offset_density=offset_density, bias_density=bias_density,
        turnaround_range=(ta_lo, ta_hi), init_mode=init_mode,
        init_position_std=init_position_std, mobile=mobile,
        estimator=estimator,
    )
    try:
        cfg.build_topology()
    except TopologyError as exc:
        raise ConfigError(f"topology: {exc}") from exc
    return cfg


def apply_overrides(doc, overrides):
    """Merge flag-level overrides into a raw config document.

    Overrides win over file values, which win over defaults. Keys use the
    same dotted paths as error messages, e.g. "noise.timestamp_std".
    """
    merged = json.loads(json.dumps(doc))  # deep copy, JSON types only
    for path, value in overrides.items():
        parts = path.split(".")
        cursor = merged
        for part in parts[:-1]:
            nxt = cursor.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                cursor[part] = nxt
            cursor = nxt
        cursor[parts[-1]] = value
    return merged


def parse_config(path=None, overrides=None):
    """Load a config file (JSON), apply overrides, validate.

    path None means defaults only; an empty file is the all-defaults
    scenario. Returns a ScenarioConfig.
    """
    doc = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        if text.strip():
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if overrides:
        doc = apply_overrides(doc, overrides)
    return parse_dict(doc)


def config_from_args(args_mapping):
    """Build the override dict for parse_config from parsed CLI flags.

    args_mapping holds already-typed values keyed by flag name; flags the
    user did not pass must be absent. The topology flag accepts "full" or
    "k:<n>".
    """
    overrides = {}
    if "algorithm" in args_mapping:
        overrides["algorithm"] = args_mapping["algorithm"]
    if "topology" in args_mapping:
        spec = args_mapping["topology"]
        if spec == "full":
            overrides["topology"] = "full"
        elif spec.startswith("k:"):
            try:
                overrides["k"] = int(spec[2:])
            except ValueError:
                raise ConfigError(
                    f"topology: expected full or k:<n>, got {spec!r}")
            overrides["topology"] = "k_nearest"
        else:
            raise ConfigError(f"topology: expected full or k:<n>, got {spec!r}")
    if "msg_types" in args_mapping:
        overrides["msg_types"] = args_mapping["msg_types"]
    if "rate" in args_mapping:
        overrides["rate_hz"] = args_mapping["rate"]
    if "duration" in args_mapping:
        overrides["duration_s"] = args_mapping["duration"]
    if "seed" in args_mapping:
        overrides["seed"] = args_mapping["seed"]
    if "name" in args_mapping:
        overrides["name"] = args_mapping["name"]
    return overrides


def replace(cfg, **changes):
    """dataclasses.replace with re-validation through the parser."""
    doc = cfg.to_dict()
    merged = apply_overrides(doc, changes)
    return parse_dict(merged)
