"""Run configuration: defaults, validation, and YAML round-trip.

Every knob of the simulator lives here so that a run is fully described by
(config, seed). Unknown keys and out-of-range values are rejected at load
time with the offending key named in the error.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml


class ConfigError(ValueError):
    """Raised for unknown keys, out-of-range values, or malformed tables."""


# Default CR-limit table: (cbr upper bound, cr limit), bounds increasing,
# limits non-increasing. Tightest tier applies under heavy load.
DEFAULT_CR_LIMIT_TABLE = (
    (0.30, 0.030),
    (0.65, 0.006),
    (0.80, 0.003),
    (1.00, 0.002),
)


@dataclass(frozen=True)
class Config:
    """All simulation parameters with case-study defaults."""

    # --- scenario ---
    area_side_m: float = 2000.0
    variable_density_per_km2: float = 750.0
    n_vehicles: int = 200
    # Local detection model P(d) = 1 / (1 + c1 * exp(c2 * (d - c3))),
    # strictly decreasing in d for c1, c2 > 0.
    detection_c1: float = 0.08
    detection_c2_per_m: float = 0.08
    detection_c3_m: float = 60.0
    perception_range_m: float = 150.0
    # Variables farther than this from a vehicle are never sampled for
    # detection (their per-epoch probability is below 1e-7 at defaults).
    detection_cutoff_m: float = 300.0
    persistent_detection: bool = False
    d_max_m: float = 400.0
    m_relevant: int = 40
    relevance_selection: str = "uniform"  # uniform | nearest
    torus_distance: bool = False

    # --- timing ---
    epoch_ms: float = 100.0
    horizon_epochs: int = 300
    warmup_epochs: int = 10

    # --- message / resource grid ---
    variable_bytes: int = 52
    header_bytes: int = 100
    slots_per_window: int = 100
    subchannels_per_slot: int = 4
    subchannel_capacity_bytes: int = 300

    # --- channel ---
    channel_mode: str = "parametric"  # parametric | table
    rx_midpoint_m: float = 300.0
    rx_slope_per_m: float = 0.02
    interference_gamma: float = 0.4
    sense_midpoint_m: float = 500.0
    sense_slope_per_m: float = 0.02
    channel_table_path: Optional[str] = None
    perfect_channel: bool = False
    half_duplex: bool = True

    # --- transmitter pipeline ---
    redundancy_mode: str = "hard"  # hard | soft
    force_p_red_zero: bool = False
    beta: float = 0.0
    persistent_beta: bool = False
    intended_rule_reverse: bool = False
    transmit_when_no_intended: bool = True

    # --- congestion control ---
    congestion_enabled: bool = True
    cr_limit_table: tuple = DEFAULT_CR_LIMIT_TABLE
    cr_window_epochs: int = 10

    # --- freshness windows (milliseconds) ---
    w_avail_ms: float = 1000.0
    w_rec_ms: float = 500.0
    # Lookback for the heard-variable ledger used by redundancy estimation.
    # None derives w_avail - one epoch, which makes a hard estimate provably
    # consistent with the receiver's availability window under a perfect
    # channel (information heard at e stays "known" exactly while the
    # receiver's copy from the same broadcast is still fresh).
    redundancy_window_ms: Optional[float] = None

    # --- bookkeeping ---
    record_run: bool = False
    draw_log: bool = False

    # ------------------------------------------------------------------
    @property
    def area_km2(self) -> float:
        return (self.area_side_m / 1000.0) ** 2

    @property
    def w_avail_epochs(self) -> int:
        return int(round(self.w_avail_ms / self.epoch_ms))

    @property
    def w_rec_epochs(self) -> int:
        return int(round(self.w_rec_ms / self.epoch_ms))

    @property
    def redundancy_window_epochs(self) -> int:
        if self.redundancy_window_ms is None:
            return max(1, self.w_avail_epochs - 1)
        return int(round(self.redundancy_window_ms / self.epoch_ms))

    @property
    def max_payload_bytes(self) -> int:
        return self.subchannels_per_slot * self.subchannel_capacity_bytes

    @property
    def max_content_variables(self) -> int:
        return (self.max_payload_bytes - self.header_bytes) // self.variable_bytes

    def replace(self, **kwargs) -> "Config":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["cr_limit_table"] = [list(row) for row in self.cr_limit_table]
        return d

    def __post_init__(self):
        validate_config(self)


_FIELD_NAMES = None


def _field_names():
    global _FIELD_NAMES
    if _FIELD_NAMES is None:
        _FIELD_NAMES = {f.name for f in dataclasses.fields(Config)}
    return _FIELD_NAMES


def _check(cond: bool, key: str, message: str):
    if not cond:
        raise ConfigError(f"{key}: {message}")


def validate_config(cfg: Config):
    _check(cfg.area_side_m > 0, "area_side_m", "must be positive")
    _check(cfg.variable_density_per_km2 >= 0, "variable_density_per_km2", "must be >= 0")
    _check(cfg.n_vehicles >= 2, "n_vehicles", "must be >= 2")
    _check(cfg.detection_c1 > 0, "detection_c1", "must be positive")
    _check(cfg.detection_c2_per_m > 0, "detection_c2_per_m",
           "must be positive (decreasing detection probability)")
    _check(cfg.perception_range_m > 0, "perception_range_m", "must be positive")
    _check(cfg.detection_cutoff_m >= cfg.perception_range_m, "detection_cutoff_m",
           "must cover the perception range")
    _check(cfg.d_max_m > 0, "d_max_m", "must be positive")
    _check(cfg.m_relevant >= 1, "m_relevant", "must be >= 1")
    _check(cfg.relevance_selection in ("uniform", "nearest"), "relevance_selection",
           "must be 'uniform' or 'nearest'")
    _check(cfg.epoch_ms > 0, "epoch_ms", "must be positive")
    _check(cfg.horizon_epochs >= 1, "horizon_epochs", "must be >= 1")
    _check(0 <= cfg.warmup_epochs <= cfg.horizon_epochs, "warmup_epochs",
           "must lie in [0, horizon_epochs]")
    _check(cfg.variable_bytes >= 1, "variable_bytes", "must be >= 1")
    _check(cfg.header_bytes >= 0, "header_bytes", "must be >= 0")
    _check(cfg.slots_per_window >= 1, "slots_per_window", "must be >= 1")
    _check(cfg.subchannels_per_slot >= 1, "subchannels_per_slot", "must be >= 1")
    _check(cfg.subchannel_capacity_bytes >= 1, "subchannel_capacity_bytes", "must be >= 1")
    _check(cfg.max_content_variables >= 1, "subchannel_capacity_bytes",
           "grid cannot fit a single variable")
    _check(cfg.channel_mode in ("parametric", "table"), "channel_mode",
           "must be 'parametric' or 'table'")
    if cfg.channel_mode == "table":
        _check(cfg.channel_table_path is not None, "channel_table_path",
               "required when channel_mode is 'table'")
    _check(cfg.rx_slope_per_m > 0, "rx_slope_per_m", "must be positive")
    _check(cfg.sense_slope_per_m > 0, "sense_slope_per_m", "must be positive")
    _check(0 <= cfg.interference_gamma <= 1, "interference_gamma", "must lie in [0, 1]")
    _check(cfg.sense_midpoint_m >= cfg.rx_midpoint_m, "sense_midpoint_m",
           "sensing must not have shorter range than reception")
    _check(cfg.redundancy_mode in ("hard", "soft"), "redundancy_mode",
           "must be 'hard' or 'soft'")
    _check(0.0 <= cfg.beta <= 1.0, "beta", "must lie in [0, 1]")
    validate_cr_limit_table(cfg.cr_limit_table)
    _check(cfg.cr_window_epochs >= 1, "cr_window_epochs", "must be >= 1")
    _check(cfg.w_avail_ms >= cfg.epoch_ms, "w_avail_ms", "must cover at least one epoch")
    _check(cfg.w_rec_ms >= 0, "w_rec_ms", "must be >= 0")
    if cfg.redundancy_window_ms is not None:
        _check(cfg.redundancy_window_ms >= cfg.epoch_ms, "redundancy_window_ms",
               "must cover at least one epoch")
    # The stated perception range must coincide with a near-zero detection
    # probability for the configured model.
    from .scenario import detection_probability  # local import to avoid a cycle

    p_edge = detection_probability(cfg.perception_range_m, cfg)
    _check(p_edge < 0.01, "perception_range_m",
           f"detection probability at the perception range is {p_edge:.4f}, expected < 0.01")


def validate_cr_limit_table(table):
    key = "cr_limit_table"
    _check(len(table) >= 1, key, "must have at least one row")
    prev_bound = 0.0
    prev_limit = None
    for i, row in enumerate(table):
        _check(len(row) == 2, key, f"row {i} must be a (cbr_bound, cr_limit) pair")
        bound, limit = float(row[0]), float(row[1])
        _check(0 < bound <= 1.0, key, f"row {i}: bound must lie in (0, 1]")
        _check(bound > prev_bound, key, f"row {i}: bounds must be strictly increasing")
        _check(0 <= limit <= 1.0, key, f"row {i}: limit must lie in [0, 1]")
        if prev_limit is not None:
            _check(limit <= prev_limit, key, f"row {i}: limits must be non-increasing")
        prev_bound, prev_limit = bound, limit
    _check(abs(prev_bound - 1.0) < 1e-12, key, "last bound must equal 1.0")


def config_from_dict(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - _field_names()
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    clean = dict(data)
    if "cr_limit_table" in clean:
        table = clean["cr_limit_table"]
        if not isinstance(table, (list, tuple)):
            raise ConfigError("cr_limit_table: must be a list of [cbr_bound, cr_limit] pairs")
        clean["cr_limit_table"] = tuple(tuple(float(x) for x in row) for row in table)
    try:
        return Config(**clean)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path) -> Config:
    """Load a YAML config file; absent keys take the defaults above."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data)


def dump_config(cfg: Config, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
