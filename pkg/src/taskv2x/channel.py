"""Broadcast channel abstraction.

Reception and sensing are per-link Bernoulli draws whose probabilities
depend on distance (logistic falloff) and, for reception, on the channel
busy ratio observed at the receiver. A message occupies a contiguous
block of subchannels (anchored at subchannel 0) in one uniformly random
slot; a receiver transmitting in the same slot hears nothing in it
(half-duplex). Table mode swaps the parametric reception curve for a
bilinearly interpolated (distance x CBR) grid loaded from file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ChannelTableError(ValueError):
    """Malformed reception-probability table."""


@dataclass(frozen=True)
class ResourceGrid:
    slots_per_window: int = 100
    subchannels_per_slot: int = 4
    subchannel_capacity_bytes: int = 300
    header_bytes: int = 100
    variable_bytes: int = 52

    @property
    def resources_per_window(self) -> int:
        return self.slots_per_window * self.subchannels_per_slot

    @classmethod
    def from_config(cls, cfg) -> "ResourceGrid":
        return cls(cfg.slots_per_window, cfg.subchannels_per_slot,
                   cfg.subchannel_capacity_bytes, cfg.header_bytes, cfg.variable_bytes)


@dataclass
class DeliveryOutcome:
    message_id: int
    receiver_id: int
    slot: int
    received: bool
    sensed: bool


def message_resource_cost(n_variables: int, grid: ResourceGrid) -> int:
    """Subchannels occupied by a message carrying n variables."""
    size = grid.header_bytes + grid.variable_bytes * n_variables
    need = max(1, math.ceil(size / grid.subchannel_capacity_bytes))
    return min(need, grid.subchannels_per_slot)


class ReceptionTable:
    """(distance x CBR) reception grid with bilinear interpolation."""

    def __init__(self, distances: np.ndarray, cbrs: np.ndarray, values: np.ndarray):
        self.distances = np.asarray(distances, dtype=np.float64)
        self.cbrs = np.asarray(cbrs, dtype=np.float64)
        self.values = np.asarray(values, dtype=np.float64)
        self._validate()

    def _validate(self):
        d, c, v = self.distances, self.cbrs, self.values
        if d.ndim != 1 or c.ndim != 1 or v.shape != (len(d), len(c)):
            raise ChannelTableError("table shape mismatch")
        if len(d) < 2 or len(c) < 1:
            raise ChannelTableError("table needs >= 2 distance rows and >= 1 CBR column")
        if np.any(np.diff(d) <= 0):
            raise ChannelTableError("distance breakpoints must be strictly increasing")
        if len(c) > 1 and np.any(np.diff(c) <= 0):
            raise ChannelTableError("CBR breakpoints must be strictly increasing")
        if np.any((v < 0) | (v > 1)):
            raise ChannelTableError("probabilities must lie in [0, 1]")
        if np.any(np.diff(v, axis=0) > 1e-12):
            raise ChannelTableError("probabilities must be non-increasing in distance")
        if v.shape[1] > 1 and np.any(np.diff(v, axis=1) > 1e-12):
            raise ChannelTableError("probabilities must be non-increasing in CBR")

    @classmethod
    def load(cls, path) -> "ReceptionTable":
        rows = []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append([float(x) for x in line.replace(",", " ").split()])
        if len(rows) < 3:
            raise ChannelTableError("table file needs a CBR header row and >= 2 data rows")
        cbrs = np.asarray(rows[0])
        data = np.asarray(rows[1:])
        if data.shape[1] != len(cbrs) + 1:
            raise ChannelTableError("each data row must be: distance followed by one "
                                    "probability per CBR breakpoint")
        return cls(data[:, 0], cbrs, data[:, 1:])

    def lookup(self, d, cbr):
        """Bilinear interpolation, clamped to the grid's edge values."""
        d = np.asarray(d, dtype=np.float64)
        cbr = np.asarray(cbr, dtype=np.float64)
        dq = np.clip(d, self.distances[0], self.distances[-1])
        i1 = np.clip(np.searchsorted(self.distances, dq, side="right"), 1, len(self.distances) - 1)
        i0 = i1 - 1
        span = self.distances[i1] - self.distances[i0]
        wd = (dq - self.distances[i0]) / span
        if len(self.cbrs) == 1:
            v0 = self.values[i0, 0]
            v1 = self.values[i1, 0]
        else:
            cq = np.clip(cbr, self.cbrs[0], self.cbrs[-1])
            j1 = np.clip(np.searchsorted(self.cbrs, cq, side="right"), 1, len(self.cbrs) - 1)
            j0 = j1 - 1
            wc = (cq - self.cbrs[j0]) / (self.cbrs[j1] - self.cbrs[j0])
            v0 = self.values[i0, j0] * (1 - wc) + self.values[i0, j1] * wc
            v1 = self.values[i1, j0] * (1 - wc) + self.values[i1, j1] * wc
        out = np.clip(v0 * (1 - wd) + v1 * wd, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out


class Channel:
    """Link-probability model plus the perfect-channel override."""

    def __init__(self, cfg, table: ReceptionTable | None = None):
        self.cfg = cfg
        self.perfect = cfg.perfect_channel
        self.half_duplex = cfg.half_duplex and not self.perfect
        if cfg.channel_mode == "table" and table is None:
            table = ReceptionTable.load(cfg.channel_table_path)
        self.table = table if cfg.channel_mode == "table" else None
        if self.table is not None:
            self._check_sensing_dominates()

    def _logistic(self, d, midpoint, slope):
        d = np.asarray(d, dtype=np.float64)
        out = 1.0 / (1.0 + np.exp(np.clip(slope * (d - midpoint), -700.0, 700.0)))
        return out

    def reception_probability(self, d, cbr):
        if self.perfect:
            out = np.ones_like(np.asarray(d, dtype=np.float64))
            return float(out) if out.ndim == 0 else out
        if self.table is not None:
            return self.table.lookup(d, cbr)
        cfg = self.cfg
        base = self._logistic(d, cfg.rx_midpoint_m, cfg.rx_slope_per_m)
        out = base * (1.0 - cfg.interference_gamma * np.asarray(cbr, dtype=np.float64))
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def sensing_probability(self, d):
        if self.perfect:
            out = np.ones_like(np.asarray(d, dtype=np.float64))
            return float(out) if out.ndim == 0 else out
        cfg = self.cfg
        out = self._logistic(d, cfg.sense_midpoint_m, cfg.sense_slope_per_m)
        return float(out) if out.ndim == 0 else out

    def _check_sensing_dominates(self):
        d = self.table.distances
        best_rx = self.table.values[:, 0]  # lowest CBR column is the largest
        sense = np.asarray(self.sensing_probability(d))
        if np.any(best_rx > sense + 1e-12):
            raise ChannelTableError("sensing probability must dominate the reception "
                                    "table at every distance")


def simulate_delivery(channel: Channel, dist_vv: np.ndarray, transmit: np.ndarray,
                      slots: np.ndarray, cbr_rx: np.ndarray,
                      u_sense: np.ndarray, u_recv: np.ndarray):
    """Vectorized epoch delivery.

    Args:
      dist_vv: (N, N) transmitter-receiver distances.
      transmit: (N,) bool, which vehicles actually transmit this epoch.
      slots: (N,) slot index per vehicle (used only where transmit).
      cbr_rx: (N,) per-receiver CBR from the previous window.
      u_sense / u_recv: (N, N) uniforms keyed (channel, epoch), position
        (tx, rx); only entries for transmitting rows are consumed.

    Returns (sensed, received): (N, N) bool matrices; rows of silent
    vehicles and the diagonal are all False.
    """
    n = dist_vv.shape[0]
    p_sense = np.asarray(channel.sensing_probability(dist_vv))
    if p_sense.ndim == 0:
        p_sense = np.full_like(dist_vv, float(p_sense))
    p_recv = np.asarray(channel.reception_probability(dist_vv, cbr_rx[None, :]))
    if p_recv.ndim == 0:
        p_recv = np.full_like(dist_vv, float(p_recv))
    p_recv = np.minimum(p_recv, p_sense)

    sensed = u_sense < p_sense
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(p_sense > 0, p_recv / p_sense, 0.0)
    received = sensed & (u_recv < cond)

    sensed &= transmit[:, None]
    received &= transmit[:, None]
    if channel.half_duplex:
        same_slot = transmit[:, None] & transmit[None, :] & (slots[:, None] == slots[None, :])
        sensed &= ~same_slot
        received &= ~same_slot
    np.fill_diagonal(sensed, False)
    np.fill_diagonal(received, False)
    return sensed, received


def update_cbr(sensed: np.ndarray, transmit: np.ndarray, slots: np.ndarray,
               costs: np.ndarray, grid: ResourceGrid) -> np.ndarray:
    """Per-vehicle channel busy ratio over the last window.

    Occupancy is counted per (slot, subchannel) resource once: messages
    anchor at subchannel 0, so overlapping same-slot messages contribute
    the maximum of their widths, not the sum.
    """
    n = sensed.shape[0]
    occ = np.zeros((n, grid.slots_per_window), dtype=np.int64)
    tx_ids = np.nonzero(transmit)[0]
    for s in np.unique(slots[tx_ids]):
        in_slot = tx_ids[slots[tx_ids] == s]
        width = costs[in_slot, None] * sensed[in_slot, :]  # (m, N)
        heard = width.max(axis=0)
        own = np.zeros(n, dtype=np.int64)
        own[in_slot] = costs[in_slot]
        occ[:, s] = np.maximum(heard, own)
    cbr = occ.sum(axis=1) / grid.resources_per_window
    return np.clip(cbr, 0.0, 1.0)
