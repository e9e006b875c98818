"""Access-layer congestion control.

Each vehicle tracks the network resources its own transmissions occupied
over a sliding window (10 epochs = 1000 ms by default). A generated
message is dropped when that channel occupancy ratio exceeds the limit
for the current network load; dropped messages consume no resources and
are invisible to every receiver.
"""

from __future__ import annotations

import numpy as np

from .channel import ResourceGrid
from .config import validate_cr_limit_table


class CrTracker:
    """Ring of own occupied subchannel-slots for the last window."""

    def __init__(self, window_epochs: int = 10):
        self.window = int(window_epochs)
        self._ring = [0] * self.window
        self._pos = 0

    def record_epoch(self, occupied_subchannels: int):
        self._ring[self._pos] = int(occupied_subchannels)
        self._pos = (self._pos + 1) % self.window

    @property
    def occupied_total(self) -> int:
        return sum(self._ring)


def measure_cr(tracker: CrTracker, grid: ResourceGrid) -> float:
    """Own occupancy over the whole window; missing epochs count as idle."""
    total = tracker.window * grid.resources_per_window
    return tracker.occupied_total / total


class CrLimitTable:
    """Ordered (cbr upper bound, cr limit) steps; last bound is 1.0."""

    def __init__(self, rows):
        rows = tuple((float(b), float(l)) for b, l in rows)
        validate_cr_limit_table(rows)
        self.rows = rows
        self._bounds = np.asarray([b for b, _ in rows])
        self._limits = np.asarray([l for _, l in rows])

    def limit(self, cbr: float) -> float:
        return float(self._limits[int(np.searchsorted(self._bounds, cbr, side="left"))])

    def limits(self, cbr: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._bounds, np.asarray(cbr), side="left")
        idx = np.clip(idx, 0, len(self._limits) - 1)
        return self._limits[idx]


def cr_limit(cbr: float, table: CrLimitTable) -> float:
    return table.limit(cbr)


def gate_message(cr: float, cbr: float, table: CrLimitTable) -> bool:
    """True = transmit, False = drop. Boundary transmits (strict compare)."""
    return not (cr > table.limit(cbr))


def gate_messages(cr: np.ndarray, cbr: np.ndarray, table: CrLimitTable) -> np.ndarray:
    """Vectorized gate: bool mask of messages that go on air."""
    return ~(np.asarray(cr) > table.limits(cbr))
