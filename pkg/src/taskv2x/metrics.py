"""Content-selection error detection, recovery tracking, and run metrics.

A content-selection error (CSE) is one omitted variable on one delivered
message for one intended receiver: the transmitter detected the variable,
the receiver truly needed it and did not have a fresh copy, yet the
message arrived without it because an estimation stage excluded it.
Capacity truncations are counted separately and never raise CSEs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .tx_pipeline import EXCLUDED_IRRELEVANT, EXCLUDED_REDUNDANT, GeneratedMessage

CAUSE_REDUNDANCY = "redundancy"
CAUSE_RELEVANCE = "relevance"

_CAUSE_BY_STAGE = {
    EXCLUDED_REDUNDANT: CAUSE_REDUNDANCY,
    EXCLUDED_IRRELEVANT: CAUSE_RELEVANCE,
}


@dataclass
class CseEvent:
    message_id: int
    transmitter: int
    receiver: int
    variable: int
    cause: str
    epoch: int
    attempt_epoch: Optional[int] = None
    success_epoch: Optional[int] = None


def detect_cse(message: GeneratedMessage, intended: Iterable[int],
               received_by: Iterable[int],
               relevance_lookup: Callable[[int, int], float],
               available: Callable[[int, int], bool],
               message_id: int | None = None) -> list[CseEvent]:
    """Scan one delivered message for omitted-but-needed variables.

    `available(rx, var)` must reflect the receiver's state at delivery:
    its detections up to and including this epoch, decodes up to the
    previous epoch.
    """
    if message_id is None:
        message_id = message.epoch  # caller normally supplies a global id
    content = set(message.content)
    truncated = set(message.decision.truncated)
    delivered = set(received_by) & set(intended)
    events = []
    for rx in sorted(delivered):
        for var in sorted(v for (v, r) in message.decision.stage if r == rx):
            if var in content or var in truncated:
                continue
            outcome = message.decision.stage[(var, rx)]
            if outcome not in _CAUSE_BY_STAGE:
                continue
            if relevance_lookup(rx, var) <= 0 or available(rx, var):
                continue
            events.append(CseEvent(message_id=message_id, transmitter=message.vehicle,
                                   receiver=rx, variable=var,
                                   cause=_CAUSE_BY_STAGE[outcome], epoch=message.epoch))
    return events


def track_recovery(open_events: list[CseEvent], epoch: int,
                   transmissions: Iterable[tuple[int, Iterable[int], Iterable[int]]],
                   received: Callable[[int, int], bool], w_rec: int) -> list[CseEvent]:
    """Advance recovery bookkeeping one epoch; return events still open.

    `transmissions` yields (transmitter, content, intended receivers) for
    every message actually on air this epoch. An attempt is any such
    message carrying the event's variable with the event's receiver
    intended; a success is such a message actually received. Events past
    their window close and are left to the caller's accumulator.
    """
    still_open = []
    tx_list = [(tx, frozenset(content), frozenset(intended))
               for tx, content, intended in transmissions]
    for ev in open_events:
        if epoch > ev.epoch + w_rec:
            continue  # closed; caller already holds a reference
        for tx, content, intended in tx_list:
            if ev.variable in content and ev.receiver in intended:
                if ev.attempt_epoch is None:
                    ev.attempt_epoch = epoch
                if ev.success_epoch is None and received(tx, ev.receiver):
                    ev.success_epoch = epoch
        if ev.success_epoch is None and epoch < ev.epoch + w_rec:
            still_open.append(ev)
    return still_open


@dataclass
class MetricValue:
    numerator: float
    denominator: float
    mean: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]

    @classmethod
    def from_counts(cls, num: float, den: float, sumsq: float | None = None) -> "MetricValue":
        if den <= 0:
            return cls(num, den, None, None, None)
        mean = num / den
        if sumsq is None:
            var = mean * (1.0 - mean)
        else:
            var = max(0.0, sumsq / den - mean * mean)
        half = 1.96 * math.sqrt(var / den)
        return cls(num, den, mean, max(0.0, mean - half), min(1.0, mean + half))


_METRIC_NAMES = ("p_cse", "arr", "p_att", "p_succ", "p_drop", "p_rebroadcast",
                 "useless_rebroadcast_ratio", "redundancy_cse_ratio")


@dataclass
class MetricsReport:
    p_cse: MetricValue
    arr: MetricValue
    p_att: MetricValue
    p_succ: MetricValue
    p_drop: MetricValue
    p_rebroadcast: MetricValue
    useless_rebroadcast_ratio: MetricValue
    redundancy_cse_ratio: MetricValue
    cse_events: int = 0
    redundancy_cse_events: int = 0
    relevance_cse_events: int = 0
    truncated_instances: int = 0
    measurement_epochs: int = 0
    no_samples: bool = False

    def metric(self, name: str) -> MetricValue:
        return getattr(self, name)

    @staticmethod
    def metric_names() -> tuple:
        return _METRIC_NAMES


@dataclass
class RunAccumulator:
    """Additive per-run counters; merging across runs is plain addition."""

    generated: int = 0
    dropped: int = 0
    transmitted: int = 0
    messages_with_cse: int = 0
    cse_redundancy: int = 0
    cse_relevance: int = 0
    closed_events: int = 0       # recovery window fully inside the horizon
    attempted_events: int = 0
    succeeded_events: int = 0
    arr_sum: float = 0.0
    arr_sumsq: float = 0.0
    arr_samples: int = 0
    tx_variable_instances: int = 0
    rebroadcast_instances: int = 0
    rebroadcast_pairs: int = 0   # (rebroadcast instance, intended receiver)
    useless_pairs: int = 0
    truncated_instances: int = 0
    measurement_epochs: int = 0

    def merge(self, other: "RunAccumulator") -> "RunAccumulator":
        out = RunAccumulator()
        for f in self.__dataclass_fields__:
            setattr(out, f, getattr(self, f) + getattr(other, f))
        return out

    @property
    def cse_total(self) -> int:
        return self.cse_redundancy + self.cse_relevance


def finalize(acc: RunAccumulator) -> MetricsReport:
    """Zero-denominator metrics come out absent (mean None), never 0."""
    report = MetricsReport(
        p_cse=MetricValue.from_counts(acc.messages_with_cse, acc.transmitted),
        arr=MetricValue.from_counts(acc.arr_sum, acc.arr_samples, acc.arr_sumsq),
        p_att=MetricValue.from_counts(acc.attempted_events, acc.closed_events),
        p_succ=MetricValue.from_counts(acc.succeeded_events, acc.closed_events),
        p_drop=MetricValue.from_counts(acc.dropped, acc.generated),
        p_rebroadcast=MetricValue.from_counts(acc.rebroadcast_instances,
                                              acc.tx_variable_instances),
        useless_rebroadcast_ratio=MetricValue.from_counts(acc.useless_pairs,
                                                          acc.rebroadcast_pairs),
        redundancy_cse_ratio=MetricValue.from_counts(acc.cse_redundancy, acc.cse_total),
        cse_events=acc.cse_total,
        redundancy_cse_events=acc.cse_redundancy,
        relevance_cse_events=acc.cse_relevance,
        truncated_instances=acc.truncated_instances,
        measurement_epochs=acc.measurement_epochs,
    )
    report.no_samples = acc.measurement_epochs == 0
    return report


def aggregate_metric(reports: list[MetricsReport], name: str) -> MetricValue:
    """Cross-seed mean with a normal-approximation CI clustered by seed."""
    means = [r.metric(name).mean for r in reports if r.metric(name).mean is not None]
    num = sum(r.metric(name).numerator for r in reports)
    den = sum(r.metric(name).denominator for r in reports)
    if not means:
        return MetricValue(num, den, None, None, None)
    n = len(means)
    mean = sum(means) / n
    if n > 1:
        var = sum((m - mean) ** 2 for m in means) / (n - 1)
        half = 1.96 * math.sqrt(var / n)
    else:
        half = 0.0
    return MetricValue(num, den, mean, mean - half, mean + half)
