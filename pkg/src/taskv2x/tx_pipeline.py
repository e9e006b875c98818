"""Per-vehicle transmitter pipeline.

Decision order per candidate variable and intended receiver: redundancy
estimation first (and it short-circuits the rest), then relevance
estimation with error probability beta, then content selection keeps a
variable if at least one intended receiver still wants it. The engine
runs a vectorized twin of these functions; this module is the readable
single-message surface used by unit tests and the reference simulator,
and its decisions define the semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

# Stage outcomes recorded per (candidate variable, intended receiver).
KEPT = 0
EXCLUDED_REDUNDANT = 1
EXCLUDED_IRRELEVANT = 2

HARD = "hard"
SOFT = "soft"


@dataclass
class TxState:
    """What one transmitter has learned from the channel.

    decode_history: neighbor id -> set of epochs whose message from that
      neighbor this vehicle decoded.
    heard: variable id -> {reporter id: last epoch a decoded message from
      that reporter carried the variable}.
    last_content: neighbor id -> (epoch, frozenset of variable ids) of the
      newest decoded message from that neighbor.
    decoded_mine: neighbor id -> set of epochs of my messages that
      neighbor decoded (only populated under the reversed intended rule).
    """

    decode_history: dict = field(default_factory=dict)
    heard: dict = field(default_factory=dict)
    last_content: dict = field(default_factory=dict)
    decoded_mine: dict = field(default_factory=dict)

    def note_decoded(self, neighbor: int, epoch: int, content: Iterable[int]):
        self.decode_history.setdefault(neighbor, set()).add(epoch)
        content = frozenset(content)
        prev = self.last_content.get(neighbor)
        if prev is None or epoch >= prev[0]:
            self.last_content[neighbor] = (epoch, content)
        for var in content:
            self.heard.setdefault(var, {})[neighbor] = epoch

    def note_mine_decoded(self, neighbor: int, epoch: int):
        self.decoded_mine.setdefault(neighbor, set()).add(epoch)

    def prune(self, now: int, max_window: int):
        """Drop entries older than the longest lookback window."""
        cutoff = now - max_window
        for hist in (self.decode_history, self.decoded_mine):
            for neighbor in list(hist):
                hist[neighbor] = {e for e in hist[neighbor] if e > cutoff}
                if not hist[neighbor]:
                    del hist[neighbor]
        for var in list(self.heard):
            reporters = {r: e for r, e in self.heard[var].items() if e > cutoff}
            if reporters:
                self.heard[var] = reporters
            else:
                del self.heard[var]
        for neighbor in list(self.last_content):
            if self.last_content[neighbor][0] <= cutoff:
                del self.last_content[neighbor]


@dataclass
class ContentDecision:
    """Stage outcome per (candidate, intended receiver) plus the final set."""

    stage: dict  # (variable id, receiver id) -> KEPT / EXCLUDED_*
    included: tuple
    truncated: tuple

    def outcome(self, variable: int, receiver: int) -> int:
        return self.stage[(variable, receiver)]


@dataclass
class GeneratedMessage:
    vehicle: int
    epoch: int
    content: tuple
    decision: ContentDecision
    size_bytes: int


def estimate_intended_receivers(tx_state: TxState, current_epoch: int,
                                reverse: bool = False) -> set:
    """Receivers to account for: those heard from in the last two epochs.

    A neighbor is intended when this transmitter decoded at least one of
    the neighbor's messages generated at current_epoch-1 or -2. With
    reverse=True the direction flips: the neighbor decoded one of ours.
    """
    window = {current_epoch - 1, current_epoch - 2}
    history = tx_state.decoded_mine if reverse else tx_state.decode_history
    return {r for r, epochs in history.items() if epochs & window}


def estimate_redundancy(tx_state: TxState, variable: int, receiver: int,
                        mode: str, link_prob: Callable[[int, int], float],
                        u: float, now: int, window: int,
                        force_zero: bool = False) -> bool:
    """Does the transmitter believe the receiver already holds the variable?

    Entries older than `window` epochs (relative to `now`, exclusive of
    the current epoch) are ignored. `u` is the uniform draw consumed by
    the soft-mode Bernoulli; p = 1 and p = 0 are exact regardless of u.
    """
    if force_zero:
        return False
    cutoff = now - 1 - window
    last = tx_state.last_content.get(receiver)
    if last is not None and last[0] > cutoff and variable in last[1]:
        return True  # receiver itself announced it: p_red = 1
    reporters = [r for r, e in tx_state.heard.get(variable, {}).items() if e > cutoff]
    if not reporters:
        return False
    if mode == HARD:
        return True
    p = max(link_prob(r, receiver) for r in reporters)
    return u < p


def estimate_relevance(true_weight: float, beta: float, u: float) -> bool:
    """True weight with probability 1-beta, flipped with probability beta."""
    flip = u < beta
    return (true_weight > 0) != flip


def select_content(detections: Iterable[int], intended_receivers: Iterable[int],
                   stage: dict, max_variables: int) -> ContentDecision:
    """Union of per-receiver keeps, truncated to the grid capacity.

    When the kept set exceeds capacity, variables with more intended
    receivers needing them win; ties break toward smaller variable id.
    """
    detections = sorted(detections)
    receivers = sorted(intended_receivers)
    kept_counts = {}
    for var in detections:
        n = sum(1 for rx in receivers if stage[(var, rx)] == KEPT)
        if n > 0:
            kept_counts[var] = n
    kept = sorted(kept_counts)
    if len(kept) > max_variables:
        order = sorted(kept, key=lambda v: (-kept_counts[v], v))
        included = tuple(sorted(order[:max_variables]))
        truncated = tuple(sorted(order[max_variables:]))
    else:
        included = tuple(kept)
        truncated = ()
    return ContentDecision(stage=stage, included=included, truncated=truncated)


def generate_message(vehicle: int, epoch: int, detections: Iterable[int],
                     tx_state: TxState, cfg, relevance_lookup: Callable[[int, int], float],
                     link_prob: Callable[[int, int], float],
                     u_red: Callable[[int, int], float],
                     u_beta: Callable[[int, int], float]) -> GeneratedMessage:
    """Run the full pipeline for one vehicle at one epoch.

    relevance_lookup(receiver, variable) gives the ground-truth weight;
    u_red / u_beta supply the keyed uniforms per (variable, receiver).
    Candidates are exactly the locally detected variables.
    """
    intended = estimate_intended_receivers(tx_state, epoch, cfg.intended_rule_reverse)
    window = cfg.redundancy_window_epochs
    stage = {}
    for var in sorted(detections):
        for rx in sorted(intended):
            redundant = estimate_redundancy(
                tx_state, var, rx, cfg.redundancy_mode, link_prob,
                u_red(var, rx), epoch, window, cfg.force_p_red_zero)
            if redundant:
                stage[(var, rx)] = EXCLUDED_REDUNDANT
                continue
            relevant = estimate_relevance(relevance_lookup(rx, var), cfg.beta, u_beta(var, rx))
            stage[(var, rx)] = KEPT if relevant else EXCLUDED_IRRELEVANT
    decision = select_content(detections, intended, stage, cfg.max_content_variables)
    size = cfg.header_bytes + cfg.variable_bytes * len(decision.included)
    return GeneratedMessage(vehicle=vehicle, epoch=epoch, content=decision.included,
                            decision=decision, size_bytes=size)
