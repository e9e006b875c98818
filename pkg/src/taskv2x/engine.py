"""Deterministic epoch loop.

Phase order inside one epoch t:
  1. sample local detections for all vehicles (stamps own availability)
  2. generate all messages against the epoch t-1 state snapshot
  3. congestion gating with epoch t-1 CBR and the current CR window
  4. channel delivery with per-receiver epoch t-1 CBR
  5. apply deliveries to availability stores and transmitter ledgers
  6. update CBR and CR trackers
  7. metrics pass (CSE detection, recovery matching, epoch samples)

Every random draw comes from a keyed per-epoch vector (see rng module),
so identical (config, seed) runs are bit-identical and toggling the
relevance-error mechanism cannot perturb detection or channel draws.

Decision logic is a vectorized twin of the scalar tx_pipeline / metrics
operations; tests assert they decide identically. The inner triple scans
run through numba kernels when available, with a numpy fallback kept
draw-for-draw equivalent.
"""

from __future__ import annotations

import hashlib
import json
import os
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as rngmod
from . import _kernels
from .channel import Channel, ResourceGrid
from .congestion import CrLimitTable
from .metrics import (CAUSE_REDUNDANCY, CAUSE_RELEVANCE, CseEvent, MetricsReport,
                      RunAccumulator, finalize)
from .rng import RngStreams, persistent_uniform
from .scenario import World, generate_world
from .tx_pipeline import EXCLUDED_IRRELEVANT, EXCLUDED_REDUNDANT, KEPT

_NEG = -(10 ** 9)
_FAR = 1.0e12


def _ragged_arange(counts: np.ndarray) -> np.ndarray:
    """[0..c0), [0..c1), ... concatenated."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    starts = np.cumsum(counts) - counts
    return np.arange(total, dtype=np.int64) - np.repeat(starts, counts)


class EventStore:
    """Columnar store of content-selection error events.

    Events append in epoch order and close in epoch order (a fixed
    recovery window after creation), so the open set is a sliding slice.
    """

    def __init__(self):
        self.epoch = []
        self.tx = []
        self.rx = []
        self.var = []
        self.cause = []          # stage code: EXCLUDED_REDUNDANT / EXCLUDED_IRRELEVANT
        self.attempt = []        # epoch or -1
        self.success = []        # epoch or -1
        self.first_open = 0

    def append(self, epoch, tx, rx, var, cause):
        n = len(tx)
        self.epoch.extend([epoch] * n)
        self.tx.extend(int(x) for x in tx)
        self.rx.extend(int(x) for x in rx)
        self.var.extend(int(x) for x in var)
        self.cause.extend(int(x) for x in cause)
        self.attempt.extend([-1] * n)
        self.success.extend([-1] * n)

    def __len__(self):
        return len(self.epoch)

    def to_events(self) -> list[CseEvent]:
        out = []
        for i in range(len(self.epoch)):
            cause = CAUSE_REDUNDANCY if self.cause[i] == EXCLUDED_REDUNDANT else CAUSE_RELEVANCE
            out.append(CseEvent(
                message_id=self.epoch[i] * 1_000_000 + self.tx[i],
                transmitter=self.tx[i], receiver=self.rx[i], variable=self.var[i],
                cause=cause, epoch=self.epoch[i],
                attempt_epoch=None if self.attempt[i] < 0 else self.attempt[i],
                success_epoch=None if self.success[i] < 0 else self.success[i]))
        return out


@dataclass
class RunResult:
    report: MetricsReport
    accumulator: RunAccumulator
    events: EventStore
    world: World
    record_lines: Optional[list] = None
    draw_hashes: Optional[dict] = None

    def record_bytes(self) -> bytes:
        if self.record_lines is None:
            return b""
        return ("\n".join(self.record_lines) + "\n").encode()


class Simulator:
    """One run: immutable world plus evolving per-epoch state."""

    def __init__(self, config, seed: int, world: World | None = None,
                 use_kernels: bool | None = None):
        self.cfg = config
        self.seed = int(seed)
        self.streams = RngStreams(seed)
        self.world = world if world is not None else generate_world(config, seed)
        self.channel = Channel(config)
        self.grid = ResourceGrid.from_config(config)
        self.cr_table = CrLimitTable(config.cr_limit_table)
        if use_kernels is None:
            use_kernels = (_kernels.HAVE_NUMBA
                           and not os.environ.get("TASKV2X_NO_NUMBA"))
        self.use_kernels = use_kernels and _kernels.HAVE_NUMBA and not config.persistent_beta
        self._init_static()
        self._init_state()

    # ------------------------------------------------------------------
    def _init_static(self):
        w, cfg = self.world, self.cfg
        self.n = w.n_vehicles
        self.k = w.n_variables
        self.veh_of_cand = np.repeat(np.arange(self.n), np.diff(w.cand_offsets))
        self.p_sense_vv = np.asarray(self.channel.sensing_probability(w.dist_vv),
                                     dtype=np.float64)
        if self.p_sense_vv.ndim == 0:
            self.p_sense_vv = np.full((self.n, self.n), float(self.p_sense_vv))
        if self.channel.perfect:
            self._rx_base = np.ones((self.n, self.n))
        elif self.channel.table is None:
            self._rx_base = 1.0 / (1.0 + np.exp(
                np.clip(cfg.rx_slope_per_m * (w.dist_vv - cfg.rx_midpoint_m), -700.0, 700.0)))
        else:
            self._rx_base = None  # table mode interpolates per epoch
        self.rel_flat = np.concatenate(w.rel_ids) if self.k else np.empty(0, dtype=np.int64)
        rel_counts = np.asarray([len(r) for r in w.rel_ids], dtype=np.int64)
        self.rel_counts = rel_counts
        self.veh_of_rel = np.repeat(np.arange(self.n), rel_counts)
        self.rel_starts = np.cumsum(rel_counts) - rel_counts
        self.w_red = cfg.redundancy_window_epochs
        self.w_avail = cfg.w_avail_epochs
        self.w_rec = cfg.w_rec_epochs
        self.ring_len = self.w_red + 1
        self.max_vars = cfg.max_content_variables

    def _init_state(self):
        n, k = self.n, self.k
        self.recv_prev1 = np.zeros((n, n), dtype=bool)
        self.recv_prev2 = np.zeros((n, n), dtype=bool)
        self.last_decode = np.full((n, n), _NEG, dtype=np.int64)
        self.heard_epoch = np.full((n, k), _NEG, dtype=np.int64)
        self.avail_det = np.full((n, k), _NEG, dtype=np.int64)
        self.avail_dec = np.full((n, k), _NEG, dtype=np.int64)
        self.content_ring = np.zeros((self.ring_len, n, k), dtype=bool)
        self.hear_deque = deque()  # (epoch, sorted keys obs*K+var, reporter ids)
        self.cr_ring = np.zeros((n, self.cfg.cr_window_epochs), dtype=np.int64)
        self.cr_pos = 0
        self.cbr_prev = np.zeros(n, dtype=np.float64)
        self.rb_last_e = np.full(k, _NEG, dtype=np.int64)
        self.rb_last_v = np.full(k, -1, dtype=np.int64)
        self.rb_second_e = np.full(k, _NEG, dtype=np.int64)
        self.events = EventStore()
        self.acc = RunAccumulator()
        self.record_lines = [] if self.cfg.record_run else None
        self.draw_hashes = ({"detection": [], "channel": [], "slots": []}
                            if self.cfg.draw_log else None)
        self._det_mask0 = None
        self._ev_cap = 4096

    # ------------------------------------------------------------------
    def _hash(self, stream: str, arr: np.ndarray):
        if self.draw_hashes is not None:
            self.draw_hashes[stream].append(hashlib.sha256(arr.tobytes()).hexdigest())

    def _detections(self, t: int):
        cfg, w = self.cfg, self.world
        if cfg.persistent_detection:
            if self._det_mask0 is None:
                u = self.streams.uniforms(rngmod.DETECTION, 0, w.total_candidates)
                self._hash("detection", u)
                self._det_mask0 = u < w.cand_p
            mask = self._det_mask0
        else:
            u = self.streams.uniforms(rngmod.DETECTION, t, w.total_candidates)
            self._hash("detection", u)
            mask = u < w.cand_p
        return w.cand_ids[mask].astype(np.int64), self.veh_of_cand[mask].astype(np.int64)

    def _intended_matrix(self):
        if self.cfg.intended_rule_reverse:
            mat = (self.recv_prev1 | self.recv_prev2).copy()
        else:
            mat = (self.recv_prev1 | self.recv_prev2).T.copy()
        np.fill_diagonal(mat, False)
        return mat

    # ------------------------------------------------------------------
    def _soft_p_red(self, n_trip, det_ids, det_tx, det_starts, heard_det, ni,
                    int_cols, int_offsets, block_offsets):
        """p_red per triple from the reporter ledger (soft mode).

        For each heard (tx, var) the reporter closest to each intended
        receiver sets the link probability, evaluated at the
        transmitter's own previous-window CBR.
        """
        w = self.world
        p_red = np.zeros(n_trip, dtype=np.float64)
        q_idx = np.nonzero(heard_det & (ni[det_tx] > 0))[0]
        if q_idx.size == 0 or not self.hear_deque:
            return p_red
        q_tx = det_tx[q_idx]
        q_key = q_tx * self.k + det_ids[q_idx]
        m_q_parts, m_rep_parts = [], []
        for (_, keys_e, reps_e) in self.hear_deque:
            if not len(keys_e):
                continue
            lo = np.searchsorted(keys_e, q_key, side="left")
            hi = np.searchsorted(keys_e, q_key, side="right")
            counts = hi - lo
            if not counts.any():
                continue
            take = np.repeat(lo, counts) + _ragged_arange(counts)
            m_rep_parts.append(reps_e[take])
            m_q_parts.append(np.repeat(np.arange(len(q_idx)), counts))
        if not m_q_parts:
            return p_red
        m_q = np.concatenate(m_q_parts)
        m_rep = np.concatenate(m_rep_parts)
        order = np.argsort(m_q, kind="stable")
        m_q = m_q[order]
        m_rep = m_rep[order]
        m_tx = q_tx[m_q]  # non-decreasing: q ordered by (tx, var), m_q sorted
        tx_unique, tx_starts = np.unique(m_tx, return_index=True)
        bounds = np.append(tx_starts, len(m_tx))
        for bi in range(len(tx_unique)):
            tx = int(tx_unique[bi])
            a, b = int(bounds[bi]), int(bounds[bi + 1])
            ni_tx = int(ni[tx])
            rx_ids = int_cols[int_offsets[tx]:int_offsets[tx] + ni_tx]
            d = w.dist_vv[np.ix_(m_rep[a:b], rx_ids)]
            q_u, q_starts = np.unique(m_q[a:b], return_index=True)
            dmin = np.minimum.reduceat(d, q_starts, axis=0)
            p = np.asarray(self.channel.reception_probability(dmin, float(self.cbr_prev[tx])))
            gi = q_idx[q_u]
            rows = block_offsets[tx] + (gi - det_starts[tx]) * ni_tx
            idx = rows[:, None] + np.arange(ni_tx)[None, :]
            p_red[idx.ravel()] = p.ravel()
        return p_red

    # ------------------------------------------------------------------
    def _stage_numpy(self, n_trip, det_ids, det_tx, ni_per_det, heard_det,
                     int_cols, int_offsets, red_cut, p_red, u_soft, u_beta, TX, VAR, RX):
        cfg, w = self.cfg, self.world
        ld = self.last_decode[TX, RX]
        valid = ld > red_cut
        red1 = np.zeros(n_trip, dtype=bool)
        iv = np.nonzero(valid)[0]
        if iv.size:
            red1[iv] = self.content_ring[ld[iv] % self.ring_len, RX[iv], VAR[iv]]
        if cfg.force_p_red_zero:
            redundant = np.zeros(n_trip, dtype=bool)
        elif cfg.redundancy_mode == "hard":
            redundant = red1 | np.repeat(heard_det, ni_per_det)
        else:
            redundant = red1 | (u_soft < p_red)
        truth = w.relevance[RX, VAR]
        if cfg.beta > 0.0:
            est_rel = truth ^ (u_beta < cfg.beta)
        else:
            est_rel = truth
        outcome = np.where(redundant, EXCLUDED_REDUNDANT,
                           np.where(est_rel, KEPT, EXCLUDED_IRRELEVANT)).astype(np.int8)
        kept_per_det = np.zeros(len(det_ids), dtype=np.int64)
        nz = np.nonzero(ni_per_det > 0)[0]
        if nz.size:
            starts = (np.cumsum(ni_per_det) - ni_per_det)[nz]
            kept_per_det[nz] = np.add.reduceat((outcome == KEPT).astype(np.int64), starts)
        return outcome, kept_per_det

    def _cse_numpy(self, outcome, inc_mat, received, avail_cut, TX, VAR, RX):
        truth = self.world.relevance[RX, VAR]
        avail_pre = ((self.avail_det[RX, VAR] > avail_cut)
                     | (self.avail_dec[RX, VAR] > avail_cut))
        ev = (received[TX, RX] & (outcome != KEPT) & ~inc_mat[TX, VAR]
              & truth & ~avail_pre)
        idx = np.nonzero(ev)[0]
        return TX[idx], RX[idx], VAR[idx], outcome[idx]

    def _cse_kernel(self, det_ids, det_tx, int_cols, int_offsets, ni, outcome,
                    received, inc_mat, avail_cut):
        while True:
            cap = self._ev_cap
            ev_tx = np.empty(cap, dtype=np.int64)
            ev_rx = np.empty(cap, dtype=np.int64)
            ev_var = np.empty(cap, dtype=np.int64)
            ev_cause = np.empty(cap, dtype=np.int8)
            ne = _kernels.cse_scan(det_ids, det_tx, int_cols, int_offsets, ni,
                                   outcome, received, inc_mat, self.world.relevance,
                                   self.avail_det, self.avail_dec, avail_cut,
                                   ev_tx, ev_rx, ev_var, ev_cause)
            if ne <= cap:
                return ev_tx[:ne], ev_rx[:ne], ev_var[:ne], ev_cause[:ne]
            self._ev_cap = 2 * ne

    # ------------------------------------------------------------------
    def run_epoch(self, t: int):
        cfg, w = self.cfg, self.world
        n, k = self.n, self.k
        measuring = t >= cfg.warmup_epochs
        red_cut = (t - 1) - self.w_red
        avail_cut = t - self.w_avail

        # -- phase 1: detections
        det_ids, det_tx = self._detections(t)
        if len(det_ids):
            self.avail_det[det_tx, det_ids] = t
        det_counts = np.bincount(det_tx, minlength=n)
        det_starts = np.concatenate(([0], np.cumsum(det_counts)))

        # -- phase 2: generation against the t-1 snapshot
        intended = self._intended_matrix()
        ni = intended.sum(axis=1)
        int_rows, int_cols = np.nonzero(intended)
        int_counts = np.bincount(int_rows, minlength=n)
        int_offsets = (np.cumsum(int_counts) - int_counts).astype(np.int64)
        ni_per_det = ni[det_tx]
        n_trip = int(ni_per_det.sum())
        block_sizes = det_counts * ni
        block_offsets = (np.cumsum(block_sizes) - block_sizes).astype(np.int64)

        heard_det = (self.heard_epoch[det_tx, det_ids] > red_cut) if len(det_ids) \
            else np.empty(0, dtype=bool)
        soft = cfg.redundancy_mode == "soft" and not cfg.force_p_red_zero
        if n_trip:
            if soft:
                p_red = self._soft_p_red(n_trip, det_ids, det_tx, det_starts, heard_det,
                                         ni, int_cols, int_offsets, block_offsets)
                u_soft = self.streams.uniforms(rngmod.SOFTRED, t, n_trip)
            else:
                p_red = u_soft = np.empty(0)
            if cfg.beta > 0.0:
                if cfg.persistent_beta:
                    TXp = np.repeat(det_tx, ni_per_det)
                    VARp = np.repeat(det_ids, ni_per_det)
                    posp = np.repeat(int_offsets[det_tx], ni_per_det) + _ragged_arange(ni_per_det)
                    u_beta = persistent_uniform(self.seed, rngmod.BETA, TXp,
                                                int_cols[posp], VARp)
                else:
                    u_beta = self.streams.uniforms(rngmod.BETA, t, n_trip)
            else:
                u_beta = np.empty(0)

            if self.use_kernels:
                outcome = np.empty(n_trip, dtype=np.int8)
                kept_per_det = np.zeros(len(det_ids), dtype=np.int64)
                _kernels.stage_select(det_ids, det_tx, int_cols, int_offsets,
                                      ni, w.relevance, self.content_ring,
                                      self.last_decode, self.heard_epoch,
                                      red_cut, self.ring_len, soft,
                                      cfg.force_p_red_zero, p_red, u_soft,
                                      cfg.beta, u_beta, outcome, kept_per_det)
                TX = RX = VAR = None
            else:
                TX = np.repeat(det_tx, ni_per_det)
                VAR = np.repeat(det_ids, ni_per_det)
                pos = np.repeat(int_offsets[det_tx], ni_per_det) + _ragged_arange(ni_per_det)
                RX = int_cols[pos]
                outcome, kept_per_det = self._stage_numpy(
                    n_trip, det_ids, det_tx, ni_per_det, heard_det, int_cols,
                    int_offsets, red_cut, p_red, u_soft, u_beta, TX, VAR, RX)
        else:
            outcome = np.empty(0, dtype=np.int8)
            kept_per_det = np.zeros(len(det_ids), dtype=np.int64)
            TX = RX = VAR = None

        include_det = kept_per_det > 0
        # a variable kept for at least one receiver is never a CSE, even if
        # capacity truncation later drops it (tracked separately)
        kept_any_flat = det_ids[include_det]
        kept_any_tx = det_tx[include_det]

        # capacity truncation: variables needed by more receivers win
        trunc_lists = {}
        sizes = np.bincount(kept_any_tx, minlength=n) if len(det_ids) \
            else np.zeros(n, dtype=np.int64)
        for tx in np.nonzero(sizes > self.max_vars)[0]:
            lo, hi = det_starts[tx], det_starts[tx + 1]
            local = np.nonzero(include_det[lo:hi])[0]
            ids = det_ids[lo:hi][local]
            kc = kept_per_det[lo:hi][local]
            order = np.lexsort((ids, -kc))
            drop = order[self.max_vars:]
            include_det[lo + local[drop]] = False
            trunc_lists[int(tx)] = np.sort(ids[drop])
        content_flat = det_ids[include_det]
        content_tx = det_tx[include_det]
        content_sizes = np.bincount(content_tx, minlength=n)

        # -- phase 3: congestion gating
        generated = (ni > 0) | cfg.transmit_when_no_intended
        size_bytes = cfg.header_bytes + cfg.variable_bytes * content_sizes
        costs = np.clip(np.ceil(size_bytes / cfg.subchannel_capacity_bytes),
                        1, cfg.subchannels_per_slot).astype(np.int64)
        cr_now = self.cr_ring.sum(axis=1) / (self.cr_ring.shape[1]
                                             * self.grid.resources_per_window)
        if cfg.congestion_enabled:
            transmit = generated & ~(cr_now > self.cr_table.limits(self.cbr_prev))
        else:
            transmit = generated.copy()
        dropped = generated & ~transmit

        # -- phase 4: delivery
        slots = self.streams.integers(rngmod.SLOTS, t, n, cfg.slots_per_window)
        self._hash("slots", slots.astype(np.int64))
        ch_u = self.streams.uniforms(rngmod.CHANNEL, t, 2 * n * n)
        self._hash("channel", ch_u)
        u_sense = ch_u[:n * n].reshape(n, n)
        u_recv = ch_u[n * n:].reshape(n, n)
        p_sense = self.p_sense_vv
        if self._rx_base is not None:
            if self.channel.perfect:
                p_recv = self._rx_base
            else:
                p_recv = np.clip(self._rx_base
                                 * (1.0 - cfg.interference_gamma * self.cbr_prev[None, :]),
                                 0.0, 1.0)
        else:
            p_recv = np.asarray(self.channel.reception_probability(
                w.dist_vv, np.broadcast_to(self.cbr_prev[None, :], (n, n))))
        p_recv = np.minimum(p_recv, p_sense)
        sensed = u_sense < p_sense
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(p_sense > 0, p_recv / p_sense, 0.0)
        received = sensed & (u_recv < cond)
        sensed &= transmit[:, None]
        received &= transmit[:, None]
        if self.channel.half_duplex:
            same = transmit[:, None] & transmit[None, :] & (slots[:, None] == slots[None, :])
            sensed &= ~same
            received &= ~same
        np.fill_diagonal(sensed, False)
        np.fill_diagonal(received, False)

        # -- phase 7a: CSE detection (pre-delivery availability)
        ev_tx = ev_rx = ev_var = ev_cause = np.empty(0, dtype=np.int64)
        if measuring and n_trip:
            inc_mat = np.zeros((n, k), dtype=bool)
            if len(kept_any_flat):
                inc_mat[kept_any_tx, kept_any_flat] = True
            if self.use_kernels:
                ev_tx, ev_rx, ev_var, ev_cause = self._cse_kernel(
                    det_ids, det_tx, int_cols, int_offsets, ni, outcome,
                    received, inc_mat, avail_cut)
            else:
                ev_tx, ev_rx, ev_var, ev_cause = self._cse_numpy(
                    outcome, inc_mat, received, avail_cut, TX, VAR, RX)

        # -- phase 7b: recovery attempts for events opened at earlier epochs
        self._process_recovery(t, content_flat, content_tx, transmit, intended, received)
        if len(ev_tx):
            self.events.append(t, ev_tx, ev_rx, ev_var, ev_cause)
            self.acc.messages_with_cse += len(np.unique(ev_tx))
            ncau = np.bincount(ev_cause, minlength=3)
            self.acc.cse_redundancy += int(ncau[EXCLUDED_REDUNDANT])
            self.acc.cse_relevance += int(ncau[EXCLUDED_IRRELEVANT])

        # -- phase 7c: rebroadcast accounting (prior-epoch history only)
        if measuring and len(content_flat):
            rb = (((self.rb_last_v[content_flat] != content_tx)
                   & (self.rb_last_e[content_flat] > avail_cut))
                  | ((self.rb_last_v[content_flat] == content_tx)
                     & (self.rb_second_e[content_flat] > avail_cut)))
            on_air = transmit[content_tx]
            rb &= on_air
            self.acc.tx_variable_instances += int(on_air.sum())
            self.acc.rebroadcast_instances += int(rb.sum())
            rb_idx = np.nonzero(rb)[0]
            if rb_idx.size:
                rb_tx = content_tx[rb_idx]
                rb_var = content_flat[rb_idx]
                counts = ni[rb_tx]
                pos2 = np.repeat(int_offsets[rb_tx], counts) + _ragged_arange(counts)
                prx = int_cols[pos2]
                pvar = np.repeat(rb_var, counts)
                pav = ((self.avail_det[prx, pvar] > avail_cut)
                       | (self.avail_dec[prx, pvar] > avail_cut))
                self.acc.rebroadcast_pairs += int(counts.sum())
                self.acc.useless_pairs += int(pav.sum())

        if measuring:
            self.acc.generated += int(generated.sum())
            self.acc.dropped += int(dropped.sum())
            self.acc.transmitted += int(transmit.sum())
            self.acc.truncated_instances += sum(
                len(v) for tx, v in trunc_lists.items() if transmit[tx])
            self.acc.measurement_epochs += 1

        # -- phase 5: apply deliveries to stores
        pairs_a, pairs_o = np.nonzero(received)
        if pairs_a.size:
            c_counts = content_sizes[pairs_a]
            starts_c = np.cumsum(content_sizes) - content_sizes
            take = np.repeat(starts_c[pairs_a], c_counts) + _ragged_arange(c_counts)
            h_var = content_flat[take]
            h_obs = np.repeat(pairs_o, c_counts)
            self.avail_dec[h_obs, h_var] = t
            self.heard_epoch[h_obs, h_var] = t
            if soft:
                h_rep = np.repeat(pairs_a, c_counts)
                near = w.dist_vk[h_obs, h_var] <= cfg.detection_cutoff_m
                keys = h_obs[near] * k + h_var[near]
                order = np.argsort(keys, kind="stable")
                self.hear_deque.append((t, keys[order], h_rep[near][order]))
            self.last_decode[pairs_o, pairs_a] = t
        elif soft:
            self.hear_deque.append((t, np.empty(0, dtype=np.int64),
                                    np.empty(0, dtype=np.int64)))
        while self.hear_deque and self.hear_deque[0][0] <= red_cut + 1:
            self.hear_deque.popleft()

        # the content ring reflects what went on air
        ring_slot = t % self.ring_len
        self.content_ring[ring_slot, :, :] = False
        if len(content_flat):
            ok = transmit[content_tx]
            self.content_ring[ring_slot, content_tx[ok], content_flat[ok]] = True
            self._update_rb(content_flat[ok], content_tx[ok], t)

        # -- phase 6: CBR / CR
        occ = np.zeros((n, cfg.slots_per_window), dtype=np.int64)
        tx_ids = np.nonzero(transmit)[0]
        for s in np.unique(slots[tx_ids]):
            in_slot = tx_ids[slots[tx_ids] == s]
            heard_w = (costs[in_slot, None] * sensed[in_slot, :]).max(axis=0)
            own = np.zeros(n, dtype=np.int64)
            own[in_slot] = costs[in_slot]
            occ[:, s] = np.maximum(heard_w, own)
        cbr = np.clip(occ.sum(axis=1) / self.grid.resources_per_window, 0.0, 1.0)
        self.cr_ring[:, self.cr_pos] = np.where(transmit, costs, 0)
        self.cr_pos = (self.cr_pos + 1) % self.cr_ring.shape[1]

        # -- phase 7d: ARR with post-delivery state
        if measuring and len(self.rel_flat):
            av = ((self.avail_det[self.veh_of_rel, self.rel_flat] > avail_cut)
                  | (self.avail_dec[self.veh_of_rel, self.rel_flat] > avail_cut))
            nzv = np.nonzero(self.rel_counts > 0)[0]
            have = np.add.reduceat(av.astype(np.int64), self.rel_starts[nzv])
            ratios = have / self.rel_counts[nzv]
            self.acc.arr_sum += float(ratios.sum())
            self.acc.arr_sumsq += float((ratios ** 2).sum())
            self.acc.arr_samples += int(nzv.size)

        if self.record_lines is not None:
            self._record_epoch(t, transmit, dropped, slots, costs, content_flat,
                               content_tx, trunc_lists, received,
                               ev_tx, ev_rx, ev_var, ev_cause)

        self.recv_prev2 = self.recv_prev1
        self.recv_prev1 = received
        self.cbr_prev = cbr

    # ------------------------------------------------------------------
    def _update_rb(self, vars_tx: np.ndarray, tx_of: np.ndarray, t: int):
        """Track, per variable, the two most recent distinct transmitters."""
        if not len(vars_tx):
            return
        order = np.lexsort((tx_of, vars_tx))
        v_sorted = vars_tx[order]
        t_sorted = tx_of[order]
        uniq, starts, counts = np.unique(v_sorted, return_index=True, return_counts=True)
        last_tx = t_sorted[starts + counts - 1]
        multi = counts >= 2
        old_lv = self.rb_last_v[uniq]
        old_le = self.rb_last_e[uniq]
        same = (~multi) & (old_lv == last_tx)
        self.rb_second_e[uniq] = np.where(multi, t,
                                          np.where(same, self.rb_second_e[uniq], old_le))
        self.rb_last_e[uniq] = t
        self.rb_last_v[uniq] = last_tx

    def _process_recovery(self, t, content_flat, content_tx, transmit, intended, received):
        ev = self.events
        lo, hi = ev.first_open, len(ev.epoch)
        if lo < hi:
            ev_epoch = np.asarray(ev.epoch[lo:hi])
            active = np.nonzero((ev_epoch < t) & (t <= ev_epoch + self.w_rec))[0]
            if active.size and len(content_flat):
                on = transmit[content_tx]
                c_var = content_flat[on]
                c_tx = content_tx[on]
                order = np.argsort(c_var, kind="stable")
                c_var = c_var[order]
                c_tx = c_tx[order]
                ev_var = np.asarray(ev.var[lo:hi])[active]
                ev_rx = np.asarray(ev.rx[lo:hi])[active]
                lo_i = np.searchsorted(c_var, ev_var, side="left")
                hi_i = np.searchsorted(c_var, ev_var, side="right")
                counts = hi_i - lo_i
                sel = np.nonzero(counts > 0)[0]
                if sel.size:
                    take = np.repeat(lo_i[sel], counts[sel]) + _ragged_arange(counts[sel])
                    p_tx = c_tx[take]
                    p_ev = np.repeat(sel, counts[sel])
                    p_rx = ev_rx[p_ev]
                    ok_int = intended[p_tx, p_rx]
                    ok_rcv = ok_int & received[p_tx, p_rx]
                    att = np.zeros(len(active), dtype=bool)
                    suc = np.zeros(len(active), dtype=bool)
                    np.logical_or.at(att, p_ev, ok_int)
                    np.logical_or.at(suc, p_ev, ok_rcv)
                    for j in np.nonzero(att)[0]:
                        gi = lo + int(active[j])
                        if ev.attempt[gi] < 0:
                            ev.attempt[gi] = t
                    for j in np.nonzero(suc)[0]:
                        gi = lo + int(active[j])
                        if ev.success[gi] < 0:
                            ev.success[gi] = t
                            if self.record_lines is not None:
                                self._rec({"ev": "rec", "t": t, "eidx": gi})
        self._close_events(t)

    def _close_events(self, upto_epoch: int):
        ev = self.events
        while ev.first_open < len(ev.epoch) and \
                ev.epoch[ev.first_open] + self.w_rec <= upto_epoch:
            i = ev.first_open
            self.acc.closed_events += 1
            self.acc.attempted_events += int(ev.attempt[i] >= 0)
            self.acc.succeeded_events += int(ev.success[i] >= 0)
            ev.first_open += 1

    # ------------------------------------------------------------------
    def _rec(self, obj: dict):
        self.record_lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))

    def _record_epoch(self, t, transmit, dropped, slots, costs, content_flat, content_tx,
                      trunc_lists, received, ev_tx, ev_rx, ev_var, ev_cause):
        starts = np.cumsum(np.bincount(content_tx, minlength=self.n))
        for v in range(self.n):
            if dropped[v]:
                self._rec({"ev": "drop", "t": t, "tx": v})
                continue
            if not transmit[v]:
                continue
            lo = int(starts[v - 1]) if v else 0
            content = [int(x) for x in content_flat[lo:starts[v]]]
            self._rec({"ev": "msg", "t": t, "tx": v, "content": content,
                       "trunc": [int(x) for x in trunc_lists.get(v, [])],
                       "slot": int(slots[v]), "cost": int(costs[v])})
        for a, o in zip(*np.nonzero(received)):
            self._rec({"ev": "rx", "t": t, "tx": int(a), "rx": int(o)})
        for i in range(len(ev_tx)):
            cause = "red" if ev_cause[i] == EXCLUDED_REDUNDANT else "rel"
            self._rec({"ev": "cse", "t": t, "tx": int(ev_tx[i]), "rx": int(ev_rx[i]),
                       "var": int(ev_var[i]), "cause": cause})

    # ------------------------------------------------------------------
    def run(self) -> RunResult:
        for t in range(self.cfg.horizon_epochs):
            self.run_epoch(t)
        # close events whose full window fit inside the horizon; later ones
        # have incomplete windows and stay out of the attempt/success pools
        self._close_events(self.cfg.horizon_epochs - 1)
        report = finalize(self.acc)
        return RunResult(report=report, accumulator=self.acc, events=self.events,
                         world=self.world, record_lines=self.record_lines,
                         draw_hashes=self.draw_hashes)


def run_simulation(config, seed: int, world: World | None = None) -> RunResult:
    """Generate (or accept) a world and run the full horizon."""
    return Simulator(config, seed, world=world).run()
