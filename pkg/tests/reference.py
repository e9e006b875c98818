"""Scalar reference simulator for equivalence testing.

Drives the per-message scalar operations (tx_pipeline, metrics, channel,
congestion) through the same keyed draw vectors as the production engine
and emits the identical run-record line format. Any divergence between
this and engine.Simulator on a small world is a bug in one of them.
"""

from __future__ import annotations

import json

import numpy as np

from taskv2x import rng as rngmod
from taskv2x.channel import Channel, ResourceGrid, update_cbr
from taskv2x.congestion import CrLimitTable
from taskv2x.metrics import RunAccumulator, detect_cse, finalize
from taskv2x.rng import RngStreams
from taskv2x.tx_pipeline import (EXCLUDED_IRRELEVANT, EXCLUDED_REDUNDANT, KEPT,
                                 TxState, estimate_intended_receivers,
                                 generate_message)


def _rec(lines, obj):
    lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))


def run_reference(cfg, seed, world):
    streams = RngStreams(seed)
    channel = Channel(cfg)
    grid = ResourceGrid.from_config(cfg)
    cr_table = CrLimitTable(cfg.cr_limit_table)
    n, k = world.n_vehicles, world.n_variables
    w_red = cfg.redundancy_window_epochs
    w_avail = cfg.w_avail_epochs
    w_rec = cfg.w_rec_epochs
    max_hist = max(w_red, 2)

    states = [TxState() for _ in range(n)]
    avail_det = {}
    avail_dec = {}
    cr_rings = np.zeros((n, cfg.cr_window_epochs), dtype=np.int64)
    cr_pos = 0
    cbr_prev = np.zeros(n)
    tx_history = {}  # var -> list of (epoch, vehicle) on-air transmissions
    events = []      # dicts: epoch, tx, rx, var, cause, attempt, success
    acc = RunAccumulator()
    lines = []

    for t in range(cfg.horizon_epochs):
        measuring = t >= cfg.warmup_epochs
        avail_cut = t - w_avail

        # phase 1: detections
        u_det = streams.uniforms(rngmod.DETECTION, t, world.total_candidates)
        detections = []
        for v in range(n):
            lo, hi = world.cand_offsets[v], world.cand_offsets[v + 1]
            det = sorted(int(x) for x in world.cand_ids[lo:hi][u_det[lo:hi] < world.cand_p[lo:hi]])
            detections.append(det)
            for var in det:
                avail_det[(v, var)] = t

        # phase 2: generation (draw vectors share the engine's triple layout)
        intended = [sorted(estimate_intended_receivers(states[v], t, cfg.intended_rule_reverse))
                    for v in range(n)]
        ni = [len(x) for x in intended]
        block_offsets = np.cumsum([0] + [len(detections[v]) * ni[v] for v in range(n)])
        n_trip = int(block_offsets[-1])
        soft = cfg.redundancy_mode == "soft" and not cfg.force_p_red_zero
        u_soft = streams.uniforms(rngmod.SOFTRED, t, n_trip) if soft else None
        u_beta = streams.uniforms(rngmod.BETA, t, n_trip) if cfg.beta > 0 else None

        messages = []
        for v in range(n):
            det, rxs = detections[v], intended[v]
            ni_v = len(rxs)

            def pos(var, rx, v=v, det=det, rxs=rxs, ni_v=ni_v):
                return int(block_offsets[v]) + det.index(var) * ni_v + rxs.index(rx)

            def u_red(var, rx):
                return u_soft[pos(var, rx)] if u_soft is not None else 0.0

            def u_b(var, rx):
                return u_beta[pos(var, rx)] if u_beta is not None else 1.0

            def link_prob(reporter, rx, v=v):
                return float(channel.reception_probability(
                    world.dist_vv[reporter, rx], float(cbr_prev[v])))

            msg = generate_message(v, t, det, states[v], cfg,
                                   lambda rx, var: float(world.relevance[rx, var]),
                                   link_prob, u_red, u_b)
            messages.append(msg)

        # phase 3: gating
        generated = [ni[v] > 0 or cfg.transmit_when_no_intended for v in range(n)]
        costs = np.asarray([max(1, min(grid.subchannels_per_slot,
                                       int(np.ceil((cfg.header_bytes
                                                    + cfg.variable_bytes * len(m.content))
                                                   / cfg.subchannel_capacity_bytes))))
                            for m in messages], dtype=np.int64)
        cr_now = cr_rings.sum(axis=1) / (cfg.cr_window_epochs * grid.resources_per_window)
        transmit = np.zeros(n, dtype=bool)
        for v in range(n):
            if not generated[v]:
                continue
            if cfg.congestion_enabled and cr_now[v] > cr_table.limit(float(cbr_prev[v])):
                continue
            transmit[v] = True
        dropped = np.asarray(generated) & ~transmit

        # phase 4: delivery
        slots = streams.integers(rngmod.SLOTS, t, n, cfg.slots_per_window)
        ch_u = streams.uniforms(rngmod.CHANNEL, t, 2 * n * n)
        u_sense = ch_u[:n * n].reshape(n, n)
        u_recv = ch_u[n * n:].reshape(n, n)
        sensed = np.zeros((n, n), dtype=bool)
        received = np.zeros((n, n), dtype=bool)
        for a in range(n):
            if not transmit[a]:
                continue
            for o in range(n):
                if o == a:
                    continue
                if channel.half_duplex and transmit[o] and slots[o] == slots[a]:
                    continue
                ps = float(channel.sensing_probability(world.dist_vv[a, o]))
                pr = min(float(channel.reception_probability(world.dist_vv[a, o],
                                                             float(cbr_prev[o]))), ps)
                if u_sense[a, o] < ps:
                    sensed[a, o] = True
                    cond = pr / ps if ps > 0 else 0.0
                    if u_recv[a, o] < cond:
                        received[a, o] = True

        # phase 7a: CSE detection with pre-delivery availability
        def available(rx, var):
            return (avail_det.get((rx, var), -10**9) > avail_cut
                    or avail_dec.get((rx, var), -10**9) > avail_cut)

        new_events = []
        if measuring:
            for v in range(n):
                if not transmit[v]:
                    continue
                got = [o for o in range(n) if received[v, o]]
                evs = detect_cse(messages[v], intended[v], got,
                                 lambda rx, var: float(world.relevance[rx, var]),
                                 available, message_id=t * 1_000_000 + v)
                evs.sort(key=lambda e: (e.transmitter, e.variable, e.receiver))
                new_events.extend(evs)

        # phase 7b: recovery for previously opened events
        for idx, ev in enumerate(events):
            if not (ev["epoch"] < t <= ev["epoch"] + w_rec):
                continue
            for v in range(n):
                if not transmit[v] or ev["var"] not in messages[v].content:
                    continue
                if ev["rx"] not in intended[v]:
                    continue
                if ev["attempt"] < 0:
                    ev["attempt"] = t
                if ev["success"] < 0 and received[v, ev["rx"]]:
                    ev["success"] = t
                    _rec(lines, {"ev": "rec", "t": t, "eidx": idx})

        for ev in new_events:
            cause = EXCLUDED_REDUNDANT if ev.cause == "redundancy" else EXCLUDED_IRRELEVANT
            events.append({"epoch": t, "tx": ev.transmitter, "rx": ev.receiver,
                           "var": ev.variable, "cause": cause, "attempt": -1, "success": -1})
        if new_events:
            acc.messages_with_cse += len({e.transmitter for e in new_events})
            acc.cse_redundancy += sum(1 for e in new_events if e.cause == "redundancy")
            acc.cse_relevance += sum(1 for e in new_events if e.cause == "relevance")

        # phase 7c: rebroadcast accounting against prior-epoch history
        if measuring:
            for v in range(n):
                if not transmit[v]:
                    continue
                for var in messages[v].content:
                    acc.tx_variable_instances += 1
                    hist = tx_history.get(var, [])
                    if any(e > avail_cut and veh != v for e, veh in hist):
                        acc.rebroadcast_instances += 1
                        for rx in intended[v]:
                            acc.rebroadcast_pairs += 1
                            acc.useless_pairs += int(available(rx, var))

        if measuring:
            acc.generated += sum(generated)
            acc.dropped += int(dropped.sum())
            acc.transmitted += int(transmit.sum())
            acc.truncated_instances += sum(len(m.decision.truncated) for m in messages
                                           if transmit[m.vehicle])
            acc.measurement_epochs += 1

        # phase 5: apply deliveries
        for a in range(n):
            for o in range(n):
                if received[a, o]:
                    states[o].note_decoded(a, t, messages[a].content)
                    if cfg.intended_rule_reverse:
                        states[a].note_mine_decoded(o, t)
                    for var in messages[a].content:
                        avail_dec[(o, var)] = t
        for v in range(n):
            states[v].prune(t, max_hist)
        for v in range(n):
            if transmit[v]:
                for var in messages[v].content:
                    tx_history.setdefault(var, []).append((t, v))

        # phase 6: CBR / CR
        cbr = update_cbr(sensed, transmit, slots, costs, grid)
        cr_rings[:, cr_pos] = np.where(transmit, costs, 0)
        cr_pos = (cr_pos + 1) % cfg.cr_window_epochs

        # phase 7d: ARR post-delivery
        if measuring:
            for v in range(n):
                rel = world.rel_ids[v]
                if len(rel) == 0:
                    continue
                have = sum(1 for var in rel
                           if avail_det.get((v, int(var)), -10**9) > avail_cut
                           or avail_dec.get((v, int(var)), -10**9) > avail_cut)
                ratio = have / len(rel)
                acc.arr_sum += ratio
                acc.arr_sumsq += ratio * ratio
                acc.arr_samples += 1

        # run-record lines in the engine's exact order
        for v in range(n):
            if dropped[v]:
                _rec(lines, {"ev": "drop", "t": t, "tx": v})
                continue
            if not transmit[v]:
                continue
            m = messages[v]
            _rec(lines, {"ev": "msg", "t": t, "tx": v,
                         "content": [int(x) for x in m.content],
                         "trunc": [int(x) for x in m.decision.truncated],
                         "slot": int(slots[v]), "cost": int(costs[v])})
        for a in range(n):
            for o in range(n):
                if received[a, o]:
                    _rec(lines, {"ev": "rx", "t": t, "tx": a, "rx": o})
        for ev in new_events:
            cause = "red" if ev.cause == "redundancy" else "rel"
            _rec(lines, {"ev": "cse", "t": t, "tx": ev.transmitter, "rx": ev.receiver,
                         "var": ev.variable, "cause": cause})

        cbr_prev = cbr

    # close complete-window events
    last = cfg.horizon_epochs - 1
    for ev in events:
        if ev["epoch"] + w_rec <= last:
            acc.closed_events += 1
            acc.attempted_events += int(ev["attempt"] >= 0)
            acc.succeeded_events += int(ev["success"] >= 0)

    return finalize(acc), acc, lines, events
