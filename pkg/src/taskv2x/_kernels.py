"""JIT kernels for the per-epoch decision and error scans.

These mirror the vectorized numpy fallback in engine.py exactly: triples
enumerate (transmitter, detected variable, intended receiver) in
(tx asc, var asc, rx asc) order, and draw positions index that layout.
numba is optional; without it the engine uses the numpy path.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def stage_select(det_ids, det_tx, int_cols, int_offsets, ni, relevance,
                 content_ring, last_decode, heard_epoch, red_cut, ring_len,
                 mode_soft, force_zero, p_red, u_soft, beta, u_beta,
                 outcome, kept_per_det):
    """Redundancy, relevance, and keep-counts for every triple."""
    trip = 0
    for i in range(det_ids.shape[0]):
        tx = det_tx[i]
        var = det_ids[i]
        n_i = ni[tx]
        if n_i == 0:
            kept_per_det[i] = 0
            continue
        heard = heard_epoch[tx, var] > red_cut
        base = int_offsets[tx]
        kept = 0
        for j in range(n_i):
            rx = int_cols[base + j]
            red = False
            if not force_zero:
                ld = last_decode[tx, rx]
                if ld > red_cut and content_ring[ld % ring_len, rx, var]:
                    red = True
                elif heard:
                    if mode_soft:
                        red = u_soft[trip] < p_red[trip]
                    else:
                        red = True
            if red:
                outcome[trip] = 1
            else:
                rel = relevance[rx, var]
                if beta > 0.0 and u_beta[trip] < beta:
                    rel = not rel
                if rel:
                    outcome[trip] = 0
                    kept += 1
                else:
                    outcome[trip] = 2
            trip += 1
        kept_per_det[i] = kept
    return trip


@njit(cache=True)
def cse_scan(det_ids, det_tx, int_cols, int_offsets, ni, outcome, received,
             included, relevance, avail_det, avail_dec, avail_cut,
             ev_tx, ev_rx, ev_var, ev_cause):
    """Collect content-selection errors; returns the event count.

    Writes at most len(ev_tx) events; callers grow the buffers and rescan
    on overflow.
    """
    cap = ev_tx.shape[0]
    trip = 0
    ne = 0
    for i in range(det_ids.shape[0]):
        tx = det_tx[i]
        var = det_ids[i]
        n_i = ni[tx]
        if n_i == 0:
            continue
        if included[tx, var]:
            trip += n_i
            continue
        base = int_offsets[tx]
        for j in range(n_i):
            oc = outcome[trip]
            if oc != 0:
                rx = int_cols[base + j]
                if received[tx, rx] and relevance[rx, var]:
                    if not (avail_det[rx, var] > avail_cut or avail_dec[rx, var] > avail_cut):
                        if ne < cap:
                            ev_tx[ne] = tx
                            ev_rx[ne] = rx
                            ev_var[ne] = var
                            ev_cause[ne] = oc
                        ne += 1
            trip += 1
    return ne
