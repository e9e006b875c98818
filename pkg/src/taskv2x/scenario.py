"""Static world generation and the local-detection model.

The world is a snapshot: vehicles and environment variables are placed
once per run (variables by a Poisson Point Process, vehicles uniformly)
and never move. Ground-truth relevance marks, for each vehicle, a fixed
set of variables inside its relevance range. Detection is resampled each
epoch from a keyed stream unless frozen by config.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .rng import RngStreams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionModelParams:
    c1: float
    c2_per_m: float
    c3_m: float
    perception_range_m: float


def detection_probability(d, params) -> float:
    """Probability of locally detecting a variable at distance d.

    P(d) = 1 / (1 + c1 * exp(c2 * (d - c3))), strictly decreasing in d.
    Accepts scalars or arrays; `params` is anything with detection_c1 /
    detection_c2_per_m / detection_c3_m attributes (Config) or a
    DetectionModelParams.
    """
    if isinstance(params, DetectionModelParams):
        c1, c2, c3 = params.c1, params.c2_per_m, params.c3_m
    else:
        c1, c2, c3 = params.detection_c1, params.detection_c2_per_m, params.detection_c3_m
    d = np.asarray(d, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + c1 * np.exp(c2 * (d - c3)))
    if out.ndim == 0:
        return float(out)
    return out


class World:
    """Immutable scenario snapshot shared by all epochs of a run.

    Attributes of note:
      veh_pos: (N, 2) vehicle positions in meters.
      var_pos: (K, 2) variable positions.
      relevance: (N, K) bool, ground-truth relevance weights (binary).
      cand_ids / cand_p / cand_offsets: flattened per-vehicle arrays of
        variables within the detection cutoff and their detection
        probabilities; vehicle v owns slice [cand_offsets[v], cand_offsets[v+1]).
    """

    def __init__(self, veh_pos: np.ndarray, var_pos: np.ndarray, config):
        self.config = config
        self.veh_pos = np.asarray(veh_pos, dtype=np.float64)
        self.var_pos = np.asarray(var_pos, dtype=np.float64).reshape(-1, 2)
        self.n_vehicles = len(self.veh_pos)
        self.n_variables = len(self.var_pos)
        self.dist_vv = _pairwise(self.veh_pos, self.veh_pos, config)
        self.dist_vk = _pairwise(self.veh_pos, self.var_pos, config)
        self.relevance = np.zeros((self.n_vehicles, self.n_variables), dtype=bool)
        self.rel_ids: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * self.n_vehicles
        self._build_candidates()

    def _build_candidates(self):
        cfg = self.config
        ids, probs, offsets = [], [], [0]
        for v in range(self.n_vehicles):
            d = self.dist_vk[v]
            sel = np.nonzero(d <= cfg.detection_cutoff_m)[0]
            ids.append(sel)
            probs.append(detection_probability(d[sel], cfg))
            offsets.append(offsets[-1] + len(sel))
        self.cand_ids = np.concatenate(ids) if ids else np.empty(0, dtype=np.int64)
        self.cand_p = np.concatenate(probs) if probs else np.empty(0)
        self.cand_offsets = np.asarray(offsets, dtype=np.int64)
        self.total_candidates = int(self.cand_offsets[-1])

    def assign_relevance(self, generator: np.random.Generator):
        """Mark min(M, candidates within D_max) variables relevant per vehicle."""
        cfg = self.config
        for v in range(self.n_vehicles):
            within = np.nonzero(self.dist_vk[v] <= cfg.d_max_m)[0]
            if len(within) == 0:
                log.warning("vehicle %d has no variables within D_max; empty relevance set", v)
                continue
            m = min(cfg.m_relevant, len(within))
            if cfg.relevance_selection == "nearest":
                order = np.argsort(self.dist_vk[v][within], kind="stable")
                chosen = within[order[:m]]
            else:
                chosen = generator.choice(within, size=m, replace=False)
            chosen = np.sort(chosen)
            self.relevance[v, chosen] = True
            self.rel_ids[v] = chosen

    def candidate_slice(self, v: int):
        lo, hi = self.cand_offsets[v], self.cand_offsets[v + 1]
        return self.cand_ids[lo:hi], self.cand_p[lo:hi]


def _pairwise(a: np.ndarray, b: np.ndarray, config) -> np.ndarray:
    diff = np.abs(a[:, None, :] - b[None, :, :])
    if getattr(config, "torus_distance", False):
        side = config.area_side_m
        diff = np.minimum(diff, side - diff)
    return np.sqrt((diff ** 2).sum(axis=2))


def generate_world(config, seed: int) -> World:
    """Place variables (PPP) and vehicles (uniform), build relevance."""
    if config.variable_density_per_km2 < 0:
        raise ValueError("density must be >= 0")
    streams = RngStreams(seed)
    g = streams.generator(rngmod.PLACEMENT)
    side = config.area_side_m
    k = int(g.poisson(config.variable_density_per_km2 * config.area_km2))
    var_pos = g.uniform(0.0, side, size=(k, 2))
    veh_pos = g.uniform(0.0, side, size=(config.n_vehicles, 2))
    world = World(veh_pos, var_pos, config)
    world.assign_relevance(g)
    return world


def world_from_positions(config, veh_pos, var_pos,
                         generator: np.random.Generator | None = None) -> World:
    """Build a synthetic world from explicit positions (tests, replays)."""
    world = World(np.asarray(veh_pos, float), np.asarray(var_pos, float), config)
    if generator is None:
        generator = RngStreams(0).generator(rngmod.PLACEMENT)
    world.assign_relevance(generator)
    return world


def detection_uniforms(world: World, streams: RngStreams, epoch: int) -> np.ndarray:
    """The epoch's detection draws, one per (vehicle, candidate) slot."""
    return streams.uniforms(rngmod.DETECTION, epoch, world.total_candidates)


def sample_detections_flat(world: World, streams: RngStreams, epoch: int) -> np.ndarray:
    """Detection mask over the flattened candidate arrays for one epoch."""
    cfg = world.config
    draw_epoch = 0 if cfg.persistent_detection else epoch
    u = detection_uniforms(world, streams, draw_epoch)
    return u < world.cand_p


def sample_detections(world: World, vehicle: int, epoch: int, streams: RngStreams) -> np.ndarray:
    """Variable ids locally detected by one vehicle at one epoch."""
    mask = sample_detections_flat(world, streams, epoch)
    lo, hi = world.cand_offsets[vehicle], world.cand_offsets[vehicle + 1]
    return world.cand_ids[lo:hi][mask[lo:hi]]


def expected_detection_count(config, r_max: float = 2000.0, steps: int = 200_000) -> float:
    """Quadrature oracle: E[detections] for an interior vehicle.

    Integrates density * P(d) * 2*pi*d over [0, r_max] by the midpoint
    rule; independent of the sampling path.
    """
    dens = config.variable_density_per_km2 * 1e-6  # per m^2
    h = r_max / steps
    d = (np.arange(steps) + 0.5) * h
    p = detection_probability(d, config)
    return float(dens * np.sum(p * 2.0 * math.pi * d) * h)
