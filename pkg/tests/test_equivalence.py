"""Engine vs scalar reference, and JIT vs numpy engine paths.

The production engine vectorizes the per-message pipeline; the reference
drives the scalar operations through the same keyed draws. Byte-identical
run-records on small worlds pin every stage decision, delivery, drop,
error event, and recovery line.
"""

import numpy as np
import pytest

from taskv2x import Config
from taskv2x.engine import Simulator
from taskv2x.scenario import generate_world

from reference import run_reference

CASES = [
    dict(redundancy_mode="hard"),
    dict(redundancy_mode="soft"),
    dict(redundancy_mode="hard", beta=0.4),
    dict(redundancy_mode="soft", beta=0.6, w_rec_ms=300.0),
    dict(redundancy_mode="hard", beta=0.2, intended_rule_reverse=True),
    dict(redundancy_mode="hard", force_p_red_zero=True, beta=0.5),
    dict(redundancy_mode="soft", w_avail_ms=500.0),
    dict(redundancy_mode="hard", perfect_channel=True),
    dict(redundancy_mode="hard", transmit_when_no_intended=False),
    # tiny grid forces truncation and congestion drops
    dict(redundancy_mode="hard", beta=0.8, subchannels_per_slot=2,
         subchannel_capacity_bytes=150,
         cr_limit_table=((0.05, 0.004), (1.0, 0.002))),
]


def _small_cfg(**kw) -> Config:
    base = dict(n_vehicles=8, area_side_m=500.0, variable_density_per_km2=250.0,
                horizon_epochs=25, warmup_epochs=3, record_run=True,
                rx_midpoint_m=200.0, sense_midpoint_m=300.0,
                detection_c2_per_m=0.08, detection_c3_m=30.0,
                perception_range_m=120.0, detection_cutoff_m=200.0,
                m_relevant=10, d_max_m=250.0)
    base.update(kw)
    return Config(**base)


@pytest.mark.parametrize("case", CASES, ids=[str(i) for i in range(len(CASES))])
@pytest.mark.parametrize("seed", [1, 7])
def test_engine_matches_reference(case, seed):
    cfg = _small_cfg(**case)
    world = generate_world(cfg, seed)
    sim = Simulator(cfg, seed, world=world)
    result = sim.run()
    ref_report, ref_acc, ref_lines, _ = run_reference(cfg, seed, world)

    assert result.record_lines == ref_lines
    for f in ref_acc.__dataclass_fields__:
        assert getattr(result.accumulator, f) == pytest.approx(getattr(ref_acc, f)), f


@pytest.mark.parametrize("case", CASES[:4], ids=[str(i) for i in range(4)])
def test_kernel_and_numpy_paths_identical(case):
    cfg = _small_cfg(**case)
    world = generate_world(cfg, 5)
    fast = Simulator(cfg, 5, world=world, use_kernels=True)
    slow = Simulator(cfg, 5, world=world, use_kernels=False)
    if not fast.use_kernels:
        pytest.skip("numba unavailable")
    r1 = fast.run()
    r2 = slow.run()
    assert r1.record_lines == r2.record_lines
    assert r1.accumulator == r2.accumulator
