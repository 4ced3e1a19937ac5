"""Schedules, adder-net-1 routes and boundary registers."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lognpu.dataflow import (BoundaryRegister, LayerConfig, PointwiseSchedule, SectorSchedule,
                             WindowSchedule, avg_pool_layer, boundary_consume, boundary_defer,
                             format_trace, plan_layer)
from lognpu.errors import ConfigError, RegisterError
from lognpu.pe_core import PSUMS_PER_MATRIX
from lognpu.verify import coverage_check

GOLDEN = Path(__file__).parent / "golden"
EXAMPLE = LayerConfig(3, 1, 6, 12, 1, 1, name="example")


def test_example_schedule_numbers():
    s = plan_layer(EXAMPLE)
    assert isinstance(s, SectorSchedule)
    assert (EXAMPLE.out_h, EXAMPLE.out_w) == (10, 4)
    assert s.num_cycles == len(list(s)) == 8
    assert [tc.useful_ops() for tc in s] == [45] * 8


def test_example_deferred_psums():
    cycles = list(plan_layer(EXAMPLE))
    # o13, o16, o17 (1-based) are parked while the first sector is swept
    for tc in cycles[:4]:
        assert sorted(i + 1 for i in tc.defer_set) == [13, 16, 17]
        assert tc.deferred_psums() == 3 and tc.deferred_words() == 2
    for tc in cycles[4:]:
        assert not tc.defer_set
        assert sorted(i + 1 for i in tc.consume_set) == [2, 3, 6]


def test_example_register_between_sectors():
    """Both lanes hold one word per column after t=4 and drain by t=8."""
    s = plan_layer(EXAMPLE)
    depth = {}
    for tc in s:
        for r in tc.routes:
            if r.pop:
                depth[r.pop] -= 1
        for r in tc.routes:
            if r.push:
                depth[r.push] = depth.get(r.push, 0) + 1
        if tc.index == 3:
            assert sorted(depth.values()) == [4, 4]
    assert all(v == 0 for v in depth.values())


@pytest.mark.parametrize("name, cfg", [
    ("example_3x3_s1", EXAMPLE),
    ("example_3x3_s2", LayerConfig(3, 2, 6, 12, 1, 1, pad=1, name="example_s2")),
])
def test_golden_traces(name, cfg):
    expected = (GOLDEN / f"{name}.trace").read_text().splitlines()
    assert format_trace(plan_layer(cfg)) == expected


def test_pointwise_example():
    cfg = LayerConfig(1, 1, 6, 3, 6, 6, "pointwise")
    s = plan_layer(cfg)
    assert isinstance(s, PointwiseSchedule)
    assert (s.num_cycles, s.active_matrices) == (6, 2)
    assert all(tc.useful_ops() == 108 for tc in s)


def test_pointwise_matrix_counts():
    assert plan_layer(LayerConfig(1, 1, 4, 4, 3, 3, "pointwise")).active_matrices == 1
    s = plan_layer(LayerConfig(1, 1, 4, 4, 36, 3, "pointwise"))
    assert (s.passes, s.active_matrices) == (2, 6)
    assert s.computed_ops() == s.cfg.macs


def test_5x5_adder_groups():
    s = plan_layer(LayerConfig(5, 1, 7, 7, 1, 1))
    assert isinstance(s, WindowSchedule)
    g = {k: sorted(i + 1 for i in v) for k, v in s.psum_groups().items()}
    # Va0 = (o1+o5+o9) + (o10+o14); Va1 = (o4+o8+o12) + (o13+o17)
    assert g == {0: [1, 5, 9, 10, 14], 1: [4, 8, 12, 13, 17]}
    assert s.phases == 2
    first, second = list(s)[:2]
    assert first.w_kcol.max() == 2 and second.w_kcol.max() == 4
    assert (second.w_kcol[:, 2] == -1).all()  # unused third column in phase 2


def test_4x4_shapes():
    assert plan_layer(LayerConfig(4, 1, 6, 6, 1, 1)).cfg.output_shape == (1, 3, 3)
    assert plan_layer(LayerConfig(4, 2, 6, 6, 1, 1)).cfg.output_shape == (1, 2, 2)


def test_unsupported():
    with pytest.raises(ConfigError):
        plan_layer(LayerConfig(7, 1, 9, 9, 1, 1))
    with pytest.raises(ConfigError):
        plan_layer(LayerConfig(3, 3, 9, 9, 1, 1))
    with pytest.raises(ConfigError):
        LayerConfig(3, 1, 9, 9, 2, 3, "depthwise")
    with pytest.raises(ConfigError):
        LayerConfig(3, 1, 9, 9, 2, 3, pad=2)


def test_stride2_half_utilization():
    s1 = plan_layer(LayerConfig(3, 1, 112, 112, 64, 8, pad=1))
    s2 = plan_layer(LayerConfig(3, 2, 112, 112, 64, 8, pad=1))
    u1 = s1.cfg.macs / s1.num_cycles
    u2 = s2.cfg.macs / s2.num_cycles
    assert u2 / u1 == pytest.approx(0.5, abs=0.02)


def test_boundary_register_fifo():
    reg = BoundaryRegister(2)
    psums = list(range(PSUMS_PER_MATRIX))
    boundary_defer(reg, psums, {12, 16})
    boundary_defer(reg, psums, {15})
    with pytest.raises(RegisterError):
        boundary_defer(reg, psums, {0})
    assert boundary_consume(reg, psums, {2}) == 12 + 16 + 2
    assert boundary_consume(reg, [0] * 18, set()) == 15
    with pytest.raises(RegisterError):
        reg.pop()
    assert reg.peak == 2


def test_avg_pool_layer():
    cfg, w = avg_pool_layer(3, 3 - 1, 8, 8, 4)
    assert cfg.depthwise and w.shape == (4, 1, 3, 3)
    assert (w.code == -6).all()  # 1/9 -> sqrt2^-6 = 1/8


small = st.builds(
    lambda k, s, w, h, c, p, dw, pad: LayerConfig(
        k, s, w + k, h + k, c, c if (dw and k > 1) else p,
        "pointwise" if k == 1 else ("depthwise" if dw else "standard"), min(pad, k // 2)),
    st.sampled_from([1, 3, 4, 5]), st.integers(1, 2), st.integers(0, 9), st.integers(0, 14),
    st.integers(1, 8), st.integers(1, 5), st.booleans(), st.integers(0, 2))


@given(small)
def test_conservation_and_coverage(cfg):
    s = plan_layer(cfg)
    assert s.num_cycles == len(s.template) * s.num_sweeps
    skipped = s.skipped_pad_ops if isinstance(s, SectorSchedule) else 0
    assert s.computed_ops() + skipped == cfg.macs
    assert coverage_check(s) == []


@given(small)
def test_psum_exclusivity(cfg):
    for tc in plan_layer(cfg):
        assert not (tc.defer_set & tc.consume_set)
        used = {}
        for r in tc.routes:
            for m in r.matrices:
                for i in r.psums:
                    assert (m, i) not in used
                    used[(m, i)] = r
        if cfg.kernel == 3 and cfg.stride == 1:
            assert tc.deferred_psums() <= 3
