"""Layer execution, post-processing and the SRAM model."""

import numpy as np
import pytest

from lognpu.dataflow import LayerConfig
from lognpu.errors import ConfigError, ShapeError
from lognpu.grid import (ConvCore, SramModel, post_process, run_layer, tile_for_sram,
                         wiring_fault)
from lognpu.quantizer import LogArray, log_quantize_array
from lognpu.reference import conv2d_quant_oracle
from lognpu.verify import random_operands


def _run_and_compare(core, cfg, rng):
    x, w = random_operands(cfg, rng)
    run = run_layer(core, cfg, x, w)
    ref = conv2d_quant_oracle(x, w, cfg.kernel, cfg.stride, cfg.mode, cfg.pad)
    np.testing.assert_array_equal(run.psums, ref)
    assert run.output.equals(post_process(ref, core.log_table))
    return run


def test_example_layer(core, rng):
    run = _run_and_compare(core, LayerConfig(3, 1, 6, 12, 1, 1), rng)
    out, metrics = run
    assert out.shape == (1, 10, 4)
    assert metrics.cycles == 8 and metrics.ops_per_cycle == 45
    assert run.stats.max_deferred_psums == 3
    assert run.stats.register_peak == 4


@pytest.mark.parametrize("cfg", [
    LayerConfig(3, 2, 8, 8, 6, 4, pad=1),
    LayerConfig(3, 1, 13, 17, 7, 7, "depthwise", 1),
    LayerConfig(1, 2, 9, 7, 20, 5, "pointwise"),
    LayerConfig(5, 1, 7, 7, 2, 2),
    LayerConfig(5, 2, 11, 9, 3, 3, "depthwise", 2),
    LayerConfig(4, 1, 6, 6, 1, 1),
    LayerConfig(4, 2, 6, 6, 3, 2, pad=1),
])
def test_layers_match_oracle(core, rng, cfg):
    _run_and_compare(core, cfg, rng)


def test_identity_1x1(core, rng):
    cfg = LayerConfig(1, 1, 5, 4, 1, 1, "pointwise")
    x = log_quantize_array(np.abs(rng.normal(size=cfg.input_shape)))
    w = log_quantize_array(np.ones(cfg.weight_shape))
    out, _ = run_layer(core, cfg, x, w)
    assert out.equals(x)


def test_post_process_examples(core):
    out = post_process(np.array([-896, 256, 154, 0]), core.log_table)
    assert out.zero.tolist() == [True, False, False, True]
    assert out.code[1:3].tolist() == [0, -1]


def test_parallel_is_deterministic(rng):
    cfg = LayerConfig(3, 1, 11, 14, 8, 3, pad=1)
    x, w = random_operands(cfg, rng)
    a = run_layer(ConvCore(), cfg, x, w)
    b = run_layer(ConvCore(parallel=True, batch=7), cfg, x, w)
    np.testing.assert_array_equal(a.psums, b.psums)
    assert a.metrics == b.metrics and a.output.equals(b.output)


def test_fault_hook_breaks_equivalence(rng):
    cfg = LayerConfig(3, 1, 6, 12, 1, 1)
    x, w = random_operands(cfg, rng)
    bad = run_layer(ConvCore(fault=wiring_fault(0, 3)), cfg, x, w)  # o1 <-> o4: different rows
    ref = conv2d_quant_oracle(x, w, 3)
    assert not np.array_equal(bad.psums, ref)


def test_shape_errors(core):
    cfg = LayerConfig(3, 1, 6, 6, 2, 1)
    x = LogArray.zeros((2, 6, 5))
    with pytest.raises(ShapeError):
        run_layer(core, cfg, x, LogArray.zeros(cfg.weight_shape))
    neg = log_quantize_array(-np.ones(cfg.input_shape))
    with pytest.raises(ShapeError):
        run_layer(core, cfg, neg, LogArray.zeros(cfg.weight_shape))


def test_sram_fit_single_tile():
    cfg = LayerConfig(3, 1, 16, 16, 8, 8, pad=1)
    plan = tile_for_sram(cfg)
    assert plan.num_tiles == 1 and plan.ddr_psum_bytes == 0
    assert plan.ddr_bytes == 16 * 16 * 8 + 8 * 8 * 9 + 16 * 16 * 8


def test_sram_vgg_conv1_2_tiles():
    cfg = LayerConfig(3, 1, 224, 224, 64, 64, pad=1)
    plan = tile_for_sram(cfg)
    assert plan.num_tiles > 1 and plan.ddr_psum_bytes == 0
    covered = sorted(t for t in plan.tiles(cfg))
    assert covered[0][1][0] == 0 and len(covered) == plan.num_tiles


@pytest.mark.parametrize("cfg", [LayerConfig(3, 1, 224, 224, 64, 64, pad=1),
                                 LayerConfig(3, 2, 112, 112, 128, 128, "depthwise", 1),
                                 LayerConfig(1, 1, 28, 28, 512, 512, "pointwise")])
def test_sram_monotone(cfg):
    tiles = [tile_for_sram(cfg, SramModel(total_bits=b)).num_tiles
             for b in (1_900_000, 3_800_000, 7_600_000, 15_200_000)]
    assert tiles == sorted(tiles, reverse=True)


def test_sram_too_small():
    with pytest.raises(ConfigError):
        tile_for_sram(LayerConfig(3, 1, 224, 224, 512, 4, pad=1), SramModel(total_bits=8000))
    sram = SramModel()
    sram.load("weight", sram.capacity("weight"))
    with pytest.raises(ConfigError):
        sram.load("weight", 1)
