"""Cycle, utilization and latency metrics."""

import pytest

from lognpu.dataflow import LayerConfig
from lognpu.formats import bundled_descriptor
from lognpu.metrics import (VGG16_REFERENCE_MS, LayerMetrics, analytic_full_latency,
                            layer_latency, layer_metrics, network_report, utilization)


@pytest.mark.parametrize("ops, cycles, mats, util", [
    (360, 8, 1, 45 / 54), (648, 6, 2, 1.0), (0, 5, 1, 0.0)])
def test_utilization_examples(ops, cycles, mats, util):
    assert utilization(LayerMetrics("x", cycles, ops, mats)) == pytest.approx(util)


def test_zero_cycles():
    with pytest.raises(ValueError):
        utilization(LayerMetrics("x", 0, 0, 1))


def test_latency_scaling():
    cfg = LayerConfig(3, 1, 56, 56, 64, 64, pad=1)
    assert layer_latency(cfg, 100e6) == pytest.approx(2 * layer_latency(cfg, 200e6))


def test_vgg_conv1_2():
    cfg = LayerConfig(3, 1, 224, 224, 64, 64, pad=1)
    assert layer_latency(cfg) * 1e3 == pytest.approx(28.9, rel=0.05)


def test_vgg_conv3_1_analytic():
    cfg = LayerConfig(3, 1, 56, 56, 128, 256, pad=1)
    assert analytic_full_latency(cfg) * 1e3 == pytest.approx(14.3, abs=0.05)
    assert layer_latency(cfg) * 1e3 == pytest.approx(14.54, rel=0.05)


def test_metrics_consistency():
    m = layer_metrics(LayerConfig(1, 1, 6, 3, 6, 6, "pointwise"))
    assert m.ops_per_cycle == m.useful_ops / m.cycles == 108
    assert m.utilization == 1.0 and m.grid_utilization == pytest.approx(1 / 3)
    assert m.latency_s == m.cycles / m.clock_hz


def test_network_report_totals():
    net = bundled_descriptor("vgg16")
    rep = network_report(net.configs)
    assert rep.total_latency_s == pytest.approx(sum(m.latency_s for m in rep.layers))
    assert [m.name for m in rep.layers] == list(VGG16_REFERENCE_MS)
    assert "total latency" in rep.summary()


def test_single_stride2_network():
    rep = network_report([LayerConfig(3, 2, 64, 64, 6, 4, pad=1)])
    assert rep.mean_utilization == pytest.approx(rep.layers[0].grid_utilization)
    assert rep.mean_utilization == pytest.approx(0.5, abs=0.03)


def test_empty_network():
    with pytest.raises(ValueError):
        network_report([])
