"""
Performance metrics: cycles, OPS/cycle, thread utilization and latency.

One op is one MAC.  Utilization is reported two ways:

* ``utilization``: ops/cycle over the 54 threads of each *active* matrix;
* ``grid_utilization``: ops/cycle over all 324 threads of the grid, the figure
  used for per-network averages (a layer that leaves matrices idle counts
  against the grid).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dataflow import LayerConfig, plan_layer
from .pe_core import THREADS_PER_GRID, THREADS_PER_MATRIX

DEFAULT_CLOCK_HZ = 200e6

# Published per-layer VGG16 latency at 200 MHz, in ms.
VGG16_REFERENCE_MS = {
    "conv1_1": 1.35, "conv1_2": 28.9,
    "conv2_1": 14.4, "conv2_2": 29.26,
    "conv3_1": 14.54, "conv3_2": 28.6, "conv3_3": 28.7,
    "conv4_1": 14.4, "conv4_2": 29.0, "conv4_3": 29.5,
    "conv5_1": 7.24, "conv5_2": 7.23, "conv5_3": 7.11,
}
VGG16_REFERENCE_TOTAL_MS = 240.23

# Published average grid utilization per network.
REFERENCE_AVG_UTILIZATION = {"vgg16": 0.95, "mobilenet_v1": 0.84, "resnet34": 0.86}

GOPS_NOTE = ("peak = 324 thread-ops/cycle; at the model clock this is "
             "324 * f MAC/s (64.8 G-MAC/s at 200 MHz)")


@dataclass(frozen=True)
class LayerMetrics:
    name: str
    cycles: int
    useful_ops: int
    active_matrices: int
    clock_hz: float = DEFAULT_CLOCK_HZ
    ddr_bytes: int = 0
    tiles: int = 1
    kernel: int = 0
    stride: int = 0

    @property
    def ops_per_cycle(self) -> float:
        return self.useful_ops / self.cycles if self.cycles else 0.0

    @property
    def utilization(self) -> float:
        return utilization(self)

    @property
    def grid_utilization(self) -> float:
        return self.ops_per_cycle / THREADS_PER_GRID

    @property
    def latency_s(self) -> float:
        return self.cycles / self.clock_hz

    @property
    def gops(self) -> float:
        """Sustained G-MAC/s at the model clock."""
        return self.ops_per_cycle * self.clock_hz / 1e9

    def as_row(self) -> dict:
        return {
            "layer": self.name, "kernel": self.kernel, "stride": self.stride,
            "cycles": self.cycles, "ops": self.useful_ops,
            "ops_per_cycle": round(self.ops_per_cycle, 4),
            "active_matrices": self.active_matrices,
            "utilization": round(self.utilization, 6),
            "grid_utilization": round(self.grid_utilization, 6),
            "latency_ms": round(self.latency_s * 1e3, 6),
            "ddr_bytes": self.ddr_bytes, "tiles": self.tiles,
        }


def utilization(m: LayerMetrics) -> float:
    if m.cycles <= 0:
        raise ValueError("utilization undefined for zero cycles")
    if m.useful_ops == 0:
        return 0.0
    return m.useful_ops / m.cycles / (THREADS_PER_MATRIX * m.active_matrices)


def layer_metrics(cfg: LayerConfig, clock_hz: float = DEFAULT_CLOCK_HZ, sram=None) -> LayerMetrics:
    """Metrics from the analytic schedule length (no tensor data)."""
    from .grid import tile_for_sram  # grid depends on this module

    sched = plan_layer(cfg)
    plan = tile_for_sram(cfg, sram)
    return LayerMetrics(cfg.name, sched.num_cycles, cfg.macs, sched.active_matrices,
                        clock_hz, plan.ddr_bytes, plan.num_tiles, cfg.kernel, cfg.stride)


def layer_latency(cfg: LayerConfig, clock_hz: float = DEFAULT_CLOCK_HZ) -> float:
    return plan_layer(cfg).num_cycles / clock_hz


def analytic_full_latency(cfg: LayerConfig, clock_hz: float = DEFAULT_CLOCK_HZ) -> float:
    """Lower bound assuming all 324 threads busy every cycle."""
    return cfg.macs / THREADS_PER_GRID / clock_hz


@dataclass
class NetworkReport:
    name: str
    layers: list = field(default_factory=list)

    @property
    def total_cycles(self) -> int:
        return sum(m.cycles for m in self.layers)

    @property
    def total_ops(self) -> int:
        return sum(m.useful_ops for m in self.layers)

    @property
    def total_latency_s(self) -> float:
        return sum(m.latency_s for m in self.layers)

    @property
    def total_ddr_bytes(self) -> int:
        return sum(m.ddr_bytes for m in self.layers)

    @property
    def mean_utilization(self) -> float:
        """Unweighted mean of per-layer grid utilization."""
        return sum(m.grid_utilization for m in self.layers) / len(self.layers)

    @property
    def weighted_utilization(self) -> float:
        """Ops-weighted grid utilization (= total ops / total thread slots)."""
        return self.total_ops / (self.total_cycles * THREADS_PER_GRID)

    def mean_utilization_where(self, keep) -> float:
        sel = [m for m in self.layers if keep(m)]
        return sum(m.grid_utilization for m in sel) / len(sel)

    def summary(self) -> str:
        lines = [f"network {self.name}: {len(self.layers)} layers",
                 f"  total cycles      {self.total_cycles}",
                 f"  total latency     {self.total_latency_s * 1e3:.3f} ms",
                 f"  mean utilization  {self.mean_utilization * 100:.2f}% (per-layer, grid)",
                 f"  ops-weighted      {self.weighted_utilization * 100:.2f}%",
                 f"  DDR traffic       {self.total_ddr_bytes} bytes (psums: 0)",
                 f"  note: {GOPS_NOTE}"]
        return "\n".join(lines)


def network_report(layers, clock_hz: float = DEFAULT_CLOCK_HZ, name: str = "network",
                   sram=None) -> NetworkReport:
    layers = list(layers)
    if not layers:
        raise ValueError("network has no layers")
    return NetworkReport(name, [layer_metrics(c, clock_hz, sram) for c in layers])
