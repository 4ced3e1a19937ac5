"""
CONV core: six PE matrices, adder nets, boundary registers, channel
accumulators, an SRAM capacity model and the ReLU + log requantization stage.

``run_layer`` walks a layer's schedule in batches: operand gathering and the
thread/adder-net-0 arithmetic are vectorised across cycles, then adder net 1
routes are applied cycle by cycle so register traffic happens in hardware
order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataflow import (BoundaryRegister, ChannelAccumulator, LayerConfig, Schedule,
                       plan_layer)
from .errors import ConfigError, ScheduleError, ShapeError
from .metrics import LayerMetrics
from .pe_core import (ACCEL_LUT, MATRICES, PE_COLS, PE_ROWS, PSUMS_PER_MATRIX, Q8_8,
                      THREADS, PsumFormat, ThreadLUT, adder_net0, matrix_compute)
from .quantizer import ACCEL_PARAMS, LogArray, LogTable, QuantParams, build_log_table

DEFAULT_SRAM_BITS = 3_800_000
DEFAULT_CLOCK_HZ = 200e6
LOG_BYTES = 1  # one stored byte per log code (sign, 6-bit code, zero flag)

FaultHook = Callable[[int, np.ndarray], None]


@dataclass
class SramModel:
    """On-chip buffer capacities (in bytes) and occupancy counters."""

    total_bits: int = DEFAULT_SRAM_BITS
    weight_frac: float = 1 / 3
    input_frac: float = 1 / 3
    output_frac: float = 1 / 6
    acc_frac: float = 1 / 6
    used: dict = field(default_factory=dict)

    def __post_init__(self):
        fracs = (self.weight_frac, self.input_frac, self.output_frac, self.acc_frac)
        if self.total_bits <= 0 or min(fracs) <= 0 or sum(fracs) > 1 + 1e-9:
            raise ConfigError(f"bad SRAM split {fracs} of {self.total_bits} bits")

    @classmethod
    def from_kb(cls, kb: float, **kw) -> "SramModel":
        return cls(total_bits=int(kb * 8192), **kw)

    def capacity(self, region: str) -> int:
        frac = getattr(self, f"{region}_frac")
        return int(self.total_bits * frac) // 8

    def load(self, region: str, nbytes: int):
        now = self.used.get(region, 0) + nbytes
        if now > self.capacity(region):
            raise ConfigError(f"{region} SRAM overflow: {now} > {self.capacity(region)} bytes")
        self.used[region] = now

    def reset(self):
        self.used.clear()

    def split(self) -> dict:
        return {r: self.capacity(r) for r in ("weight", "input", "output", "acc")}


@dataclass(frozen=True)
class TilingPlan:
    """How a layer is cut to fit SRAM, plus the resulting DDR traffic."""

    filters_per_tile: int
    rows_per_tile: int
    filter_tiles: int
    row_tiles: int
    ddr_input_bytes: int
    ddr_weight_bytes: int
    ddr_output_bytes: int
    ddr_psum_bytes: int = 0

    @property
    def num_tiles(self) -> int:
        return self.filter_tiles * self.row_tiles

    @property
    def ddr_bytes(self) -> int:
        return (self.ddr_input_bytes + self.ddr_weight_bytes + self.ddr_output_bytes
                + self.ddr_psum_bytes)

    def tiles(self, cfg: LayerConfig) -> list:
        """(filter range, output-row range) of every sub-run, in execution order."""
        out = []
        for ft in range(self.filter_tiles):
            f0 = ft * self.filters_per_tile
            f1 = min(cfg.out_c, f0 + self.filters_per_tile)
            for rt in range(self.row_tiles):
                y0 = rt * self.rows_per_tile
                out.append(((f0, f1), (y0, min(cfg.out_h, y0 + self.rows_per_tile))))
        return out


def _tile_cost(cfg: LayerConfig, sram: SramModel, nf: int):
    """Largest output band for ``nf`` filters per tile, or None if nothing fits."""
    k, s = cfg.kernel, cfg.stride
    chans = nf if cfg.depthwise else cfg.in_c
    w_bytes = nf * (1 if cfg.depthwise else cfg.in_c) * k * k * LOG_BYTES
    if w_bytes > sram.capacity("weight"):
        return None
    row_bytes = cfg.in_w * chans * LOG_BYTES
    in_rows = sram.capacity("input") // row_bytes
    by_input = (in_rows - k) // s + 1 if in_rows >= k else 0
    by_output = sram.capacity("output") // (cfg.out_w * nf * LOG_BYTES)
    by_acc = sram.capacity("acc") // (cfg.out_w * nf * 4)
    rows = min(cfg.out_h, by_input, by_output, by_acc)
    return rows if rows >= 1 else None


def tile_for_sram(cfg: LayerConfig, core: "ConvCore | SramModel | None" = None) -> TilingPlan:
    """Pick filter-group x row-band tiles with the fewest tiles that fit SRAM.

    Filter groups are the outer loop so each group's weights are fetched once;
    input bands (with their halo rows) are re-fetched for every filter group.
    Tiling changes DDR traffic only; the cycle count is that of the whole layer.
    """
    sram = core.sram if isinstance(core, ConvCore) else (core or SramModel())
    best = None
    for nf in range(1, cfg.out_c + 1):
        rows = _tile_cost(cfg, sram, nf)
        if rows is None:
            continue
        ft = math.ceil(cfg.out_c / nf)
        rt = math.ceil(cfg.out_h / rows)
        key = (ft * rt, rt, ft)
        if best is None or key < best[0]:
            best = (key, nf, rows, ft, rt)
    if best is None:
        raise ConfigError(f"layer {cfg.name or cfg} does not fit SRAM even as a single "
                          f"row and filter")
    _, nf, rows, ft, rt = best
    k, s = cfg.kernel, cfg.stride
    in_rows = 0
    for b in range(rt):
        y0, y1 = b * rows, min(cfg.out_h, (b + 1) * rows)
        top = max(0, y0 * s - cfg.pad)
        bot = min(cfg.in_h, (y1 - 1) * s - cfg.pad + k)
        in_rows += bot - top
    row_elems = cfg.in_w * cfg.in_c
    if cfg.depthwise:
        ddr_in = in_rows * row_elems  # each channel's band is read by its own group
    else:
        ddr_in = in_rows * row_elems * ft
    w_elems = cfg.out_c * (1 if cfg.depthwise else cfg.in_c) * k * k
    out_elems = cfg.out_c * cfg.out_h * cfg.out_w
    return TilingPlan(nf, rows, ft, rt, ddr_in * LOG_BYTES, w_elems * LOG_BYTES,
                      out_elems * LOG_BYTES)


def wiring_fault(psum_a: int = 0, psum_b: int = 1, matrix: int = 0) -> FaultHook:
    """Test hook that swaps two adder-net-0 outputs of one matrix every cycle."""

    def hook(cycle: int, psums: np.ndarray):
        psums[matrix, [psum_a, psum_b]] = psums[matrix, [psum_b, psum_a]]

    return hook


@dataclass
class RunStats:
    cycles: int = 0
    saturated_products: int = 0
    max_deferred_psums: int = 0
    max_deferred_words: int = 0
    register_peak: int = 0
    deferred_histogram: dict = field(default_factory=dict)


@dataclass
class LayerRun:
    output: LogArray
    psums: np.ndarray
    metrics: LayerMetrics
    stats: RunStats

    def __iter__(self):
        return iter((self.output, self.metrics))


class ConvCore:
    """Six 6x3 PE matrices plus adder nets, registers and post-processing."""

    def __init__(self, params: QuantParams = ACCEL_PARAMS, fmt: PsumFormat = Q8_8,
                 clock_hz: float = DEFAULT_CLOCK_HZ, sram: SramModel | None = None,
                 parallel: bool = False, fault: FaultHook | None = None,
                 batch: int = 2048):
        self.params = params
        self.fmt = fmt
        self.lut = ACCEL_LUT if (params, fmt) == (ACCEL_PARAMS, Q8_8) else ThreadLUT(params, fmt)
        self.clock_hz = clock_hz
        self.sram = sram or SramModel()
        self.parallel = parallel
        self.fault = fault
        self.batch = batch
        self._table = None

    @property
    def num_matrices(self) -> int:
        return MATRICES

    @property
    def grid_shape(self) -> tuple:
        return (PE_ROWS, PE_COLS, MATRICES)

    @property
    def log_table(self) -> LogTable:
        if self._table is None:
            self._table = build_log_table(self.params, self.fmt.frac_bits, self.fmt.total_bits)
        return self._table

    # ---- stage 1: operands, threads, adder net 0 -----------------------------
    def _gather(self, cycles, x: LogArray, w: LogArray):
        B = len(cycles)
        chan = np.full((B, MATRICES, PE_COLS), -1)
        filt = np.full((B, MATRICES, THREADS), -1)
        wch = np.full((B, MATRICES, PE_COLS), -1)
        for b, tc in enumerate(cycles):
            m = list(tc.matrices)
            chan[b, m] = tc.in_chan
            filt[b, m] = tc.w_filter
            wch[b, m] = tc.w_chan
        row = np.stack([tc.in_row for tc in cycles])
        col = np.stack([tc.in_col for tc in cycles])
        krow = np.stack([tc.w_krow for tc in cycles])
        kcol = np.stack([tc.w_kcol for tc in cycles])

        C, H, W = x.shape
        ci = chan[:, :, None, :]
        ri = row[:, None, :, :]
        xi = col[:, None, :, :]
        ok = (ci >= 0) & (ri >= 0) & (ri < H) & (xi >= 0) & (xi < W)
        idx = (np.clip(ci, 0, C - 1), np.clip(ri, 0, H - 1), np.clip(xi, 0, W - 1))
        inputs = LogArray(x.sign[idx], x.code[idx], x.zero[idx] | ~ok)

        fi = filt[:, :, None, None, :]
        wc = wch[:, :, None, :, None]
        kr = krow[:, None]
        kc = kcol[:, None]
        wok = (fi >= 0) & (wc >= 0) & (kr >= 0) & (kc >= 0)
        P, Cw, K, _ = w.shape
        widx = (np.clip(fi, 0, P - 1), np.clip(wc, 0, Cw - 1), np.clip(kr, 0, K - 1),
                np.clip(kc, 0, K - 1))
        widx = np.broadcast_arrays(*widx)
        weights = LogArray(w.sign[tuple(widx)], w.code[tuple(widx)],
                           w.zero[tuple(widx)] | ~np.broadcast_to(wok, widx[0].shape))
        return inputs, weights

    def _stage1(self, inputs: LogArray, weights: LogArray, counter: dict) -> np.ndarray:
        if not self.parallel:
            return adder_net0(matrix_compute(inputs, weights, self.lut, counter), self.fmt)

        def one(m):
            c = {}
            p = adder_net0(matrix_compute(inputs[:, m], weights[:, m], self.lut, c), self.fmt)
            return p, c.get("saturated", 0)

        with ThreadPoolExecutor(max_workers=MATRICES) as pool:
            results = list(pool.map(one, range(MATRICES)))
        # merge in matrix order regardless of completion order
        counter["saturated"] = counter.get("saturated", 0) + sum(r[1] for r in results)
        return np.stack([r[0] for r in results], axis=1)

    # ---- stage 2: adder net 1, registers, accumulators ----------------------
    def _route(self, cycles, psums, regs, acc, schedule, stats):
        fmt = self.fmt
        lo, hi = fmt.acc_min, fmt.acc_max
        for b, tc in enumerate(cycles):
            ps = psums[b]
            if self.fault is not None:
                self.fault(tc.index, ps)
            ps = ps.tolist()
            for r in tc.routes:
                v = 0
                for m in r.matrices:
                    row = ps[m]
                    for i in r.psums:
                        v += row[i]
                if r.pop is not None:
                    v += self._reg(regs, r.pop, schedule).pop()
                v = min(max(v, lo), hi)
                if r.push is not None:
                    self._reg(regs, r.push, schedule).push(v)
                else:
                    acc.add(r.dest, v)
            d = tc.deferred_psums()
            stats.max_deferred_psums = max(stats.max_deferred_psums, d)
            stats.max_deferred_words = max(stats.max_deferred_words, tc.deferred_words())
            stats.deferred_histogram[d] = stats.deferred_histogram.get(d, 0) + 1

    @staticmethod
    def _reg(regs, lane, schedule):
        if lane not in regs:
            regs[lane] = BoundaryRegister(schedule.register_lanes[lane[0]])
        return regs[lane]

    def execute(self, schedule: Schedule, x: LogArray, w: LogArray):
        """Run a schedule; returns (16-bit psum raw output, RunStats)."""
        cfg = schedule.cfg
        acc = ChannelAccumulator(cfg.output_shape, self.fmt)
        regs: dict = {}
        stats = RunStats()
        counter: dict = {}
        per_sweep = schedule.cycles_per_sweep
        buf = []

        def flush():
            inputs, weights = self._gather(buf, x, w)
            psums = self._stage1(inputs, weights, counter)
            self._route(buf, psums, regs, acc, schedule, stats)
            buf.clear()

        for tc in schedule:
            buf.append(tc)
            stats.cycles += 1
            if len(buf) >= self.batch:
                flush()
            if stats.cycles % per_sweep == 0:
                if buf:
                    flush()
                live = {k: len(r) for k, r in regs.items() if len(r)}
                if live:
                    raise ScheduleError(f"registers not empty after sweep: {live}")
        if buf:
            flush()
        if stats.cycles != schedule.num_cycles:
            raise ScheduleError(f"ran {stats.cycles} cycles, planned {schedule.num_cycles}")
        stats.saturated_products = counter.get("saturated", 0)
        stats.register_peak = max((r.peak for r in regs.values()), default=0)
        return self.fmt.saturate(acc.values), stats


def post_process(psums, table: LogTable) -> LogArray:
    """ReLU followed by nearest-log-code lookup."""
    raw = np.maximum(np.asarray(psums, dtype=np.int64), 0)
    return table.lookup_array(raw)


def _check_shapes(cfg: LayerConfig, x: LogArray, w: LogArray):
    if tuple(x.shape) != cfg.input_shape:
        raise ShapeError(f"input is {tuple(x.shape)}, layer expects {cfg.input_shape}")
    if tuple(w.shape) != cfg.weight_shape:
        raise ShapeError(f"weights are {tuple(w.shape)}, layer expects {cfg.weight_shape}")
    live = ~x.zero
    if np.any(x.sign[live] != 1):
        raise ShapeError("activations must be non-negative log codes")


def run_layer(core: ConvCore, cfg: LayerConfig, x: LogArray, w: LogArray) -> LayerRun:
    """Execute one layer bit-exactly; unpacks as ``(output, metrics)``."""
    _check_shapes(cfg, x, w)
    schedule = plan_layer(cfg)
    plan = tile_for_sram(cfg, core)
    if plan.ddr_psum_bytes:
        raise ScheduleError("schedule would spill psums off-core")
    psums, stats = core.execute(schedule, x, w)
    out = post_process(psums, core.log_table)
    metrics = LayerMetrics(name=cfg.name, cycles=stats.cycles, useful_ops=cfg.macs,
                           active_matrices=schedule.active_matrices, clock_hz=core.clock_hz,
                           ddr_bytes=plan.ddr_bytes, tiles=plan.num_tiles,
                           kernel=cfg.kernel, stride=cfg.stride)
    return LayerRun(out, psums, metrics, stats)
