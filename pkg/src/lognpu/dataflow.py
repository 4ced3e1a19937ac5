"""
State controller: turns a layer configuration into a cycle-by-cycle schedule.

Three schedule families cover the supported kernels:

* 3x3 (stride 1/2): a stream of 6-row input column sectors.  PE row ``r`` holds
  one input row, PE column ``c`` one kernel column and thread ``j`` one kernel
  row, so ``o[3r+j]`` belongs to output row ``(row + pad - j) / stride``.
  Outputs that straddle two sectors are finished through boundary registers;
  leftover rows at the bottom of the plane are streamed column-major so that
  short final sectors still fill all six PE rows.
* 1x1: PE columns take three channels, PE rows six output positions and
  threads three filters; psums are reduced across matrices by the channel
  accumulators.
* 4x4 / 5x5: two phases per output column (kernel columns 0-2, then the rest)
  whose psums are combined in the channel accumulators.

Standard convolutions assign one input channel (3x3, 4x4, 5x5) or three (1x1)
to each PE matrix and sum across matrices; depthwise layers give every matrix
its own channel and output plane.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .errors import ConfigError, RegisterError, ScheduleError
from .pe_core import (MATRICES, PE_COLS, PE_ROWS, PSUMS_PER_MATRIX, THREADS,
                      THREADS_PER_MATRIX, PsumFormat)
from .quantizer import ACCEL_PARAMS, LogArray, QuantParams, log_quantize_array

CONV_TYPES = ("standard", "depthwise", "pointwise")
SUPPORTED_KERNELS = (1, 3, 4, 5)
SUPPORTED_STRIDES = (1, 2)
IDLE = -(1 << 20)  # input coordinate of a PE with nothing loaded


@dataclass(frozen=True)
class LayerConfig:
    """One convolution layer. ``pad`` zeros are added on every side."""

    kernel: int
    stride: int
    in_w: int
    in_h: int
    in_c: int
    out_c: int
    conv_type: str = "standard"
    pad: int = 0
    name: str = ""

    def __post_init__(self):
        if self.conv_type not in CONV_TYPES:
            raise ConfigError(f"unknown conv type {self.conv_type!r}")
        if min(self.kernel, self.stride, self.in_w, self.in_h, self.in_c, self.out_c) < 1:
            raise ConfigError(f"non-positive layer dimension in {self}")
        if not 0 <= self.pad <= self.kernel // 2:
            raise ConfigError(f"pad {self.pad} not in [0, {self.kernel // 2}]")
        if self.conv_type == "pointwise" and self.kernel != 1:
            raise ConfigError("pointwise layers must use kernel 1")
        if self.conv_type == "depthwise" and self.out_c != self.in_c:
            raise ConfigError("depthwise layers need out_c == in_c")
        if self.out_w < 1 or self.out_h < 1:
            raise ConfigError(f"kernel {self.kernel} larger than padded input")

    @property
    def out_w(self) -> int:
        return (self.in_w + 2 * self.pad - self.kernel) // self.stride + 1

    @property
    def out_h(self) -> int:
        return (self.in_h + 2 * self.pad - self.kernel) // self.stride + 1

    @property
    def depthwise(self) -> bool:
        return self.conv_type == "depthwise"

    @property
    def mode(self) -> str:
        return self.conv_type

    @property
    def input_shape(self) -> tuple:
        return (self.in_c, self.in_h, self.in_w)

    @property
    def weight_shape(self) -> tuple:
        return (self.out_c, 1 if self.depthwise else self.in_c, self.kernel, self.kernel)

    @property
    def output_shape(self) -> tuple:
        return (self.out_c, self.out_h, self.out_w)

    @property
    def macs(self) -> int:
        """MAC count of the layer (one op per MAC, padding taps included)."""
        per_out = self.kernel ** 2 * (1 if self.depthwise else self.in_c)
        return self.out_w * self.out_h * self.out_c * per_out


def same_pad_config(kernel, stride, in_w, in_h, in_c, out_c, conv_type="standard",
                    name="") -> LayerConfig:
    return LayerConfig(kernel, stride, in_w, in_h, in_c, out_c, conv_type,
                       pad=kernel // 2 if kernel % 2 else 0, name=name)


# --------------------------------------------------------------------------- #
# Cycle records
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Route:
    """One adder-net-1 output for one cycle.

    The value is the sum of ``psums`` over ``matrices`` plus, if ``pop`` is set,
    the word taken from that register lane.  It goes to register lane ``push``
    if set, otherwise into the channel accumulator at ``dest``.
    """

    psums: tuple
    matrices: tuple
    dest: tuple
    pop: tuple | None = None
    push: tuple | None = None


@dataclass(frozen=True, eq=False)
class TileCycle:
    """Everything the PE grid does in one model cycle.

    Input of PE (m, r, c) is ``(in_chan[m, c], in_row[r, c], in_col[r, c])``;
    thread j of that PE multiplies it by weight
    ``(w_filter[m, j], w_chan[m, c], w_krow[r, c, j], w_kcol[r, c, j])``.
    A negative channel, filter or kernel index means the slot is idle.
    """

    index: int
    matrices: tuple
    in_chan: np.ndarray
    in_row: np.ndarray
    in_col: np.ndarray
    w_filter: np.ndarray
    w_chan: np.ndarray
    w_krow: np.ndarray
    w_kcol: np.ndarray
    routes: tuple

    @property
    def weight_broadcast(self):
        return self.w_krow, self.w_kcol

    @property
    def an1_config(self) -> dict:
        """dest -> psum indices for values that reach the accumulator this cycle."""
        return {(r.matrices, r.dest): r.psums for r in self.routes if r.push is None}

    @property
    def defer_set(self) -> frozenset:
        return frozenset(i for r in self.routes if r.push is not None for i in r.psums)

    @property
    def consume_set(self) -> frozenset:
        return frozenset(i for r in self.routes
                         if r.pop is not None and r.push is None for i in r.psums)

    def routed_mask(self) -> np.ndarray:
        """(M, 18) bool: psums of each active matrix that feed some route."""
        mask = np.zeros((len(self.matrices), PSUMS_PER_MATRIX), bool)
        slot = {m: i for i, m in enumerate(self.matrices)}
        for r in self.routes:
            for m in r.matrices:
                mask[slot[m], list(r.psums)] = True
        return mask

    def useful_mask(self) -> np.ndarray:
        """(M, 6, 3, 3) bool: thread slots holding a product of some layer output."""
        weight_ok = (self.w_krow >= 0)[None] & (self.w_filter >= 0)[:, None, None, :] \
            & (self.w_chan >= 0)[:, None, :, None] & (self.in_chan >= 0)[:, None, :, None]
        routed = self.routed_mask().reshape(-1, PE_ROWS, 1, THREADS)
        return weight_ok & routed

    def useful_ops(self) -> int:
        return int(np.count_nonzero(self.useful_mask()))

    def deferred_psums(self) -> int:
        """Psums per matrix whose value is parked in a register this cycle."""
        counts = defaultdict(int)
        for r in self.routes:
            if r.push is not None:
                for m in r.matrices:
                    counts[m] += len(r.psums)
        return max(counts.values(), default=0)

    def deferred_words(self) -> int:
        counts = defaultdict(int)
        for r in self.routes:
            if r.push is not None:
                counts[r.matrices] += 1
        return max(counts.values(), default=0)


class BoundaryRegister:
    """Variable-length FIFO of psum words."""

    def __init__(self, max_len: int):
        self.max_len = max_len
        self._q = deque()
        self.peak = 0

    def __len__(self):
        return len(self._q)

    def push(self, value):
        if len(self._q) >= self.max_len:
            raise RegisterError(f"boundary register overflow (max {self.max_len})")
        self._q.append(value)
        self.peak = max(self.peak, len(self._q))

    def pop(self):
        if not self._q:
            raise RegisterError("boundary register underflow")
        return self._q.popleft()


def boundary_defer(reg: BoundaryRegister, psums, defer_set) -> None:
    """Push the sum of ``psums[i] for i in defer_set`` as one word."""
    reg.push(int(sum(psums[i] for i in sorted(defer_set))))


def boundary_consume(reg: BoundaryRegister, psums, consume_set) -> int:
    """Pop one word and add the consuming cycle's psums to it."""
    return reg.pop() + int(sum(psums[i] for i in sorted(consume_set)))


class ChannelAccumulator:
    """Running psum per output position, saturating at the accumulator width."""

    def __init__(self, shape, fmt: PsumFormat):
        self.fmt = fmt
        self.values = np.zeros(shape, dtype=np.int64)

    def reset(self):
        self.values[...] = 0

    def add(self, dest, value):
        self.values[dest] = min(max(int(self.values[dest]) + int(value), self.fmt.acc_min),
                                self.fmt.acc_max)


# --------------------------------------------------------------------------- #
# Schedules
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class _Chunk:
    """Matrix-independent part of one cycle within a sweep."""

    in_row: np.ndarray
    in_col: np.ndarray
    w_krow: np.ndarray
    w_kcol: np.ndarray
    routes: tuple  # (psums, (y, x), pop_lane, push_lane)


class Schedule:
    """Ordered tile-cycles for one layer.

    A schedule is a sequence of *sweeps* (one per filter and channel pass, or
    per channel pass for depthwise/1x1 layers), each replaying the same chunk
    template with different channels and filters.
    """

    kind = "base"

    def __init__(self, cfg: LayerConfig):
        self.cfg = cfg
        self._template = None

    # ---- sizes -------------------------------------------------------------
    @property
    def channels_per_matrix(self) -> int:
        return 1

    @property
    def channels_per_pass(self) -> int:
        return MATRICES * self.channels_per_matrix

    @property
    def passes(self) -> int:
        return math.ceil(self.cfg.in_c / self.channels_per_pass)

    @property
    def active_matrices(self) -> int:
        return min(MATRICES, math.ceil(self.cfg.in_c / self.channels_per_matrix))

    @property
    def num_sweeps(self) -> int:
        if self.cfg.depthwise:
            return self.passes
        return self.passes * self.filter_groups

    @property
    def filter_groups(self) -> int:
        return self.cfg.out_c

    @property
    def cycles_per_sweep(self) -> int:
        raise NotImplementedError

    @property
    def num_cycles(self) -> int:
        return self.num_sweeps * self.cycles_per_sweep

    def __len__(self):
        return self.num_cycles

    @property
    def useful_ops(self) -> int:
        return self.cfg.macs

    @property
    def register_lanes(self) -> dict:
        return {}

    # ---- template ----------------------------------------------------------
    @property
    def template(self) -> list:
        if self._template is None:
            tpl = self._build_template()
            if len(tpl) != self.cycles_per_sweep:
                raise ScheduleError(f"template has {len(tpl)} chunks, expected "
                                    f"{self.cycles_per_sweep}")
            _check_template(tpl)
            self._template = tpl
        return self._template

    def _build_template(self) -> list:
        raise NotImplementedError

    def _sweeps(self):
        """Yield (filter_or_group, pass) in execution order."""
        if self.cfg.depthwise:
            for q in range(self.passes):
                yield None, q
        else:
            for f in range(self.filter_groups):
                for q in range(self.passes):
                    yield f, q

    def _pass_channels(self, q) -> np.ndarray:
        """(M, 3) input channel per matrix and PE column for pass q."""
        cpm = self.channels_per_matrix
        base = q * self.channels_per_pass
        m = np.arange(MATRICES)[:, None]
        c = np.arange(PE_COLS)[None, :]
        ch = base + m * cpm + (c if cpm == PE_COLS else 0 * c)
        ch = np.where(ch < self.cfg.in_c, ch, -1)
        active = [i for i in range(MATRICES) if ch[i, 0] >= 0]
        return ch[active], tuple(active)

    def _thread_filters(self, group, chans) -> np.ndarray:
        """(M, 3) filter per matrix and thread."""
        if self.cfg.depthwise:
            return np.repeat(chans[:, :1], THREADS, axis=1)
        return np.full((len(chans), THREADS), group)

    def __iter__(self) -> Iterator[TileCycle]:
        tpl = self.template
        index = 0
        for group, q in self._sweeps():
            chans, mats = self._pass_channels(q)
            filters = self._thread_filters(group, chans)
            w_chan = np.zeros_like(chans) if self.cfg.depthwise else chans
            for chunk in tpl:
                routes = self._bind_routes(chunk.routes, group, chans, mats, filters)
                yield TileCycle(index, mats, chans, chunk.in_row, chunk.in_col,
                                filters, w_chan, chunk.w_krow, chunk.w_kcol, routes)
                index += 1

    def _bind_routes(self, routes, group, chans, mats, filters):
        out = []
        if self.cfg.depthwise:
            for i, m in enumerate(mats):
                for psums, (y, x), pop, push in routes:
                    out.append(Route(psums, (m,), (int(chans[i, 0]), y, x),
                                     pop and pop + (m,), push and push + (m,)))
        else:
            for psums, (y, x), pop, push in routes:
                out.append(Route(psums, mats, (group, y, x), pop, push))
        return tuple(out)

    def computed_ops(self) -> int:
        """Useful thread slots summed over every cycle (iterates the schedule)."""
        return sum(tc.useful_ops() for tc in self)


def _check_template(tpl):
    """Each psum feeds at most one route; register lanes behave as FIFOs."""
    lanes = defaultdict(deque)
    for t, chunk in enumerate(tpl):
        seen = set()
        for psums, _, _, _ in chunk.routes:
            if seen & set(psums):
                raise ScheduleError(f"chunk {t}: psum routed twice")
            seen |= set(psums)
        for psums, dest, pop, push in chunk.routes:
            if pop is not None:
                if not lanes[pop] or lanes[pop][0] != dest:
                    raise ScheduleError(f"chunk {t}: lane {pop} out of order for {dest}")
                lanes[pop].popleft()
        for psums, dest, pop, push in chunk.routes:
            if push is not None:
                lanes[push].append(dest)
    leftover = {k: len(v) for k, v in lanes.items() if v}
    if leftover:
        raise ScheduleError(f"registers not drained at end of sweep: {leftover}")


class SectorSchedule(Schedule):
    """3x3 convolution over streamed 6-row column sectors."""

    kind = "3x3"

    def __init__(self, cfg):
        super().__init__(cfg)
        k, s, p = cfg.kernel, cfg.stride, cfg.pad
        # rows above the plane are padding and never streamed
        self.rows = min(cfg.in_h, s * (cfg.out_h - 1) + k - p)
        self.full_sectors = self.rows // PE_ROWS
        self.rem_rows = self.rows - PE_ROWS * self.full_sectors

    @property
    def cycles_per_sweep(self) -> int:
        ow = self.cfg.out_w
        return self.full_sectors * ow + math.ceil(self.rem_rows * ow / PE_ROWS)

    @property
    def register_lanes(self) -> dict:
        return {"boundary": self.cfg.in_w, "carry": 4}

    def stream(self):
        """(x, row) per streamed element, in PE-row order."""
        ow = self.cfg.out_w
        for sec in range(self.full_sectors):
            for x in range(ow):
                for i in range(PE_ROWS):
                    yield x, sec * PE_ROWS + i
        base = self.full_sectors * PE_ROWS
        for x in range(ow):
            for i in range(self.rem_rows):
                yield x, base + i

    def _build_template(self):
        cfg = self.cfg
        s, p = cfg.stride, cfg.pad
        elems = list(self.stream())
        chunks = [elems[i:i + PE_ROWS] for i in range(0, len(elems), PE_ROWS)]
        # output -> [(chunk, psum index)]
        parts = defaultdict(list)
        for t, chunk in enumerate(chunks):
            for r, (x, row) in enumerate(chunk):
                for j in range(THREADS):
                    num = row + p - j
                    if num % s == 0 and 0 <= num // s < cfg.out_h:
                        parts[(num // s, x)].append((t, PSUMS_PER_MATRIX and 3 * r + j))
        routes = [[] for _ in chunks]
        for (y, x), pl in sorted(parts.items(), key=lambda kv: (kv[1][0][0], kv[0])):
            by_chunk = defaultdict(list)
            for t, i in pl:
                by_chunk[t].append(i)
            ts = sorted(by_chunk)
            for n, t in enumerate(ts):
                pop = push = None
                if n > 0:
                    prev = ts[n - 1]
                    pop = ("carry" if t == prev + 1 else "boundary", y % 2)
                if n + 1 < len(ts):
                    push = ("carry" if ts[n + 1] == t + 1 else "boundary", y % 2)
                routes[t].append((tuple(sorted(by_chunk[t])), (y, x), pop, push))
        tpl = []
        kcol = np.broadcast_to(np.arange(PE_COLS)[None, :, None], (PE_ROWS, PE_COLS, THREADS))
        krow = np.broadcast_to(np.arange(THREADS)[None, None, :], (PE_ROWS, PE_COLS, THREADS))
        for t, chunk in enumerate(chunks):
            in_row = np.full((PE_ROWS, PE_COLS), IDLE)
            in_col = np.full((PE_ROWS, PE_COLS), IDLE)
            live = np.zeros((PE_ROWS, 1, 1), bool)
            for r, (x, row) in enumerate(chunk):
                in_row[r, :] = row
                in_col[r, :] = s * x - p + np.arange(PE_COLS)
                live[r] = True
            tpl.append(_Chunk(in_row, in_col, np.where(live, krow, -1),
                              np.where(live, kcol, -1),
                              tuple(sorted(routes[t], key=lambda rt: (rt[1][1], rt[1][0])))))
        return tpl

    @property
    def skipped_pad_ops(self) -> int:
        """Padding taps on rows that are never streamed (counted as MACs, not run)."""
        cfg = self.cfg
        skipped_taps = 0
        for y in range(cfg.out_h):
            for j in range(cfg.kernel):
                row = cfg.stride * y - cfg.pad + j
                if row < 0 or row >= self.rows:
                    skipped_taps += 1
        per_row_tap = cfg.out_w * cfg.kernel * cfg.out_c * (1 if cfg.depthwise else cfg.in_c)
        return skipped_taps * per_row_tap


class PointwiseSchedule(Schedule):
    """1x1 convolution: 3 channels per matrix, 6 positions x 3 filters per cycle."""

    kind = "1x1"

    def __init__(self, cfg):
        if cfg.depthwise:
            raise ConfigError("depthwise 1x1 layers are not supported")
        super().__init__(cfg)
        s = cfg.stride
        # stride-2 layers stream input columns densely; odd columns are discarded
        self.row_len = s * (cfg.out_w - 1) + 1
        self.elements = cfg.out_h * self.row_len
        self.chunks = math.ceil(self.elements / PE_ROWS)

    @property
    def channels_per_matrix(self) -> int:
        return PE_COLS

    @property
    def filter_groups(self) -> int:
        return math.ceil(self.cfg.out_c / THREADS)

    @property
    def num_sweeps(self) -> int:
        return self.passes

    @property
    def cycles_per_sweep(self) -> int:
        return self.chunks * self.filter_groups

    def _sweeps(self):
        for q in range(self.passes):
            yield None, q

    def _build_template(self):
        cfg = self.cfg
        s = cfg.stride
        tpl = []
        for g in range(self.chunks):
            for fg in range(self.filter_groups):
                in_row = np.full((PE_ROWS, PE_COLS), IDLE)
                in_col = np.full((PE_ROWS, PE_COLS), IDLE)
                krow = np.full((PE_ROWS, PE_COLS, THREADS), -1)
                routes = []
                for r in range(PE_ROWS):
                    e = g * PE_ROWS + r
                    if e >= self.elements:
                        continue
                    y, xi = divmod(e, self.row_len)
                    in_row[r, :] = s * y
                    in_col[r, :] = xi
                    krow[r] = 0
                    if xi % s:
                        continue
                    for j in range(THREADS):
                        f = fg * THREADS + j
                        if f < cfg.out_c:
                            routes.append(((3 * r + j,), (f, y, xi // s), None, None))
                tpl.append(_Chunk(in_row, in_col, krow, krow.copy(), tuple(routes)))
        return tpl

    def __iter__(self):
        tpl = self.template
        index = 0
        fgs = self.filter_groups
        for _, q in self._sweeps():
            chans, mats = self._pass_channels(q)
            w_chan = chans
            for t, chunk in enumerate(tpl):
                fg = t % fgs
                f = fg * THREADS + np.arange(THREADS)
                filters = np.broadcast_to(np.where(f < self.cfg.out_c, f, -1),
                                          (len(mats), THREADS))
                routes = tuple(Route(psums, mats, dest) for psums, dest, _, _ in chunk.routes)
                yield TileCycle(index, mats, chans, chunk.in_row, chunk.in_col,
                                filters, w_chan, chunk.w_krow, chunk.w_kcol, routes)
                index += 1


class WindowSchedule(Schedule):
    """4x4 and 5x5: each output column takes two phases over kernel columns."""

    kind = "window"

    def __init__(self, cfg):
        super().__init__(cfg)
        k, s = cfg.kernel, cfg.stride
        self.rows_per_sector = (PE_ROWS - k) // s + 1
        self.sectors = math.ceil(cfg.out_h / self.rows_per_sector)
        self.phases = math.ceil(k / PE_COLS)
        self.assign = {}
        used = set()
        for yl in range(self.rows_per_sector):
            for kr in range(k):
                r, j = s * yl + kr, kr % THREADS
                if (r, j) in used:
                    raise ScheduleError(f"thread clash at PE row {r} thread {j}")
                used.add((r, j))
                self.assign[(yl, kr)] = (r, j)

    @property
    def cycles_per_sweep(self) -> int:
        return self.sectors * self.cfg.out_w * self.phases

    def psum_groups(self) -> dict:
        """Local output row -> psum indices (adder net 1 wiring, 0-based)."""
        return {yl: tuple(3 * self.assign[(yl, kr)][0] + self.assign[(yl, kr)][1]
                          for kr in range(self.cfg.kernel))
                for yl in range(self.rows_per_sector)}

    def _build_template(self):
        cfg = self.cfg
        k, s, p = cfg.kernel, cfg.stride, cfg.pad
        R = self.rows_per_sector
        groups = self.psum_groups()
        tpl = []
        for sec in range(self.sectors):
            row0 = s * sec * R - p
            for x in range(cfg.out_w):
                for ph in range(self.phases):
                    in_row = np.full((PE_ROWS, PE_COLS), IDLE)
                    in_col = np.full((PE_ROWS, PE_COLS), IDLE)
                    krow = np.full((PE_ROWS, PE_COLS, THREADS), -1)
                    kcol = np.full((PE_ROWS, PE_COLS, THREADS), -1)
                    routes = []
                    for yl in range(R):
                        y = sec * R + yl
                        if y >= cfg.out_h:
                            continue
                        for kr in range(k):
                            r, j = self.assign[(yl, kr)]
                            in_row[r, :] = row0 + r
                            for c in range(PE_COLS):
                                kc = ph * PE_COLS + c
                                if kc < k:
                                    in_col[r, c] = s * x - p + kc
                                    krow[r, c, j] = kr
                                    kcol[r, c, j] = kc
                        routes.append((tuple(sorted(groups[yl])), (y, x), None, None))
                    tpl.append(_Chunk(in_row, in_col, krow, kcol, tuple(routes)))
        return tpl


def schedule_3x3(cfg: LayerConfig) -> SectorSchedule:
    if cfg.kernel != 3:
        raise ConfigError("schedule_3x3 needs kernel 3")
    return SectorSchedule(cfg)


def schedule_1x1(cfg: LayerConfig) -> PointwiseSchedule:
    if cfg.kernel != 1:
        raise ConfigError("schedule_1x1 needs kernel 1")
    return PointwiseSchedule(cfg)


def schedule_4x4(cfg: LayerConfig) -> WindowSchedule:
    if cfg.kernel != 4:
        raise ConfigError("schedule_4x4 needs kernel 4")
    return WindowSchedule(cfg)


def schedule_5x5(cfg: LayerConfig) -> WindowSchedule:
    if cfg.kernel != 5:
        raise ConfigError("schedule_5x5 needs kernel 5")
    return WindowSchedule(cfg)


_PLANNERS = {1: schedule_1x1, 3: schedule_3x3, 4: schedule_4x4, 5: schedule_5x5}


def plan_layer(cfg: LayerConfig) -> Schedule:
    if cfg.kernel not in SUPPORTED_KERNELS:
        raise ConfigError(f"kernel {cfg.kernel} unsupported (use {SUPPORTED_KERNELS})")
    if cfg.stride not in SUPPORTED_STRIDES:
        raise ConfigError(f"stride {cfg.stride} unsupported")
    return _PLANNERS[cfg.kernel](cfg)


# --------------------------------------------------------------------------- #
# Pooling and traces
# --------------------------------------------------------------------------- #

def avg_pool_layer(kernel: int, stride: int, in_w: int, in_h: int, channels: int,
                   params: QuantParams = ACCEL_PARAMS, name: str = "avgpool"):
    """Average pooling as a depthwise convolution with log-quantized 1/k^2 weights."""
    if kernel == 1:
        raise ConfigError("1x1 average pooling is the identity")
    cfg = LayerConfig(kernel, stride, in_w, in_h, channels, channels, "depthwise", 0, name)
    weights = log_quantize_array(np.full(cfg.weight_shape, 1.0 / kernel ** 2), params)
    return cfg, weights


def _lane(l):
    if l is None:
        return ""
    tag = "B" if l[0] == "boundary" else "C"
    return tag + ".".join(str(v) for v in l[1:])


def format_route(r: Route) -> str:
    terms = "+".join(f"o{i + 1}" for i in r.psums)
    mats = ",".join(str(m) for m in r.matrices)
    src = f"{_lane(r.pop)}+" if r.pop else ""
    dst = _lane(r.push) if r.push else "acc[{}]".format(",".join(str(v) for v in r.dest))
    return f"{src}{terms}@m{mats}->{dst}"


def format_cycle(tc: TileCycle) -> str:
    def coords(a):
        return ",".join("-" if v == IDLE else str(v) for v in a)

    rows = coords(tc.in_row[:, 0])
    cols = coords(tc.in_col[:, 0])
    chans = ",".join(str(int(c)) for c in tc.in_chan[:, 0])
    filt = ",".join(sorted({str(int(f)) for f in tc.w_filter.ravel() if f >= 0}))
    routes = " ".join(format_route(r) for r in tc.routes)
    return (f"{tc.index} mats={','.join(map(str, tc.matrices))} ch={chans} f={filt} "
            f"rows={rows} col0={cols} useful={tc.useful_ops()} | {routes}")


TRACE_VERSION = 1


def format_trace(schedule: Schedule, limit: int | None = None) -> list:
    cfg = schedule.cfg
    lines = [f"# schedule-trace v{TRACE_VERSION} name={cfg.name or '-'} kind={schedule.kind} "
             f"kernel={cfg.kernel} stride={cfg.stride} pad={cfg.pad} in={cfg.in_c}x{cfg.in_h}x"
             f"{cfg.in_w} out={cfg.out_c}x{cfg.out_h}x{cfg.out_w} type={cfg.conv_type} "
             f"cycles={schedule.num_cycles}"]
    for tc in schedule:
        if limit is not None and tc.index >= limit:
            lines.append(f"# ... {schedule.num_cycles - limit} more cycles")
            break
        lines.append(format_cycle(tc))
    return lines
