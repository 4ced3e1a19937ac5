"""
Randomised property driver: oracle equivalence plus schedule invariants.

Used by ``lognpu verify`` and the test-suite.  Everything is seeded, so a
failing (seed, trial) pair reproduces exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataflow import IDLE, LayerConfig, Schedule, SectorSchedule, plan_layer
from .errors import ConfigError
from .grid import ConvCore, post_process, run_layer
from .quantizer import LogArray, log_quantize_array
from .reference import conv2d_quant_oracle

MAX_SPATIAL = 32
MAX_CHANNELS = 18
MAX_FILTERS = 12


def random_config(rng: np.random.Generator) -> LayerConfig:
    k = int(rng.choice([1, 3, 4, 5]))
    s = int(rng.integers(1, 3))
    if k == 1:
        ctype = "pointwise"
    else:
        ctype = "depthwise" if rng.random() < 0.3 else "standard"
    pad = int(rng.integers(0, k // 2 + 1))
    c = int(rng.integers(1, MAX_CHANNELS + 1))
    p = c if ctype == "depthwise" else int(rng.integers(1, MAX_FILTERS + 1))
    lo = max(1, k - 2 * pad)
    h = int(rng.integers(lo, MAX_SPATIAL + 1))
    w = int(rng.integers(lo, MAX_SPATIAL + 1))
    return LayerConfig(k, s, w, h, c, p, ctype, pad)


def random_operands(cfg: LayerConfig, rng: np.random.Generator, sparsity: float = 0.2):
    """Non-negative activations (post-ReLU) and signed weights, log-coded."""
    x = np.abs(rng.normal(size=cfg.input_shape)) * 2.0
    x *= rng.random(cfg.input_shape) >= sparsity
    w = rng.normal(size=cfg.weight_shape) * rng.choice([0.1, 0.5, 2.0])
    w *= rng.random(cfg.weight_shape) >= sparsity / 2
    return log_quantize_array(x), log_quantize_array(w)


def first_mismatch(a: np.ndarray, b: np.ndarray):
    diff = np.argwhere(np.asarray(a) != np.asarray(b))
    return tuple(int(v) for v in diff[0]) if len(diff) else None


def coverage_check(schedule: Schedule) -> list:
    """Every (filter, channel, y, x, ky, kx) product occupies exactly one slot.

    Taps on never-streamed padding rows of 3x3 layers are the only products
    allowed to be missing.
    """
    cfg = schedule.cfg
    s, p = cfg.stride, cfg.pad
    problems = []
    seen = set()
    for tc in schedule:
        useful = tc.useful_mask()
        dest = {}
        for r in tc.routes:
            for m in r.matrices:
                for i in r.psums:
                    dest[(m, i)] = r.dest
        for mi, r, c, j in np.argwhere(useful):
            m = tc.matrices[mi]
            f, y, x = dest[(m, 3 * int(r) + int(j))]
            ky, kx = int(tc.w_krow[r, c, j]), int(tc.w_kcol[r, c, j])
            ch = int(tc.in_chan[mi, c])
            if int(tc.w_filter[mi, j]) != f:
                problems.append(f"cycle {tc.index}: weight filter differs from route filter")
            if (int(tc.in_row[r, c]), int(tc.in_col[r, c])) != (s * y - p + ky, s * x - p + kx):
                problems.append(f"cycle {tc.index}: PE ({m},{r},{c}) input does not match "
                                f"tap ({ky},{kx}) of output ({y},{x})")
            key = (f, ch, y, x, ky, kx)
            if key in seen:
                problems.append(f"product {key} computed twice")
            seen.add(key)
        if len(problems) > 10:
            return problems
    k = cfg.kernel
    rows = schedule.rows if isinstance(schedule, SectorSchedule) else None
    expected = 0
    for f in range(cfg.out_c):
        chans = [f] if cfg.depthwise else range(cfg.in_c)
        for ch in chans:
            for y in range(cfg.out_h):
                for ky in range(k):
                    row = s * y - p + ky
                    if rows is not None and not 0 <= row < rows:
                        continue
                    expected += cfg.out_w * k
                    for x in range(cfg.out_w):
                        for kx in range(k):
                            if (f, ch, y, x, ky, kx) not in seen:
                                problems.append(f"product {(f, ch, y, x, ky, kx)} never computed")
                                return problems
    if expected != len(seen):
        problems.append(f"{len(seen)} products computed, {expected} expected")
    return problems


@dataclass
class TrialResult:
    cfg: LayerConfig
    ok: bool
    problems: list = field(default_factory=list)


def check_config(cfg: LayerConfig, seed: int, core: ConvCore | None = None,
                 invariants: bool = True) -> TrialResult:
    rng = np.random.default_rng(seed)
    x, w = random_operands(cfg, rng)
    core = core or ConvCore()
    problems = []
    run = run_layer(core, cfg, x, w)
    ref = conv2d_quant_oracle(x, w, cfg.kernel, cfg.stride, cfg.mode, cfg.pad,
                              core.params, core.fmt)
    bad = first_mismatch(run.psums, ref)
    if bad is not None:
        problems.append(f"psum mismatch at (filter, y, x)={bad}: "
                        f"core {int(run.psums[bad])} oracle {int(ref[bad])}")
    if not run.output.equals(post_process(ref, core.log_table)):
        problems.append("post-processed codes differ from oracle")
    sched = plan_layer(cfg)
    if run.metrics.cycles != sched.num_cycles:
        problems.append("executed cycles differ from planned schedule length")
    if invariants:
        computed = sched.computed_ops()
        skipped = sched.skipped_pad_ops if isinstance(sched, SectorSchedule) else 0
        if computed + skipped != cfg.macs:
            problems.append(f"conservation: {computed} + {skipped} != {cfg.macs} MACs")
        problems += coverage_check(sched)
    return TrialResult(cfg, not problems, problems)


_SHRINK_FIELDS = ("in_w", "in_h", "in_c", "out_c")


def minimize(cfg: LayerConfig, seed: int, core_factory) -> LayerConfig:
    """Greedily shrink a failing config while it keeps failing."""

    def fails(c):
        try:
            return not check_config(c, seed, core_factory(), invariants=False).ok
        except ConfigError:
            return False

    changed = True
    while changed:
        changed = False
        for name in _SHRINK_FIELDS + ("pad",):
            cur = getattr(cfg, name)
            for smaller in (cur // 2, cur - 1):
                if smaller < (0 if name == "pad" else 1) or smaller == cur:
                    continue
                kw = {name: smaller}
                if cfg.depthwise and name in ("in_c", "out_c"):
                    kw = {"in_c": smaller, "out_c": smaller}
                try:
                    cand = replace(cfg, **kw)
                except ConfigError:
                    continue
                if fails(cand):
                    cfg, changed = cand, True
                    break
    return cfg


@dataclass
class VerifyReport:
    seed: int
    trials: int
    failures: list = field(default_factory=list)
    minimized: LayerConfig | None = None

    @property
    def passed(self) -> bool:
        return not self.failures


def run_verify(seed: int = 1, trials: int = 100, fault=None, invariants_every: int = 5,
               parallel_every: int = 4, progress=None) -> VerifyReport:
    """Random configs; every ``invariants_every``-th trial also checks coverage."""
    rng = np.random.default_rng(seed)
    report = VerifyReport(seed, trials)

    def make_core(parallel=False):
        return ConvCore(fault=fault, parallel=parallel)

    for t in range(trials):
        cfg = random_config(rng)
        trial_seed = int(rng.integers(2**31))
        core = make_core(parallel=parallel_every > 0 and t % parallel_every == 0)
        res = check_config(cfg, trial_seed, core,
                           invariants=invariants_every > 0 and t % invariants_every == 0)
        if progress is not None:
            progress(t, res)
        if not res.ok:
            report.failures.append((t, trial_seed, res))
            if report.minimized is None:
                report.minimized = minimize(cfg, trial_seed, make_core)
            break
    return report
