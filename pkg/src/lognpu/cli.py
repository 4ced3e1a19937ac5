"""
Command-line front end.

    lognpu quantize IN.tns OUT.tns [--kind weight|activation]
    lognpu simulate NET [--weights-dir D] [--input X.tns | --random] [--verify]
                        [--csv PATH] [--out DIR] [--trace DIR] [--clock-mhz F]
                        [--sram-kb K] [--seed S] [--no-figures]
    lognpu verify [--seed S] [--trials N] [--inject-fault]
    lognpu trace NET [--layer NAME] [--limit N]

Exit codes: 0 ok, 2 parse/IO error, 3 shape/config error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .dataflow import format_trace, plan_layer
from .errors import ConfigError, DescriptorError, ScheduleError, ShapeError
from .formats import (BUNDLED, KIND_LOG_ACT, KIND_LOG_WEIGHT, KIND_REAL, bundled_descriptor,
                      load_descriptor, read_tensor, write_tensor)
from .grid import ConvCore, SramModel, post_process, run_layer, wiring_fault
from .metrics import (REFERENCE_AVG_UTILIZATION, VGG16_REFERENCE_MS, NetworkReport,
                      network_report)
from .quantizer import ACCEL_PARAMS, LogArray, QuantParams, log_quantize_array, quant_error_stats
from .reference import conv2d_quant_oracle
from .verify import first_mismatch, random_operands, run_verify

EXIT_OK, EXIT_PARSE, EXIT_SHAPE, EXIT_VERIFY = 0, 2, 3, 4
CSV_VERSION = 1

log = logging.getLogger("lognpu")


class VerificationError(Exception):
    pass


def _descriptor(arg: str):
    if arg in BUNDLED and not Path(arg).exists():
        return bundled_descriptor(arg)
    return load_descriptor(arg)


def max_pool_codes(x: LogArray, factor: int) -> LogArray:
    """Max pooling on non-negative log codes (order-preserving, no requantization)."""
    c, h, w = x.shape
    h2, w2 = h // factor, w // factor
    val = np.where(x.zero, np.iinfo(np.int16).min, x.code).astype(np.int32)
    val = val[:, :h2 * factor, :w2 * factor].reshape(c, h2, factor, w2, factor).max(axis=(2, 4))
    zero = val == np.iinfo(np.int16).min
    return LogArray(np.ones(val.shape, np.int8), np.where(zero, 0, val).astype(np.int16), zero)


# ---- quantize -------------------------------------------------------------------

def cmd_quantize(args) -> int:
    kind, data = read_tensor(args.input)
    if kind != KIND_REAL:
        raise DescriptorError(f"{args.input}: expected a real-valued tensor")
    params = QuantParams(args.m, args.n, args.base) if args.base else QuantParams(args.m, args.n)
    if args.kind == "activation" and np.any(data < 0):
        raise ShapeError("activation tensors must be non-negative (apply ReLU first)")
    codes = log_quantize_array(data, params)
    out_kind = KIND_LOG_WEIGHT if args.kind == "weight" else KIND_LOG_ACT
    write_tensor(args.output, codes, out_kind)
    if data.size:
        st = quant_error_stats(data, params)
        print(f"elements {st.count}  max_rel_err {st.max_rel_err:.6f}  "
              f"mean_rel_err {st.mean_rel_err:.6f}")
    else:
        print("elements 0")
    return EXIT_OK


# ---- simulate -------------------------------------------------------------------

def _layer_operands(cfg, x, args, rng):
    """Chained input ``x`` (or random), weights from --weights-dir (or random)."""
    rx, w = random_operands(cfg, rng) if args.random else (None, None)
    if x is None:
        x = rx
    if args.weights_dir:
        kind, w = read_tensor(Path(args.weights_dir) / f"{cfg.name}.tns")
        if kind != KIND_LOG_WEIGHT:
            raise DescriptorError(f"{cfg.name}.tns: expected log-weight tensor")
    if x is None or w is None:
        raise DescriptorError(f"layer {cfg.name}: need --input/--weights-dir or --random")
    return x, w


def _write_csv(path, report: NetworkReport, extra_cols=None):
    rows = [m.as_row() for m in report.layers]
    for row, extra in zip(rows, extra_cols or [{}] * len(rows)):
        row.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# lognpu-report v{CSV_VERSION} network={report.name}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return path


def cmd_simulate(args) -> int:
    net = _descriptor(args.descriptor)
    clock = args.clock_mhz * 1e6
    sram = SramModel.from_kb(args.sram_kb) if args.sram_kb else SramModel()
    tensors = bool(args.random or args.input or args.weights_dir)
    if args.verify and not tensors:
        raise DescriptorError("--verify needs tensors (--input/--weights-dir or --random)")

    report = network_report(net.configs, clock, net.name, sram)
    extra = [{} for _ in net.layers]
    if tensors:
        core = ConvCore(clock_hz=clock, sram=sram)
        rng = np.random.default_rng(args.seed)
        inputs = None
        if args.input:
            kind, inputs = read_tensor(args.input)
            if kind != KIND_LOG_ACT:
                raise DescriptorError(f"{args.input}: expected log-activation tensor")
        outputs = {}
        prev = None
        for i, layer in enumerate(net.layers):
            key = layer.source or prev
            x = outputs[key] if key else inputs
            if x is not None and layer.pool > 1:
                x = max_pool_codes(x, layer.pool)
            x, w = _layer_operands(layer.cfg, x, args, rng)
            run = run_layer(core, layer.cfg, x, w)
            if run.metrics.cycles != report.layers[i].cycles:
                raise ScheduleError(f"{layer.name}: executed cycles differ from the model")
            extra[i] = {"deferred_psums_max": run.stats.max_deferred_psums,
                        "saturated": run.stats.saturated_products}
            if args.verify:
                cfg = layer.cfg
                ref = conv2d_quant_oracle(x, w, cfg.kernel, cfg.stride, cfg.mode, cfg.pad)
                bad = first_mismatch(run.psums, ref)
                if bad is not None or not run.output.equals(post_process(ref, core.log_table)):
                    raise VerificationError(
                        f"layer {layer.name}: mismatch at (filter, y, x)={bad}")
                extra[i]["verified"] = 1
            outputs[layer.name] = run.output
            prev = layer.name
            log.info("%s: %d cycles", layer.name, run.metrics.cycles)

    out_dir = Path(args.out) if args.out else (Path(args.csv).parent if args.csv else Path("."))
    csv_path = Path(args.csv) if args.csv else out_dir / f"{net.name}.csv"
    _write_csv(csv_path, report, extra)
    summary = report.summary()
    ref_util = REFERENCE_AVG_UTILIZATION.get(net.name)
    if ref_util is not None:
        summary += f"\n  published mean    {ref_util * 100:.0f}%"
    if net.name == "vgg16":
        summary += "\n  per-layer vs published latency (ms):"
        for m in report.layers:
            ref = VGG16_REFERENCE_MS.get(m.name)
            if ref:
                summary += (f"\n    {m.name:8s} {m.latency_s * 1e3:8.3f} {ref:8.2f} "
                            f"{(m.latency_s * 1e3 / ref - 1) * 100:+6.1f}%")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{net.name}_summary.txt").write_text(summary + "\n")
    print(summary)
    print(f"csv: {csv_path}")
    if not args.no_figures:
        from .plotting import latency_figure, utilization_figure

        f1 = utilization_figure(report, out_dir / f"{net.name}_utilization.png", ref_util)
        f2 = latency_figure(report, out_dir / f"{net.name}_latency.png",
                            VGG16_REFERENCE_MS if net.name == "vgg16" else None)
        print(f"figures: {f1} {f2}")
    if args.trace:
        tdir = Path(args.trace)
        tdir.mkdir(parents=True, exist_ok=True)
        for layer in net.layers:
            lines = format_trace(plan_layer(layer.cfg), limit=args.trace_limit)
            (tdir / f"{layer.name}.trace").write_text("\n".join(lines) + "\n")
        print(f"traces: {tdir}")
    return EXIT_OK


# ---- verify / trace -------------------------------------------------------------

def cmd_verify(args) -> int:
    if args.trials == 0:
        print("warning: 0 trials requested; nothing checked")
        return EXIT_OK
    fault = wiring_fault() if args.inject_fault else None

    def progress(t, res):
        log.info("trial %d %s %s", t, "ok" if res.ok else "FAIL", res.cfg)

    rep = run_verify(args.seed, args.trials, fault=fault, progress=progress)
    if rep.passed:
        print(f"verify: {rep.trials} trials passed (seed {rep.seed})")
        return EXIT_OK
    t, trial_seed, res = rep.failures[0]
    print(f"verify: FAILED at trial {t} (operand seed {trial_seed})")
    for p in res.problems[:5]:
        print(f"  {p}")
    print(f"  config:    {res.cfg}")
    print(f"  minimized: {rep.minimized}")
    return EXIT_VERIFY


def cmd_trace(args) -> int:
    net = _descriptor(args.descriptor)
    layers = [l for l in net.layers if args.layer in (None, l.name)]
    if not layers:
        raise DescriptorError(f"no layer named {args.layer!r}")
    for layer in layers:
        print("\n".join(format_trace(plan_layer(layer.cfg), limit=args.limit)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lognpu", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    q = sub.add_parser("quantize", help="log-quantize a real tensor file")
    q.add_argument("input")
    q.add_argument("output")
    q.add_argument("--kind", choices=("weight", "activation"), default="weight")
    q.add_argument("--m", type=int, default=ACCEL_PARAMS.m)
    q.add_argument("--n", type=int, default=ACCEL_PARAMS.n)
    q.add_argument("--base", type=float, default=None, help="log base (default sqrt 2)")
    q.set_defaults(func=cmd_quantize)

    s = sub.add_parser("simulate", help="run a network descriptor")
    s.add_argument("descriptor", help=f".net file or bundled name ({', '.join(BUNDLED)})")
    s.add_argument("--weights-dir")
    s.add_argument("--input", help="log-activation tensor for the first layer")
    s.add_argument("--random", action="store_true", help="random operands from --seed")
    s.add_argument("--verify", action="store_true", help="cross-check every layer")
    s.add_argument("--csv")
    s.add_argument("--out", help="directory for summary and figures")
    s.add_argument("--trace", metavar="DIR", help="write per-layer schedule traces")
    s.add_argument("--trace-limit", type=int, default=2000)
    s.add_argument("--clock-mhz", type=float, default=200.0)
    s.add_argument("--sram-kb", type=float, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="randomised oracle-equivalence driver")
    v.add_argument("--seed", type=int, default=1)
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--inject-fault", action="store_true", help="swap two psum wires")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("trace", help="print schedule traces")
    t.add_argument("descriptor")
    t.add_argument("--layer")
    t.add_argument("--limit", type=int, default=200)
    t.set_defaults(func=cmd_trace)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DescriptorError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (ShapeError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except (VerificationError, ScheduleError) as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
