"""Command-line entry point: ``calgate <command> [flags]``.

Every command writes its outputs atomically plus one ``<out>.manifest.json``
recording the argv needed to reproduce them (``calgate replay``).

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from dataclasses import asdict
from pathlib import Path

from . import __version__
from . import calibration, metrics, selective, simulator, synth
from .datamodel import DataError, atomic_write_text, load_dataset, save_dataset, split_by_stream
from .gate import DEFAULT_REFRACTORY_MS, GateConfig, GateError

MANIFEST_SCHEMA = "calgate.manifest/1"
SEED_ENV = "CALGATE_SEED"

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _read_map(source: str | None) -> calibration.CalibrationMap:
    if source is None or source == "identity":
        return calibration.IdentityMap()
    return calibration.load_map(source)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def _write_manifest(args, argv, outputs, config, started) -> None:
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": args.command,
        "argv": list(argv),
        "inputs": {k: str(v) for k, v in sorted(vars(args).items())
                   if k in ("data", "val", "map") and v is not None},
        "config": config,
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "outputs": [str(p) for p in outputs],
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    atomic_write_text(_sibling(Path(outputs[0]), ".manifest.json"), json.dumps(manifest, indent=2) + "\n")


def cmd_gen_synth(args):
    seed = args.seed if args.seed is not None else _default_seed()
    args.seed = seed
    params = dict(synth.FIXTURE) if args.fixture else {}
    overrides = {
        "k": args.k, "n_streams": args.n_streams, "ticks_per_stream": args.ticks_per_stream,
        "base_accuracy": args.base_accuracy, "overconfidence_scale": args.scale,
        "label_persistence": args.label_persistence,
        "prediction_persistence": args.prediction_persistence, "noise_sigma": args.noise_sigma,
    }
    params.update({k: v for k, v in overrides.items() if v is not None})
    cfg = synth.SynthConfig(seed=seed, **params)
    out = Path(args.out)
    save_dataset(synth.generate(cfg), out, args.format)
    sidecar = _sibling(out, ".synth.json")
    synth.write_sidecar(cfg, sidecar)
    return [out, sidecar], asdict(cfg)


def cmd_split(args):
    ds = load_dataset(args.data, args.format)
    seed = args.seed if args.seed is not None else _default_seed()
    args.seed = seed
    out = Path(args.out_prefix)
    suffix = Path(args.data).suffix
    paths = []
    for part in split_by_stream(ds, tuple(args.fractions), seed):
        path = out.with_name(f"{out.name}{part.split_tag}{suffix}")
        save_dataset(part, path, args.format)
        paths.append(path)
    return paths, {"fractions": list(args.fractions)}


def cmd_calibrate(args):
    val = load_dataset(args.val, args.format, split_tag="val")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", calibration.CalibrationWarning)
        try:
            cmap = calibration.fit(args.method, val)
        except ValueError as exc:
            raise ValueError(f"{args.method}: {exc}") from exc
    for w in caught:
        print(f"warning ({args.method}): {w.message}", file=sys.stderr)
    calibration.save_map(cmap, args.out)
    return [Path(args.out)], {"method": args.method, **cmap.to_dict()}


def cmd_eval(args):
    ds = load_dataset(args.data, args.format)
    rep = metrics.report(ds, _read_map(args.map), args.bins)
    out = Path(args.out)
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    rep.save(out, csv_path)
    return [out, csv_path], {"bins": args.bins}


def cmd_sweep(args):
    ds = load_dataset(args.data, args.format)
    curve = selective.sweep(ds, _read_map(args.map), args.taus, args.bins)
    curve.save(args.out)
    return [Path(args.out)], {"taus": list(args.taus), "bins": args.bins}


def _gate_args(args) -> tuple[list[float], float | None, GateConfig]:
    if (args.tau_on is None) != (args.tau_off is None):
        raise UsageError("--tau-on and --tau-off must be given together")
    if args.tau_on is not None:
        gate = GateConfig(args.tau_on, args.tau_off, args.refractory_ms)
        return [], None, gate
    return list(args.taus), args.band, GateConfig(0.0, 0.0, args.refractory_ms)


def cmd_simulate(args):
    ds = load_dataset(args.data, args.format)
    taus, band, gate = _gate_args(args)
    cfg = simulator.SimConfig(args.alpha, args.topk, gate, _read_map(args.map))
    keep = args.trace is not None
    if taus:
        selective.validate_taus(taus)
        rows = simulator.simulate_sweep(ds, cfg, taus, band, keep_trace=keep)
    else:
        rows = [(gate.tau_on, simulator.simulate_dataset(ds, cfg, keep_trace=keep))]
    simulator.save_sweep(rows, args.out)
    outputs = [Path(args.out)]
    if keep:
        ticks = [t for _, res in rows for t in res.trace]
        atomic_write_text(args.trace, simulator.trace_csv(ticks))
        outputs.append(Path(args.trace))
    config = {"alpha": args.alpha, "topk": args.topk, "taus": taus, "band": band,
              "tau_on": args.tau_on, "tau_off": args.tau_off, "refractory_ms": args.refractory_ms}
    return outputs, config


def cmd_bench(args):
    cfg = simulator.SimConfig(args.alpha, min(args.topk, args.k),
                              GateConfig.around(0.5, refractory_ms=DEFAULT_REFRACTORY_MS),
                              _read_map(args.map))
    mean_us, p99_us = simulator.benchmark_tick_latency(cfg, args.k, args.n_ticks)
    result = {"k": args.k, "n_ticks": args.n_ticks, "mean_us": mean_us, "p99_us": p99_us,
              "budget_us": 40_000, "within_budget": p99_us < 40_000}
    text = json.dumps(result, indent=2) + "\n"
    sys.stdout.write(text)
    atomic_write_text(args.out, text)
    return [Path(args.out)], result


def _taus(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid tau list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="calgate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"calgate {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_flags(sp, name="--data"):
        sp.add_argument(name, required=True, help="dataset file (.csv or .ndjson)")
        sp.add_argument("--format", choices=("csv", "ndjson"), default=None,
                        help="override the format inferred from the file suffix")

    g = sub.add_parser("gen-synth", help="generate a synthetic logit dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("csv", "ndjson"), default=None)
    g.add_argument("--fixture", action="store_true",
                   help="start from the canonical overconfident fixture (s=4, K=21, 100k ticks)")
    g.add_argument("--k", type=int)
    g.add_argument("--n-streams", type=int)
    g.add_argument("--ticks-per-stream", type=int)
    g.add_argument("--base-accuracy", type=float)
    g.add_argument("--scale", type=float, help="overconfidence logit multiplier s >= 1")
    g.add_argument("--label-persistence", type=float)
    g.add_argument("--prediction-persistence", type=float)
    g.add_argument("--noise-sigma", type=float)
    g.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    g.set_defaults(func=cmd_gen_synth)

    s = sub.add_parser("split", help="split a dataset by stream into train/val/test files")
    data_flags(s)
    s.add_argument("--fractions", type=float, nargs=3, default=[0.0, 0.5, 0.5],
                   metavar=("TRAIN", "VAL", "TEST"))
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out-prefix", required=True, help="files are written as <prefix><split><suffix>")
    s.set_defaults(func=cmd_split)

    c = sub.add_parser("calibrate", help="fit a calibration map on validation data")
    c.add_argument("--method", choices=("ts", "platt", "isotonic"), required=True)
    data_flags(c, "--val")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("eval", help="reliability report (ECE, NLL, Brier, Top-1/5)")
    data_flags(e)
    e.add_argument("--map", default=None, help="calibration map JSON (default: identity)")
    e.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    e.add_argument("--out", required=True)
    e.add_argument("--csv", default=None, help="reliability CSV path (default: <out>.csv)")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="coverage vs act-only precision over thresholds")
    data_flags(w)
    w.add_argument("--map", default=None)
    w.add_argument("--taus", type=_taus, default=list(selective.DEFAULT_TAUS))
    w.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)

    m = sub.add_parser("simulate", help="closed-loop stream replay through the Act/Hold gate")
    data_flags(m)
    m.add_argument("--map", default=None)
    m.add_argument("--alpha", type=float, default=simulator.DEFAULT_ALPHA)
    m.add_argument("--topk", type=int, default=simulator.DEFAULT_TOPK)
    m.add_argument("--taus", type=_taus, default=list(selective.DEFAULT_TAUS))
    m.add_argument("--band", type=float, default=0.0,
                   help="hysteresis half-width around each swept tau")
    m.add_argument("--tau-on", type=float, default=None, help="single run with explicit thresholds")
    m.add_argument("--tau-off", type=float, default=None)
    m.add_argument("--refractory-ms", type=int, default=DEFAULT_REFRACTORY_MS)
    m.add_argument("--out", required=True)
    m.add_argument("--trace", default=None, help="optional per-tick audit CSV")
    m.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="per-tick pipeline latency")
    b.add_argument("--k", type=int, default=21)
    b.add_argument("--n-ticks", type=int, default=100_000)
    b.add_argument("--map", default=None)
    b.add_argument("--alpha", type=float, default=simulator.DEFAULT_ALPHA)
    b.add_argument("--topk", type=int, default=simulator.DEFAULT_TOPK)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")
    r.set_defaults(func=None)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            with open(args.manifest, encoding="utf-8") as fh:
                manifest = json.load(fh)
            if manifest.get("schema") != MANIFEST_SCHEMA:
                raise UsageError(f"unsupported manifest schema {manifest.get('schema')!r}")
            return main(manifest["argv"])
        started = time.perf_counter()
        outputs, config = args.func(args)
        _write_manifest(args, argv, outputs, config, started)
    except OSError as exc:
        print(f"calgate {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, DataError, GateError, ValueError, KeyError, TypeError) as exc:
        print(f"calgate {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
