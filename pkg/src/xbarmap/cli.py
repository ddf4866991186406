"""Command-line front end: ``xbarmap validate|decompose|train|infer-variation|compare``.

Exit codes: 0 success, 1 ordering check failed, 2 usage/config error,
3 bad input data, 4 training divergence, 5 checkpoint error,
6 comparison (grouping) error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import checkpoint_dict, load_checkpoint
from .config import ExperimentConfig, SweepPoint
from .errors import CheckpointError, ConfigError, GroupingError, InvalidDimensionError, XbarError
from .evaluation import compare_schemes, evaluate, variation_monte_carlo, variation_records
from .metrics import CSV_HEADER, MetricsRecord, RunContext, read_csv, write_csv, write_jsonl
from .network import initialize_model, train
from .periphery import (
    MappingScheme,
    build_periphery,
    decompose,
    recompose,
    validate_periphery,
)

EXIT_OK = 0
EXIT_ORDERING = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DIVERGED = 4
EXIT_CHECKPOINT = 5
EXIT_COMPARE = 6

ROUND_TRIP_TOL = 1e-9


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not np.isfinite(value) or value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text!r}")
    return value


def _err(message: str) -> None:
    print(f"xbarmap: error: {message}", file=sys.stderr)


# -- validate ---------------------------------------------------------------

def cmd_validate(args) -> int:
    report = validate_periphery(build_periphery(args.scheme, args.n_out))
    print(f"scheme={args.scheme} n_out={args.n_out}")
    print(f"rank_ok={str(report.rank_ok).lower()}")
    print(f"positive_null_ok={str(report.positive_null_ok).lower()}")
    return EXIT_OK if report.ok else EXIT_ORDERING


# -- decompose --------------------------------------------------------------

def _write_matrix_csv(m: np.ndarray, path: Path) -> None:
    with open(path, "w") as fh:
        for row in m:
            fh.write(",".join(repr(float(v)) if v % 1 else str(int(v)) for v in row) + "\n")


def cmd_decompose(args) -> int:
    try:
        w = np.loadtxt(args.input, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        _err(f"cannot read matrix from {args.input}: {exc}")
        return EXIT_INPUT
    if not np.all(np.isfinite(w)):
        _err(f"{args.input} contains non-finite entries")
        return EXIT_INPUT
    try:
        parts = decompose(w, args.scheme, args.g_max)
    except XbarError as exc:
        _err(str(exc))
        return EXIT_INPUT
    s = build_periphery(args.scheme, w.shape[0])
    error = np.abs(recompose(s, parts.m) * parts.scale - w).max()
    if not error <= ROUND_TRIP_TOL * max(1.0, np.abs(w).max()):
        _err(f"round-trip check failed (max error {error:.3g}); nothing written")
        return EXIT_INPUT
    out = Path(args.output)
    _write_matrix_csv(parts.m, out)
    sidecar = {
        "scheme": parts.scheme.value,
        "g_max": parts.g_max,
        "scale": parts.scale,
        "downscale": 1.0 / parts.scale,
        "dims": {"n_out": w.shape[0], "n_in": w.shape[1], "n_dummy": parts.m.shape[0]},
        "max_round_trip_error": float(error),
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} ({parts.m.shape[0]}x{parts.m.shape[1]}), scale={parts.scale:g}")
    return EXIT_OK


# -- train ------------------------------------------------------------------

def _run_point(cfg: ExperimentConfig, point: SweepPoint, train_set, test_set):
    model = initialize_model(cfg.layer_specs(), point.scheme, point.device, point.seed)
    result = train(model, train_set, cfg.train_config(point.seed), test_set)
    context = {"scheme": point.scheme, "seed": point.seed, "tag": point.tag}
    return result.history, result.diverged, checkpoint_dict(result.model, context)


def _run_point_job(payload):
    raw, base_dir, point = payload
    cfg = ExperimentConfig.from_dict(raw, base_dir)
    train_set, test_set = cfg.datasets()
    return _run_point(cfg, point, train_set, test_set)


def _write_records(records, out_dir: Path, stem: str, formats) -> list[Path]:
    written = []
    if "csv" in formats:
        write_csv(records, out_dir / f"{stem}.csv")
        written.append(out_dir / f"{stem}.csv")
    if "jsonl" in formats:
        write_jsonl(records, out_dir / f"{stem}.jsonl")
        written.append(out_dir / f"{stem}.jsonl")
    return written


def cmd_train(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
        train_set, test_set = cfg.datasets()
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (OSError, XbarError) as exc:
        _err(f"cannot load dataset: {exc}")
        return EXIT_INPUT
    out_dir = Path(args.output) if args.output else cfg.output_dir
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)

    points = cfg.sweep()
    if args.jobs > 1:
        payloads = [(cfg.raw, cfg.base_dir, p) for p in points]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_point_job, payloads))
    else:
        results = [_run_point(cfg, p, train_set, test_set) for p in points]

    records: list[MetricsRecord] = []
    failures = []
    for point, (history, diverged, ckpt) in zip(points, results):
        records.extend(history)
        if diverged:
            failures.append(f"{point.tag}: {diverged}")
            continue
        path = out_dir / "checkpoints" / f"{point.tag}.json"
        path.write_text(json.dumps(ckpt, sort_keys=True) + "\n")
    _write_records(records, out_dir, "train_metrics", cfg.formats)

    print(f"{'run':<36} {'train_loss':>10} {'train_acc':>9} {'test_acc':>8}")
    for point, (history, diverged, _) in zip(points, results):
        if history:
            last = history[-1]
            print(f"{point.tag:<36} {last.train_loss:>10.4f} {last.train_accuracy:>9.4f} "
                  f"{last.test_accuracy:>8.4f}")
        else:
            print(f"{point.tag:<36} {'-':>10} {'-':>9} {'-':>8}")
    if failures:
        for line in failures:
            _err(f"training diverged: {line}")
        return EXIT_DIVERGED
    return EXIT_OK


# -- infer-variation --------------------------------------------------------

def _checkpoint_paths(items) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        paths.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    return paths


def cmd_infer_variation(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
        _, test_set = cfg.datasets()
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (OSError, XbarError) as exc:
        _err(f"cannot load dataset: {exc}")
        return EXIT_INPUT
    n_samples = args.n_samples or cfg.n_samples
    sigmas = cfg.sigmas
    out_dir = Path(args.output) if args.output else cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    paths = _checkpoint_paths(args.checkpoint)
    if not paths:
        _err("no checkpoints given")
        return EXIT_CHECKPOINT
    records, summaries = [], []
    for path in paths:
        try:
            model, meta = load_checkpoint(path)
        except CheckpointError as exc:
            _err(f"{path}: {exc}")
            return EXIT_CHECKPOINT
        seed = int(meta.get("seed", 0))
        scheme = meta.get("scheme", model.linear_layers()[0].mapping)
        try:
            clean = evaluate(model, test_set)
        except InvalidDimensionError as exc:
            _err(f"{path}: checkpoint does not fit the configured dataset: {exc}")
            return EXIT_CHECKPOINT
        for sigma in sigmas:
            device = replace(model.device, variation_sigma=sigma)
            summary = variation_monte_carlo(model, test_set, device, n_samples, seed)
            context = RunContext(scheme, device.bits, device.nonlinearity, sigma, seed)
            records.extend(variation_records(summary, context))
            summaries.append({"checkpoint": path.name, "scheme": scheme, "seed": seed,
                              "bits": device.bits, "nonlinearity": device.nonlinearity,
                              "clean_accuracy": clean, **summary.to_dict()})
            print(f"{path.name:<40} sigma={sigma:<5g} mean={summary.mean_accuracy:.4f} "
                  f"std={summary.std_accuracy:.4f}")
    _write_records(records, out_dir, "variation_metrics", cfg.formats)
    (out_dir / "variation_summary.json").write_text(json.dumps(summaries, indent=2) + "\n")
    return EXIT_OK


# -- compare ----------------------------------------------------------------

def cmd_compare(args) -> int:
    directory = Path(args.metrics_dir)
    records = []
    for path in sorted(directory.glob("*.csv")):
        with open(path) as fh:
            if fh.readline().strip() != ",".join(CSV_HEADER):
                continue
        records.extend(read_csv(path))
    if not records:
        _err(f"no metrics CSV files found in {directory}")
        return EXIT_COMPARE
    try:
        report = compare_schemes(records, slack=args.slack)
    except GroupingError as exc:
        _err(str(exc))
        return EXIT_COMPARE
    out = Path(args.output) if args.output else directory / "ordering_report.json"
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    for cell in report.cells:
        bits = "fp32" if cell.bits is None else cell.bits
        means = " ".join(f"{s}={a:.4f}" for s, a in cell.mean_accuracy.items())
        flag = "ok" if cell.ordering_ok else "FAIL " + "; ".join(cell.violations)
        print(f"{cell.phase:<9} bits={bits} nu={cell.nonlinearity:g} sigma={cell.sigma:g}  "
              f"{means}  [{flag}]")
    if not report.ok:
        _err(f"expected ordering de >= acm >= bc violated in {len(report.failing_cells())} cell(s)")
        return EXIT_ORDERING
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xbarmap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    schemes = [s.value for s in MappingScheme]

    p = sub.add_parser("validate", help="check the periphery matrix conditions")
    p.add_argument("--scheme", choices=schemes, required=True)
    p.add_argument("--n-out", type=_positive_int, required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("decompose", help="map a signed CSV matrix onto a crossbar matrix")
    p.add_argument("input")
    p.add_argument("--scheme", choices=schemes, required=True)
    p.add_argument("--g-max", type=_positive_float, default=1.0)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("train", help="train every configured sweep point")
    p.add_argument("config")
    p.add_argument("--output", "-o", help="override output.directory")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer-variation", help="Monte Carlo inference under device variation")
    p.add_argument("checkpoint", nargs="+", help="checkpoint files or directories")
    p.add_argument("--config", required=True)
    p.add_argument("--output", "-o", help="override output.directory")
    p.add_argument("--n-samples", type=_positive_int)
    p.set_defaults(func=cmd_infer_variation)

    p = sub.add_parser("compare", help="check the cross-scheme accuracy ordering")
    p.add_argument("metrics_dir")
    p.add_argument("--slack", type=float, default=0.0)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
