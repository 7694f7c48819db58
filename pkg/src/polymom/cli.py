"""Command-line front end.

    python -m polymom synthesize --config cfg.json --out run/
    python -m polymom moments run/generator.json --mode exact --out run/
    python -m polymom recover run/moments.json --out run/
    python -m polymom ce-check --r 2 --p 3
    python -m polymom sweep --config sweep.json --out run/

Exit codes: 0 success, 2 validation, 3 numerical stage failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .ce import generic_condition_check
from .errors import NumericalError, PolymomError, SynthesisError, TermCapError
from .recovery import evaluate_report, recover_full, sliced_w1
from .sampling import (GeneratorSpec, MomentTable, empirical_moment_table, exact_moment_table,
                       synthesize_target)
from .seeds import stage_seed

log = logging.getLogger("polymom")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class ConfigError(PolymomError):
    pass


@dataclass
class ExperimentConfig:
    D: int = 3
    d: int = 4
    r: int = 2
    p: int = 3
    M: float = 3.0
    sigma: float = 1.0
    tau: float = 0.1
    A: float = 10.0
    N: list = field(default_factory=lambda: [100_000])
    seeds: list = field(default_factory=lambda: [0])
    seed: int = 0
    mode: str = "exact"
    out: str = "out"
    starts: int = 12
    w1_samples: int = 100_000
    w1_directions: int = 64
    workers: int = 1
    tolerances: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None, **overrides) -> "ExperimentConfig":
        data = {}
        if path is not None:
            with open(path) as fh:
                data = json.load(fh)
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        if isinstance(data.get("N"), int):
            data["N"] = [data["N"]]
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self):
        for name in ("D", "d", "r", "p"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.r > self.d:
            raise ConfigError(f"r={self.r} exceeds latent dimension d={self.d}")
        if self.p % 2 == 0:
            raise ConfigError("activation degree p must be odd")
        if not self.tau < self.A:
            raise ConfigError(f"need tau < A, got tau={self.tau}, A={self.A}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if not self.N or any(int(n) < 1 for n in self.N):
            raise ConfigError("every N must be >= 1")
        if self.mode not in ("exact", "empirical"):
            raise ConfigError(f"mode must be exact or empirical, got {self.mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def echo(self) -> dict:
        return {"config": asdict(self), "version": __version__}


# ---------------------------------------------------------------------------
# I/O helpers


def atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def _csv_with_echo(body: str, cfg: ExperimentConfig) -> str:
    return f"# polymom {__version__} config {json.dumps(asdict(cfg), sort_keys=True)}\n" + body


def _read_json(path: str) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# commands


def cmd_synthesize(cfg: ExperimentConfig) -> str:
    seed = stage_seed(cfg.seed, "synthesize")
    G = synthesize_target(cfg.D, cfg.d, cfg.r, cfg.p, cfg.M, cfg.sigma, cfg.tau, cfg.A, seed=seed)
    path = os.path.join(cfg.out, "generator.json")
    atomic_write(path, _dump({**G.to_json(), "master_seed": cfg.seed, "stage_seed": seed,
                              **cfg.echo()}))
    return path


def cmd_moments(generator_path: str, cfg: ExperimentConfig) -> tuple:
    G = GeneratorSpec.from_json(_read_json(generator_path))
    if cfg.mode == "exact":
        table = exact_moment_table(G)
    else:
        seed = stage_seed(cfg.seed, "moments", int(cfg.N[0]))
        table = empirical_moment_table(G, int(cfg.N[0]), seed=seed)
    table.meta = {"generator": G.to_json(), **cfg.echo()}
    jpath = os.path.join(cfg.out, "moments.json")
    cpath = os.path.join(cfg.out, "moments.csv")
    atomic_write(jpath, _dump(table.to_json()))
    atomic_write(cpath, _csv_with_echo(table.to_csv(), cfg))
    return jpath, cpath


def cmd_recover(table_path: str, cfg: ExperimentConfig, strict: bool = False):
    """Returns (report path, report). Stage failures are collected either
    way; ``strict`` only turns them into a nonzero exit."""
    table = MomentTable.from_json(_read_json(table_path))
    if table.r != cfg.r or table.p != cfg.p or table.D != cfg.D:
        log.info("table shape (D=%d, r=%d, p=%d) overrides config", table.D, table.r, table.p)
    gen = table.meta.get("generator") if table.meta else None
    d = int(gen["d"]) if gen else cfg.d
    report = recover_full(table, d, strict=False, seed=stage_seed(cfg.seed, "recover"),
                          starts=cfg.starts)
    if gen is not None:
        evaluate_report(report, GeneratorSpec.from_json(gen), w1_samples=cfg.w1_samples,
                        w1_directions=cfg.w1_directions, seed=stage_seed(cfg.seed, "w1"))
    path = os.path.join(cfg.out, "report.json")
    atomic_write(path, _dump({**report.to_json(), **cfg.echo()}))
    if report.metrics:
        atomic_write(os.path.join(cfg.out, "metrics.csv"),
                     _csv_with_echo(report.metrics_csv(), cfg))
    return path, report


def cmd_ce_check(r: int, p: int, trials: int, seed: int, out: str | None = None):
    check = generic_condition_check(r, p, trials=trials, seed=seed)
    if out is not None:
        det = check.determinant
        atomic_write(os.path.join(out, "ce_check.json"), _dump({
            "r": r, "p": p, "status": check.status, "holds": check.holds,
            "witness": None if check.witness is None else list(check.witness),
            "determinant": None if det is None else f"{det.numerator}/{det.denominator}",
            "rank": check.rank, "size": check.size, "trials": check.trials,
            "config": {"r": r, "p": p, "trials": trials, "seed": seed},
            "version": __version__}))
    return check


SWEEP_COLUMNS = ["N", "seed", "weight_error", "gram_distance", "overlap_gram_distance",
                 "direction_error", "sliced_w1", "baseline_w1", "wall_time", "failures"]


def _sweep_cell(args):
    cfg, N, seed = args
    t0 = time.perf_counter()
    row = {"N": N, "seed": seed}
    try:
        G = synthesize_target(cfg.D, cfg.d, cfg.r, cfg.p, cfg.M, cfg.sigma, cfg.tau, cfg.A,
                              seed=stage_seed(seed, "synthesize"))
        table = empirical_moment_table(G, N, seed=stage_seed(seed, "moments", N))
        report = recover_full(table, G.d, strict=False, seed=stage_seed(seed, "recover"),
                              starts=cfg.starts)
        metrics = evaluate_report(report, G, w1_samples=cfg.w1_samples,
                                  w1_directions=cfg.w1_directions, seed=stage_seed(seed, "w1"))
        for key in SWEEP_COLUMNS[2:-3]:
            row[key] = metrics.get(key, math.nan)
        # reference level: an independent target of the same hyperparameters
        fresh = synthesize_target(cfg.D, cfg.d, cfg.r, cfg.p, cfg.M, cfg.sigma, cfg.tau, cfg.A,
                                  seed=stage_seed(seed, "baseline"))
        row["baseline_w1"] = sliced_w1(fresh, G, cfg.w1_samples, cfg.w1_directions,
                                       seed=stage_seed(seed, "w1")).value
        row["failures"] = ";".join(f["error"] for f in report.failures)
    except (PolymomError, ValueError) as exc:
        for key in SWEEP_COLUMNS[2:-2]:
            row[key] = math.nan
        row["failures"] = f"{type(exc).__name__}: {exc}"
    row["wall_time"] = time.perf_counter() - t0
    return row


def loglog_slope(Ns, errors) -> float:
    """Least-squares slope of log(error) against log(N)."""
    x = np.log(np.asarray(Ns, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    ok = np.isfinite(y)
    if len(set(x[ok])) < 2:
        return math.nan
    return float(np.polyfit(x[ok], y[ok], 1)[0])


def sweep_summary(rows) -> dict:
    """Medians per N and the slope of median weight error against N."""
    Ns = sorted({r["N"] for r in rows})
    med = {}
    for key in ("weight_error", "gram_distance", "sliced_w1", "baseline_w1"):
        med[key] = []
        for n in Ns:
            vals = np.array([r.get(key, math.nan) for r in rows if r["N"] == n], dtype=float)
            med[key].append(float(np.median(vals[np.isfinite(vals)]))
                            if np.isfinite(vals).any() else math.nan)
    slope = loglog_slope(Ns, med["weight_error"]) if len(Ns) >= 2 else math.nan
    return {"N": Ns, "median": med, "slope": slope}


def cmd_sweep(cfg: ExperimentConfig):
    if cfg.mode != "empirical":
        raise ConfigError("sweep requires empirical mode")
    cells = [(cfg, int(N), int(seed)) for N in cfg.N for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    summary = sweep_summary(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow([row["N"], row["seed"]]
                   + [repr(float(row[k])) for k in SWEEP_COLUMNS[2:-1]] + [row["failures"]])
    slope = summary["slope"]
    w.writerow(["slope", "", "n/a" if math.isnan(slope) else repr(slope)]
               + [""] * (len(SWEEP_COLUMNS) - 3))
    path = os.path.join(cfg.out, "sweep.csv")
    atomic_write(path, _csv_with_echo(buf.getvalue(), cfg))
    atomic_write(os.path.join(cfg.out, "sweep_summary.json"),
                 _dump({**summary, "slope": None if math.isnan(slope) else slope, **cfg.echo()}))
    return path, rows, summary


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=["exact", "empirical"])
    common.add_argument("--strict", action="store_true",
                        help="exit nonzero when any stage fails")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="polymom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"polymom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synthesize", parents=[common], help="draw a robust target generator")
    m = sub.add_parser("moments", parents=[common], help="moment table of a generator")
    m.add_argument("generator")
    m.add_argument("--N", type=int, help="sample count (empirical mode)")
    rc = sub.add_parser("recover", parents=[common], help="recover a generator from moments")
    rc.add_argument("table")
    ce = sub.add_parser("ce-check", parents=[common], help="certify det(CE) != 0")
    ce.add_argument("--r", type=int, required=True)
    ce.add_argument("--p", type=int, default=3)
    ce.add_argument("--trials", type=int, default=8)
    sub.add_parser("sweep", parents=[common], help="sample-size sweep to CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "ce-check":
            if args.r < 1 or args.p < 1 or args.p % 2 == 0:
                raise ConfigError("need r >= 1 and odd p >= 1")
            check = cmd_ce_check(args.r, args.p, args.trials, args.seed or 0, args.out)
            print(check.certificate())
            return EXIT_OK
        overrides = {"seed": args.seed, "out": args.out, "mode": args.mode}
        if getattr(args, "N", None) is not None:
            overrides["N"] = [args.N]
        cfg = ExperimentConfig.load(args.config, **overrides)
        if args.command == "synthesize":
            print(cmd_synthesize(cfg))
        elif args.command == "moments":
            for path in cmd_moments(args.generator, cfg):
                print(path)
        elif args.command == "recover":
            path, report = cmd_recover(args.table, cfg, strict=args.strict)
            print(path)
            for f in report.failures:
                print(f"stage failure: {f['error']}", file=sys.stderr)
            if report.failures and args.strict:
                return EXIT_NUMERICAL
        elif args.command == "sweep":
            path, rows, summary = cmd_sweep(cfg)
            print(path)
            slope = summary["slope"]
            print("weight-error slope: " + ("n/a" if math.isnan(slope) else f"{slope:.3f}"))
            if args.strict and any(r["failures"] for r in rows):
                return EXIT_NUMERICAL
        return EXIT_OK
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, SynthesisError, TermCapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PolymomError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
