"""Command-line entry point: ``regvio run`` and ``regvio compare``."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Sequence

from .evaluation import read_summary_csv
from .pipeline import PIPELINES, RunConfig, parse_config_text, run_pipeline
from .solver import SolverError

EXIT_CONFIG, EXIT_OUTPUT, EXIT_SOLVER = 2, 3, 4


def resolve_config(config_path: str | None, pipeline: str | None, seed: int | None, overrides: Sequence[str]) -> RunConfig:
    """File keys first, then ``--set`` overrides, then the dedicated flags."""
    flat: dict[str, str] = {}
    if config_path:
        flat.update(parse_config_text(Path(config_path).read_text(encoding="utf-8")))
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        flat[k.strip()] = v.strip()
    if pipeline is not None:
        flat["pipeline"] = pipeline
    if seed is not None:
        flat["seed"] = str(seed)
    return RunConfig.from_flat(flat)


def _scene_keys(manifest: dict[str, str]) -> dict[str, str]:
    return {k: v for k, v in manifest.items() if k.startswith("sim.") or k == "seed"}


def compare_runs(dirs: Sequence[str | Path]) -> str:
    """CSV text with one row per run directory."""
    rows = []
    lengths: list[str] = []
    manifests = []
    for d in dirs:
        d = Path(d)
        man, ate_csv = d / "manifest.txt", d / "ate.csv"
        if not man.is_file() or not ate_csv.is_file():
            raise FileNotFoundError(f"{d}: missing manifest.txt or ate.csv")
        manifest = parse_config_text(man.read_text(encoding="utf-8"))
        manifests.append(manifest)
        ate = read_summary_csv(ate_csv)
        rpe = {}
        for f in sorted(d.glob("rpe_*.csv")):
            L = f.stem[len("rpe_") :]
            rpe[L] = read_summary_csv_column(f, "translation_m").get("median", float("nan"))
            if L not in lengths:
                lengths.append(L)
        rows.append((str(d), manifest.get("pipeline", ""), manifest.get("seed", ""), ate["median"], ate["rmse"], rpe))
    lengths.sort(key=float)
    ref = _scene_keys(manifests[0]) if manifests else {}
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["run", "pipeline", "seed", "ate_median", "ate_rmse", *[f"rpe_{L}_median" for L in lengths], "warning"])
    for (name, pipe, seed, med, rmse, rpe), man in zip(rows, manifests):
        scene = {k: v for k, v in _scene_keys(man).items() if k != "seed"}
        ref_scene = {k: v for k, v in ref.items() if k != "seed"}
        warn = "scene_mismatch" if scene != ref_scene else ""
        w.writerow([name, pipe, seed, f"{med:.9g}", f"{rmse:.9g}", *[f"{rpe.get(L, float('nan')):.9g}" for L in lengths], warn])
    return out.getvalue()


def read_summary_csv_column(path: Path, column: str) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["statistic"]: float(row[column]) for row in reader}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regvio", description="Fixed-lag VIO with mesh-based planar regularities on simulated data.")
    sub = p.add_subparsers(dest="command")
    run = sub.add_parser("run", help="simulate and estimate one sequence")
    run.add_argument("--config", help="key=value config file")
    run.add_argument("--pipeline", choices=PIPELINES, type=str.lower)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    cmp_ = sub.add_parser("compare", help="tabulate metrics of several runs")
    cmp_.add_argument("dirs", nargs="+")
    cmp_.add_argument("--out", help="write the CSV here instead of stdout")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0].startswith("-") and argv[0] not in ("-h", "--help"):
        argv.insert(0, "run")
    args = build_parser().parse_args(argv)
    if args.command is None:
        build_parser().print_help()
        return EXIT_CONFIG
    if args.command == "compare":
        try:
            text = compare_runs(args.dirs)
        except (FileNotFoundError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return 0
    try:
        cfg = resolve_config(args.config, args.pipeline, args.seed, args.set)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_pipeline(cfg, args.out)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"cannot write outputs to {args.out}: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    s = result.ate()
    print(f"{cfg.pipeline} seed={cfg.seed} keyframes={len(result.estimate)} ate_median={s.median:.6g} ate_rmse={s.rmse:.6g} -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
