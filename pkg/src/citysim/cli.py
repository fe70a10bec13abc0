"""Command-line interface: ``citysim <command> [options]``.

Exit status is 0 on success, 1 when an input fails validation (the message
names the offending file or key) and 2 for malformed command lines.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core_types import ConfigurationError, DomainError, ParseError, ValidationError

log = logging.getLogger("citysim")

ERRORS = (ConfigurationError, ParseError, ValidationError, DomainError, FileNotFoundError)


def _seeds(text: str) -> list[int]:
    """``N`` means seeds 0..N-1; ``a,b,c`` lists them."""
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a count or a comma-separated seed list, got {text!r}")
    if n < 0:
        raise argparse.ArgumentTypeError("seed count must be >= 0")
    return list(range(n))


def _scale(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("scale must lie in (0, 1]")
    return v


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", help="named scenario (see 'citysim presets')")
    src.add_argument("--config", help="scenario YAML file")
    p.add_argument("--scale", type=_scale, help="population scale, overrides the scenario's")
    p.add_argument("--uniform-wards", action="store_true", help="spread population evenly over wards")


def _scenario(args):
    from .config import load_config, preset

    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset or "kolkata-2020")
    if args.scale is not None:
        cfg = cfg.with_scale(args.scale)
    if args.uniform_wards:
        cfg = cfg.with_uniform_wards()
    return cfg


def cmd_synth(args) -> int:
    from .population import (
        PopulationConfig, kolkata_sectors, kolkata_wards, load_sector_table, load_ward_table, save_population,
        synthesize_population,
    )

    wards = load_ward_table(args.wards) if args.wards else kolkata_wards()
    sectors = load_sector_table(args.sectors) if args.sectors else kolkata_sectors()
    cfg = PopulationConfig(scale=args.scale, uniform_wards=args.uniform_wards)
    pop = synthesize_population(wards, sectors, cfg, args.seed)
    counts = np.bincount(pop.occupancy, minlength=4)
    print(f"agents={len(pop)} families={len(np.unique(pop.family_id))} "
          f"workplaces={pop.city.workplace_count} facilities={len(pop.city.fac_kind)} "
          f"dependents={counts[0]} students={counts[1]} workers={counts[2]} retired={counts[3]}")
    if args.out:
        save_population(pop, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_run(args) -> int:
    from dataclasses import replace

    from . import engine
    from .calibration import load_observed
    from .config import save_config, warmup_for
    from .output import write_output

    cfg = _scenario(args)
    if args.seeds is not None:
        cfg = cfg.with_seeds(args.seeds)
    if args.days is not None:
        cfg = replace(cfg, simulation=replace(cfg.simulation, days=args.days))
    if args.trace:
        cfg = replace(cfg, output=replace(cfg.output, trace=True))
    if args.reverse_seed is not None:
        cfg = warmup_for(cfg, args.reverse_seed)
    out_dir = Path(args.out or cfg.output.dir)
    observed = None
    if args.observed:
        obs = load_observed(args.observed)
        if obs.start != cfg.simulation.start or len(obs) != cfg.simulation.days:
            raise ConfigurationError(f"{args.observed}: observed dates do not match the simulated range")
        observed = obs.values
    out = engine.run(cfg, workers=args.workers)
    paths = write_output(out, out_dir, observed)
    save_config(cfg, out_dir / "scenario.yaml")
    total = out.city("new_infections").sum()
    print(f"{cfg.name}: {len(out.seeds)} seed(s), {out.days} day(s), population {out.meta['population']}, "
          f"mean cumulative infections {total:g}")
    for p in paths:
        log.info("wrote %s", p)
    print(f"wrote {len(paths) + 1} file(s) to {out_dir}")
    return 0


def cmd_calibrate(args) -> int:
    from .calibration import apply_params, aligned_config, grid_search, load_grid, load_observed, write_results
    from .config import save_config

    cfg = _scenario(args)
    grid = load_grid(args.grid)
    obs = load_observed(args.observed)
    print(f"grid: {grid.size} combination(s) x {args.replicates} replicate(s)")
    results = grid_search(grid, cfg, obs, replicates=args.replicates, seed=args.seed, tol=args.tol,
                          workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results(results, out / "ranked.csv")
    best = aligned_config(apply_params(cfg, results[0].params), obs)
    save_config(best, out / "best.yaml")
    r = results[0]
    print(f"best: {json.dumps(r.params)} days_within={r.days_within}/{len(obs)} rmse={r.rmse:.3f}")
    print(f"wrote {out / 'ranked.csv'} and {out / 'best.yaml'}")
    return 0


def cmd_compare(args) -> int:
    import csv

    from .calibration import rmse, within_tolerance_days
    from .output import read_city_series

    da, a = read_city_series(args.a, args.metric)
    db, b = read_city_series(args.b, args.metric)
    if da != db:
        raise ValidationError(f"{args.a} and {args.b} cover different dates")
    count, frac = within_tolerance_days(b, a, args.tol)
    rel = np.abs(b - a) / np.maximum(a, 1.0)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "a", "b", "diff", "rel_diff", "within"])
            for d, x, y, r in zip(da, a, b, rel):
                w.writerow([d.isoformat(), f"{x:g}", f"{y:g}", f"{y - x:g}", f"{r:.6f}", int(r <= args.tol)])
    result = {"metric": args.metric, "tolerance": args.tol, "days": len(a), "days_within": count,
              "fraction_within": frac, "days_outside": len(a) - count, "fraction_outside": 1 - frac,
              "rmse": rmse(b, a), "total_a": float(a.sum()), "total_b": float(b.sum())}
    print(json.dumps(result, indent=2))
    return 0


def cmd_presets(args) -> int:
    from .config import preset_names

    for name in preset_names():
        print(name)
    return 0


def cmd_config(args) -> int:
    from .config import dump_config

    cfg = _scenario(args)
    if args.seeds is not None:
        cfg = cfg.with_seeds(args.seeds)
    text = dump_config(cfg)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citysim", description="City-scale agent-based epidemic simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic population")
    p.add_argument("--scale", type=_scale, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--uniform-wards", action="store_true")
    p.add_argument("--wards", help="ward table CSV (ward_id,population,density)")
    p.add_argument("--sectors", help="sector table CSV (sector,workers,centers,hours,gap_m)")
    p.add_argument("--out", help="write the population as JSON lines")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="simulate a scenario")
    _add_scenario_args(p)
    p.add_argument("--seeds", type=_seeds, help="seed count N (0..N-1) or comma list")
    p.add_argument("--days", type=int, help="override the number of simulated days")
    p.add_argument("--out", help="output directory (default: the scenario's output.dir)")
    p.add_argument("--workers", type=int, default=1, help="parallel replicate processes")
    p.add_argument("--trace", action="store_true", help="write infection event traces")
    p.add_argument("--reverse-seed", type=int, metavar="POSITIVES",
                   help="warm up from the lockdown start to match this positive count")
    p.add_argument("--observed", help="date,count CSV for error metrics in the summary")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="grid-search parameters against observed cases")
    _add_scenario_args(p)
    p.add_argument("--grid", required=True, help="YAML file with an 'axes' mapping")
    p.add_argument("--observed", required=True, help="date,count CSV")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=0.1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="calibration")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("compare", help="compare two output CSVs day by day")
    p.add_argument("a", help="reference output CSV")
    p.add_argument("b", help="output CSV compared against the reference")
    p.add_argument("--tol", type=float, default=0.1)
    p.add_argument("--metric", default="positives")
    p.add_argument("--out", help="write per-day differences to this CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("presets", help="list named scenarios")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("config", help="print a scenario as YAML")
    _add_scenario_args(p)
    p.add_argument("--seeds", type=_seeds)
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ERRORS as exc:
        print(f"citysim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
