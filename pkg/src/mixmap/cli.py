"""Command-line pipeline: mix, simulate, datamap, schedule, plan, eval.

Stages chain through files, so each one is independently testable and any
trainer can sit in the middle.  Diagnostics go to stderr; machine-readable
output goes only to the requested files.  Exit codes: 0 success, 1
validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import curriculum as cur
from . import dynamics, harness, metrics, mixtures, report

log = logging.getLogger("mixmap")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for I/O failures.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _default_jobs() -> int:
    value = os.environ.get("MIXMAP_JOBS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _load_grid(value: str) -> mixtures.FactorGrid:
    if value in mixtures.builtin_grid_names():
        return mixtures.builtin_grid(value)
    return mixtures.FactorGrid.from_file(_require_file(value))


def _load_curriculum(value: str) -> cur.Curriculum:
    if value in cur.builtin_curriculum_names():
        return cur.builtin_curriculum(value)
    return cur.Curriculum.from_file(_require_file(value))


def _parse_pools(values: list[str]) -> dict[str, mixtures.UtterancePool]:
    pools: dict[str, mixtures.UtterancePool] = {}
    for value in values:
        role, sep, path = value.partition("=")
        if not sep or role not in ("target", "real", "syn"):
            raise ValueError(f"--pools takes role=path with role in target/real/syn, got {value!r}")
        if role in pools:
            raise ValueError(f"duplicate pool role {role!r}")
        pools[role] = mixtures.UtterancePool.from_file(_require_file(path))
    if "target" not in pools:
        raise ValueError("a target pool is required (--pools target=<file>)")
    return pools


def cmd_mix(args: argparse.Namespace) -> int:
    pools = _parse_pools(args.pools)
    grid = _load_grid(args.grid)
    records = mixtures.build_manifest(
        pools["target"],
        pools.get("real"),
        pools.get("syn"),
        grid,
        args.count,
        args.seed,
        args.out,
        encoding=args.encoding,
        jobs=args.jobs,
    )
    log.info("wrote %d mixtures and %s", len(records), Path(args.out) / mixtures.MANIFEST_NAME)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    records = mixtures.read_manifest(_require_file(args.manifest))
    params = harness.LearnerParams.from_file(_require_file(args.learner)) if args.learner else harness.LearnerParams()
    harness.simulate_trajectories(records, params, args.epochs, args.out, seed=args.seed, jobs=args.jobs)
    log.info("wrote %d-example metric log to %s", len(records), args.out)
    return EXIT_OK


def cmd_datamap(args: argparse.Namespace) -> int:
    trajectories = dynamics.ingest_metric_log(
        _require_file(args.log), discard_first_epoch=not args.keep_first_epoch
    )
    rule = dynamics.RegionRule.from_file(_require_file(args.rule)) if args.rule else dynamics.RegionRule()
    points = dynamics.build_datamap(trajectories, rule)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.render_datamap_svg(points, out / "datamap.svg")
    report.write_regions_csv(points, out / "regions.csv")
    log.info("mapped %d examples into %s", len(points), out)
    return EXIT_OK


def cmd_schedule(args: argparse.Namespace) -> int:
    if args.curriculum:
        curriculum = _load_curriculum(args.curriculum)
        pool = mixtures.read_manifest(_require_file(args.pool)) if args.pool else None
        descriptor = cur.emit_curriculum_manifests(curriculum, args.out, pool_records=pool, total_epochs=args.epochs)
    else:
        if not (args.regions and args.order and args.retention):
            raise ValueError("region mode needs --regions, --order, and --retention (or use --curriculum)")
        if args.epochs is None:
            raise ValueError("--epochs is required in region mode")
        schedule = cur.RegionSchedule(
            ordering=cur.parse_ordering(args.order),
            retention=args.retention,
            include_unlabeled=args.include_unlabeled,
        )
        region_map = report.read_regions_csv(_require_file(args.regions))
        descriptor = cur.emit_region_stage_manifests(schedule, region_map, args.epochs, args.out, name=args.name)
    log.info("wrote %d stage manifests into %s", len(descriptor["stages"]), args.out)
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    region_map = report.read_regions_csv(_require_file(args.regions))
    counts: dict[str, int] = {}
    for region in region_map.values():
        counts[region] = counts.get(region, 0) + 1
    if args.budget is not None:
        budget = args.budget
    else:
        from fractions import Fraction
        import math

        budget = int(math.floor(Fraction(str(args.budget_fraction)) * len(region_map)))
    plan = cur.fixed_quantity_plan(counts, args.target, budget)
    example_ids = cur.draw_plan(plan, region_map, args.seed)
    payload = {
        "target": plan.target,
        "budget": plan.budget,
        "counts": {region: count for region, count in plan.counts},
        "seed": args.seed,
        "example_ids": example_ids,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    log.info("planned %d examples (target %s) into %s", plan.budget, plan.target, out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = _require_file(args.manifest)
    records = mixtures.read_manifest(manifest)
    estimates = Path(args.estimates)
    if not estimates.is_dir():
        raise FileNotFoundError(f"no such directory: {estimates}")
    results = metrics.evaluate_manifest(records, estimates, manifest.parent)
    metrics.write_eval_csv(results, args.out)
    log.info("scored %d examples into %s", len(results), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="mixmap",
        description="Synthesize factor-controlled speech mixtures, map training dynamics, "
        "and emit curriculum sampling schedules.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="chatty diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mix", help="generate a mixture manifest and audio from factor grids")
    p.add_argument(
        "--pools",
        action="append",
        required=True,
        metavar="ROLE=FILE",
        help="utterance pool as role=file with role in target/real/syn; "
        "files hold speaker_id<TAB>wav_path lines (repeatable)",
    )
    p.add_argument("--grid", required=True, help=f"factor grid JSON file or builtin name ({', '.join(mixtures.builtin_grid_names())})")
    p.add_argument("--count", type=int, required=True, help="number of mixtures")
    p.add_argument("--seed", type=int, required=True, help="master seed; outputs are byte-reproducible")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--encoding", choices=("float32", "pcm16"), default="float32", help="stem WAV encoding")
    p.add_argument("--jobs", type=int, default=_default_jobs(), help="worker threads (default $MIXMAP_JOBS or 1)")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("simulate", help="emit a synthetic per-epoch metric log for a manifest")
    p.add_argument("--manifest", required=True, help="mixture manifest (JSONL)")
    p.add_argument("--learner", help="learner curve config JSON (defaults used when omitted)")
    p.add_argument("--epochs", type=int, required=True, help="epochs to simulate (>= 3)")
    p.add_argument("--seed", type=int, required=True, help="simulation seed")
    p.add_argument("--out", required=True, help="output metric log CSV")
    p.add_argument("--jobs", type=int, default=_default_jobs(), help="worker threads (default $MIXMAP_JOBS or 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("datamap", help="build the datamap (SVG + CSV + region map) from a metric log")
    p.add_argument("--log", required=True, help="metric log CSV (example_id,epoch,metric,value)")
    p.add_argument("--rule", help="region rule JSON (fractions; defaults 0.30/0.50/0.20)")
    p.add_argument("--keep-first-epoch", action="store_true", help="keep the earliest epoch instead of discarding it")
    p.add_argument("--out", required=True, help="output directory (datamap.svg, datamap.csv, regions.csv)")
    p.set_defaults(func=cmd_datamap)

    p = sub.add_parser("schedule", help="emit per-stage training manifests from regions or a factor curriculum")
    p.add_argument("--regions", help="region map CSV from the datamap step")
    p.add_argument("--order", help="stage ordering such as E/A/H")
    p.add_argument("--retention", choices=cur.RETENTIONS, help="keep earlier stages (cumulative) or not (forgetting)")
    p.add_argument("--include-unlabeled", choices=cur.UNLABELED_POLICIES, default="never", help="when the unlabeled band joins a stage")
    p.add_argument("--curriculum", help=f"curriculum JSON file or builtin name ({', '.join(cur.builtin_curriculum_names())})")
    p.add_argument("--pool", help="optional mixture manifest to filter example ids per stage (curriculum mode)")
    p.add_argument("--epochs", type=int, help="total epochs, split equally with earlier stages taking extras")
    p.add_argument("--name", default="region-schedule", help="run name for the descriptor")
    p.add_argument("--out", required=True, help="output directory (stage manifests + run.json)")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("plan", help="fixed-quantity region sampling plan (70%% target / 15%% / 15%%)")
    p.add_argument("--regions", required=True, help="region map CSV from the datamap step")
    p.add_argument("--target", required=True, choices=cur.CORE_REGIONS + ("all",), help="target region, or 'all' for a uniform draw")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--budget-fraction", type=float, default=0.7, help="budget as a fraction of all mapped examples (default 0.7)")
    group.add_argument("--budget", type=int, help="absolute example budget")
    p.add_argument("--seed", type=int, required=True, help="draw seed")
    p.add_argument("--out", required=True, help="output plan JSON")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser(
        "eval",
        help="score estimates against a manifest (energy-ratio SDR, NOT BSS-eval)",
        description="Scores <estimates>/<example_id>.wav against each record's clean target. "
        "SDR is the plain energy-ratio definition 10*log10(||ref||^2/||ref-est||^2) — the "
        "negated training loss — not the projection-based BSS-eval SDR; absolute values are "
        "not comparable to BSS-eval numbers.",
    )
    p.add_argument("--manifest", required=True, help="mixture manifest (JSONL)")
    p.add_argument("--estimates", required=True, help="directory of <example_id>.wav estimates")
    p.add_argument("--out", required=True, help="output CSV (example_id,sdr_db,input_sdr_db,isdr_db)")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help already printed
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="mixmap: %(message)s",
    )
    try:
        return args.func(args)
    except OSError as exc:
        print(f"mixmap: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"mixmap: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
