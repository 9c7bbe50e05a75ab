"""Command-line orchestration of the full pipeline.

Subcommands: gen-instances, cluster, solve, evaluate, encode-dataset,
experiment, compare.  Every run writes a manifest (input hashes, seeds,
tolerances, versions) sufficient to reproduce it; the experiment harness shells
out one process per solve.  Exit codes: 0 complete, 2 dro-infeasible,
3 iteration/time limit, 4 input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, ccg, climate, codec, evaluate, instance, solver, spbaseline
from .warmstart import FileDropProvider, HttpProvider
from .wesp import OPTIMALITY, WespSolver, default_seed_columns

log = logging.getLogger("greencap.cli")

EXIT_OK = 0
EXIT_DRO_INFEASIBLE = 2
EXIT_LIMIT = 3
EXIT_INPUT = 4


class InputError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir, command, args, extra=None):
    doc = {"command": command, "version": __version__,
           "solver_backend": solver.backend_name(),
           "args": {k: (str(v) if isinstance(v, Path) else v)
                    for k, v in vars(args).items() if k != "func"}}
    if extra:
        doc.update(extra)
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return doc


def _shipped_climate_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("greencap.data").joinpath("climate_synthetic.csv")))


def _shipped_base_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("greencap.data").joinpath("base_case.json")))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_instances(args) -> int:
    base = instance.load(args.base)
    bad = instance.validate(base)
    if bad:
        raise InputError(f"base instance invalid: {bad[0]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).spawn(args.count)
    paths = []
    for i in range(args.count):
        child = int(seeds[i].generate_state(1)[0])
        inst = instance.perturb(base, child,
                                cost_factor_range=tuple(args.cost_range),
                                tau_range=tuple(args.tau_range),
                                ambiguity_scale_range=tuple(args.scale_range))
        p = out / f"instance_{i:04d}.json"
        instance.save(inst, p)
        paths.append(str(p))
    _write_manifest(out, "gen-instances", args,
                    {"base_sha256": _sha256(args.base), "instances": paths})
    print(f"wrote {args.count} instances to {out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    inst = instance.load(args.instance)
    records = climate.load_climate_csv(args.climate)
    try:
        clusters = climate.clusters_from_climate(inst, records, args.clusters, args.seed)
    except climate.DegenerateInputError as exc:
        raise InputError(str(exc))
    total_q = sum(c.probability for c in clusters)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    climate.save_clusters(clusters, out)
    _write_manifest(out.parent, "cluster", args,
                    {"instance_sha256": _sha256(args.instance),
                     "climate_sha256": _sha256(args.climate),
                     "n_clusters": len(clusters), "probability_sum": total_q})
    print(f"wrote {len(clusters)} clusters to {out} (sum q = {total_q})")
    return EXIT_OK


def _make_provider(spec_str, inst, dataset_dir=None):
    if spec_str is None:
        return None
    if spec_str.startswith("http://") or spec_str.startswith("https://"):
        fc_path = Path(dataset_dir or ".") / "feature_codec.npz"
        if not fc_path.exists():
            raise InputError(f"HTTP warm start needs a fitted feature codec at {fc_path}")
        return HttpProvider(spec_str, inst, codec.FeatureCodec.load(fc_path))
    return FileDropProvider(Path(spec_str))


def cmd_solve(args) -> int:
    inst = instance.load(args.instance)
    bad = instance.validate(inst)
    if bad:
        raise InputError(f"instance invalid: {bad[0]}")
    clusters = climate.load_clusters(args.clusters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"instance_sha256": _sha256(args.instance),
             "clusters_sha256": _sha256(args.clusters)}
    if args.method in ("ccg-dro", "basic-ccg"):
        provider = _make_provider(args.warmstart, inst, args.warmstart)
        runner = ccg.run_ccg_dro if args.method == "ccg-dro" else ccg.run_basic_ccg
        outcome = runner(inst, clusters, tol=args.tol, iter_limit=args.iter_limit,
                         time_limit=args.time_limit,
                         warmstart_provider=provider,
                         surrogate_only=args.surrogate_only,
                         max_workers=args.workers,
                         trace_path=out / "bound_trace.csv")
        doc = {"status": outcome.status, "objective": outcome.objective,
               "lower_bound": None if not np.isfinite(outcome.lower_bound) else outcome.lower_bound,
               "upper_bound": None if not np.isfinite(outcome.upper_bound) else outcome.upper_bound,
               "iterations": outcome.iterations,
               "master_seconds": outcome.master_seconds,
               "subproblem_seconds": outcome.subproblem_seconds,
               "cut_counts": outcome.cut_counts,
               "total_cut_scenarios": outcome.total_cut_scenarios}
        (out / "outcome.json").write_text(json.dumps(doc, indent=1))
        if outcome.x is not None:
            (out / "decision.json").write_text(
                json.dumps(instance.decision_to_json(outcome.x), indent=1))
        _write_manifest(out, "solve", args, extra)
        print(f"{args.method}: {outcome.status}, objective {outcome.objective}, "
              f"{outcome.iterations} iterations")
        if outcome.status == ccg.STATUS_DRO_INFEASIBLE:
            return EXIT_DRO_INFEASIBLE
        if outcome.status in (ccg.STATUS_ITERATION_LIMIT, ccg.STATUS_TIME_LIMIT):
            return EXIT_LIMIT
        return EXIT_OK
    if args.method == "saa-sp":
        samples = spbaseline.make_sample_set(clusters, args.sampler,
                                             args.samples_per_cluster, args.seed)
        samples.save(out / "samples.json")
        outcome = spbaseline.solve_saa(inst, clusters, samples,
                                       time_limit=args.time_limit)
        doc = {"status": outcome.status, "objective": outcome.objective,
               "sampler": samples.descriptor, "wall_time": outcome.wall_time}
        (out / "outcome.json").write_text(json.dumps(doc, indent=1))
        if outcome.x is not None:
            (out / "decision.json").write_text(
                json.dumps(instance.decision_to_json(outcome.x), indent=1))
        _write_manifest(out, "solve", args, extra)
        print(f"saa-sp: {outcome.status}, objective {outcome.objective}")
        if outcome.status == "infeasible":
            return EXIT_DRO_INFEASIBLE
        if outcome.status != "optimal":
            return EXIT_LIMIT
        return EXIT_OK
    raise InputError(f"unknown method {args.method!r}")


def cmd_evaluate(args) -> int:
    inst = instance.load(args.instance)
    clusters = climate.load_clusters(args.clusters)
    with open(args.decision) as fh:
        x = instance.decision_from_json(json.load(fh))
    viol = instance.validate_decision(inst, x)
    if viol:
        raise InputError(f"decision invalid: {viol[0]}")
    if args.mode == "worstcase":
        report = evaluate.evaluate_worstcase(inst, clusters, x, label=args.label)
    else:
        samples = spbaseline.make_sample_set(clusters, args.sampler,
                                             args.samples_per_cluster, args.seed)
        report = evaluate.evaluate_sampled(inst, clusters, x, samples, label=args.label)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    _write_manifest(out, "evaluate", args,
                    {"instance_sha256": _sha256(args.instance),
                     "decision_sha256": _sha256(args.decision)})
    print(f"evaluated {args.label}: feasible={report.feasible}, "
          f"total={report.total_cost}")
    return EXIT_OK


def cmd_encode_dataset(args) -> int:
    """Solve a family of perturbed single-cluster instances and emit the
    (feature, image) training corpus from their worst-case supports."""
    base = instance.load(args.base)
    records = climate.load_climate_csv(args.climate)
    rng = np.random.default_rng(args.seed)
    artifacts = []
    hours_by_region = {}
    for r in records:
        hours_by_region.setdefault(r.region, []).append(r.hours)
    regions = sorted(hours_by_region)
    for i in range(args.count):
        inst = instance.perturb(base, int(rng.integers(0, 2**63 - 1)))
        nominal = inst.nominal_demand
        if nominal is None:
            raise InputError("base instance carries no nominal demand")
        samples = instance.sample_demand(nominal, max(args.demand_samples, 2),
                                         int(rng.integers(0, 2**63 - 1)))
        omega = np.array([hours_by_region[reg][int(rng.integers(0, len(hours_by_region[reg])))]
                          for reg in regions])[:inst.n_factories]
        clusters = climate.build_ambiguity(
            np.zeros(max(args.demand_samples, 2), dtype=int), {0: samples},
            scale=inst.ambiguity_scale, omega_per_cluster={0: omega},
            n_periods=inst.periods)
        outcome = ccg.run_ccg_dro(inst, clusters, tol=args.tol,
                                  iter_limit=args.iter_limit)
        if outcome.status != ccg.STATUS_OPTIMAL:
            log.warning("instance %d: %s; skipped", i, outcome.status)
            continue
        ws = WespSolver(inst, clusters[0])
        rep = ws.run_cg(outcome.x, OPTIMALITY,
                        initial_columns=default_seed_columns(clusters[0]))
        artifacts.append((outcome.x, inst, clusters[0], rep.distribution))
    if not artifacts:
        raise InputError("no solvable instances; nothing to encode")
    manifest = codec.emit_dataset(artifacts, args.out,
                                  images_per_item=args.images_per_item,
                                  rows=args.rows, weighting=args.weighting,
                                  seed=args.seed)
    print(f"emitted {manifest['item_count']} (feature, image) pairs to {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    """Batch runner: one subprocess per (instance, method) for isolation."""
    inst_dir = Path(args.instances)
    paths = sorted(inst_dir.glob("instance_*.json"))
    if not paths:
        raise InputError(f"no instance files under {inst_dir}")
    methods = args.methods.split(",")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in paths:
        for method in methods:
            run_dir = out / f"{p.stem}__{method}"
            cmd = [sys.executable, "-m", "greencap.cli", "solve",
                   "--instance", str(p), "--clusters", str(args.clusters),
                   "--method", method, "--tol", str(args.tol),
                   "--iter-limit", str(args.iter_limit), "--out", str(run_dir),
                   "--seed", str(args.seed)]
            if args.time_limit:
                cmd += ["--time-limit", str(args.time_limit)]
            if args.warmstart:
                cmd += ["--warmstart", args.warmstart]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            outcome_path = run_dir / "outcome.json"
            doc = json.loads(outcome_path.read_text()) if outcome_path.exists() else {}
            rows.append({
                "instance": p.stem, "method": method,
                "exit_code": proc.returncode,
                "status": doc.get("status"), "objective": doc.get("objective"),
                "iterations": doc.get("iterations"),
                "master_seconds": doc.get("master_seconds"),
                "subproblem_seconds": doc.get("subproblem_seconds"),
                "total_cut_scenarios": doc.get("total_cut_scenarios"),
            })
    agg = out / "aggregate.csv"
    with open(agg, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    _write_manifest(out, "experiment", args, {"runs": len(rows)})
    print(f"experiment complete: {len(rows)} runs, aggregate at {agg}")
    return EXIT_OK


def cmd_compare(args) -> int:
    groups = {}
    for spec_str in args.reports:
        label, _, path = spec_str.partition("=")
        if not path:
            label, path = Path(spec_str).stem, spec_str
        docs = json.loads(Path(path).read_text())
        docs = docs if isinstance(docs, list) else [docs]
        reps = []
        for d in docs:
            reps.append(evaluate.EvaluationReport(
                label=d["label"], distribution=d["distribution"],
                feasible=d["feasible"], strategic_cost=d["strategic_cost"],
                strategic_split=d["strategic_split"],
                tactical_cost=d["tactical_cost"] if d["tactical_cost"] is not None else float("inf"),
                total_cost=d["total_cost"] if d["total_cost"] is not None else float("inf"),
                avg_green_penetration_pct=d["avg_green_penetration_pct"],
                avg_service_level_pct=d["avg_service_level_pct"],
                infeasible_scenarios=d.get("infeasible_scenarios", 0),
                scenario_count=d.get("scenario_count", 0)))
        groups[label] = reps
    table = evaluate.compare(groups)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(json.dumps(table, indent=1))
    evaluate.write_comparison_csv(table, out / "comparison.csv")
    print(f"comparison written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="greencap",
        description="Distributionally robust green-manufacturing capacity planning")
    ap.add_argument("--config", type=Path, default=None,
                    help="JSON file whose entries override command-line flags")
    ap.add_argument("--solver", default=None,
                    help="backend name (also via GREENCAP_SOLVER env var)")
    ap.add_argument("--log-file", type=Path, default=None,
                    help="line-oriented per-solve log records")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-instances", help="emit a perturbation family around a base instance")
    g.add_argument("--base", type=Path, default=_shipped_base_path())
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cost-range", type=float, nargs=2, default=[0.8, 1.2])
    g.add_argument("--tau-range", type=float, nargs=2, default=[0.01, 0.20])
    g.add_argument("--scale-range", type=float, nargs=2, default=[1.0, 4.0])
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_gen_instances)

    c = sub.add_parser("cluster", help="build climate clusters and ambiguity sets")
    c.add_argument("--instance", type=Path, default=_shipped_base_path())
    c.add_argument("--climate", type=Path, default=_shipped_climate_path())
    c.add_argument("--clusters", type=int, required=True, dest="clusters")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", type=Path, required=True)
    c.set_defaults(func=cmd_cluster)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("--instance", type=Path, required=True)
    s.add_argument("--clusters", type=Path, required=True)
    s.add_argument("--method", choices=["ccg-dro", "basic-ccg", "saa-sp"],
                   default="ccg-dro")
    s.add_argument("--tol", type=float, default=ccg.DEFAULT_TOL)
    s.add_argument("--iter-limit", type=int, default=100)
    s.add_argument("--time-limit", type=float, default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--warmstart", default=None,
                   help="file-drop directory or http:// endpoint")
    s.add_argument("--surrogate-only", action="store_true",
                   help="experimental: let generated scenarios replace exact "
                        "subproblem passes while the bound gap is wide")
    s.add_argument("--sampler", choices=[spbaseline.UNIFORM, spbaseline.TRUNCATED_GAUSSIAN],
                   default=spbaseline.UNIFORM)
    s.add_argument("--samples-per-cluster", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="cross-validate a saved decision")
    e.add_argument("--instance", type=Path, required=True)
    e.add_argument("--clusters", type=Path, required=True)
    e.add_argument("--decision", type=Path, required=True)
    e.add_argument("--mode", choices=["worstcase", "sampled"], default="worstcase")
    e.add_argument("--sampler", choices=[spbaseline.UNIFORM, spbaseline.TRUNCATED_GAUSSIAN],
                   default=spbaseline.UNIFORM)
    e.add_argument("--samples-per-cluster", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--label", default="plan")
    e.add_argument("--out", type=Path, required=True)
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("encode-dataset", help="emit the (feature, image) training corpus")
    d.add_argument("--base", type=Path, default=_shipped_base_path())
    d.add_argument("--climate", type=Path, default=_shipped_climate_path())
    d.add_argument("--count", type=int, required=True)
    d.add_argument("--demand-samples", type=int, default=40)
    d.add_argument("--images-per-item", type=int, default=12)
    d.add_argument("--rows", type=int, default=codec.DEFAULT_IMAGE_ROWS)
    d.add_argument("--weighting", choices=["uniform", "probability"], default="uniform")
    d.add_argument("--tol", type=float, default=ccg.DEFAULT_TOL)
    d.add_argument("--iter-limit", type=int, default=60)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", type=Path, required=True)
    d.set_defaults(func=cmd_encode_dataset)

    x = sub.add_parser("experiment", help="batch solves over an instance family")
    x.add_argument("--instances", type=Path, required=True)
    x.add_argument("--clusters", type=Path, required=True)
    x.add_argument("--methods", default="ccg-dro,basic-ccg")
    x.add_argument("--tol", type=float, default=ccg.DEFAULT_TOL)
    x.add_argument("--iter-limit", type=int, default=100)
    x.add_argument("--time-limit", type=float, default=None)
    x.add_argument("--warmstart", default=None)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", type=Path, required=True)
    x.set_defaults(func=cmd_experiment)

    k = sub.add_parser("compare", help="align evaluation reports into one table")
    k.add_argument("--reports", nargs="+", required=True,
                   help="label=path pairs (or bare paths)")
    k.add_argument("--out", type=Path, required=True)
    k.set_defaults(func=cmd_compare)
    return ap


def _apply_config(args, parser):
    if args.config is None:
        return args
    try:
        overrides = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"bad config file: {exc}")
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise InputError(f"config key {key!r} matches no flag")
        setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(args, parser)
        if args.solver:
            os.environ["GREENCAP_SOLVER"] = args.solver
        level = logging.WARNING - 10 * min(args.verbose, 2)
        logging.basicConfig(level=level)
        if args.log_file:
            handler = logging.FileHandler(args.log_file)
            handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(message)s"))
            handler.setLevel(logging.INFO)
            logging.getLogger("greencap").addHandler(handler)
            logging.getLogger("greencap").setLevel(min(level, logging.INFO))
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
