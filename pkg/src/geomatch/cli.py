"""Command-line pipeline: generate -> train -> predict -> rank/simulate/....

Every subcommand reads and updates the workdir manifest. Failures print a
single-line JSON error to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import biasaudit
from .boosting import (TuningGrid, fit_location_models, load_modelset,
                       modelset_hash, save_modelset, variable_importance)
from .datamodel import (load_dataset, load_locations, load_schema,
                        write_dataset, write_locations, write_schema)
from .manifest import PipelineManifest
from .preferences import (fit_mnl, load_mnl, rank_all, save_mnl,
                          write_preference_report)
from .recommender import (build_prediction_matrix, landing_ranks, load_matrix,
                          save_matrix)
from .seeds import derive_seed
from .synth import GeneratorConfig, generate_synthetic, load_ground_truth, save_ground_truth

DEFAULT_MNL_FEATURES = ("education", "age_band", "language", "prior_permit")


def _parse_phi(token: str):
    return None if token.lower() == "none" else int(token)


def _split_list(token: str):
    return [t.strip() for t in token.split(",") if t.strip()]


def cmd_generate(args) -> int:
    workdir = Path(args.out)
    workdir.mkdir(parents=True, exist_ok=True)
    config = GeneratorConfig(
        n=args.n, k=args.k, selection=args.selection, seed=args.seed,
        constant_v=args.constant_v,
    )
    dataset, truth = generate_synthetic(config)
    write_dataset(dataset, workdir / "dataset.csv")
    write_schema(dataset.schema, workdir / "schema.json")
    write_locations(dataset.locations, workdir / "locations.json")
    save_ground_truth(truth, workdir / "groundtruth.json")

    manifest = PipelineManifest.create(workdir, root_seed=args.seed)
    manifest.register("dataset", "dataset.csv")
    manifest.register("dataset_locations", "dataset.locations.json")
    manifest.register("schema", "schema.json")
    manifest.register("locations", "locations.json")
    manifest.register("groundtruth", "groundtruth.json")
    print(f"generated n={args.n} k={args.k} selection={args.selection} -> {workdir}")
    return 0


def _load_world(manifest: PipelineManifest):
    manifest.verify("dataset", "schema", "locations")
    schema = load_schema(manifest.path("schema"))
    locations = load_locations(manifest.path("locations"))
    dataset = load_dataset(manifest.path("dataset"), schema, locations)
    return dataset


def cmd_train(args) -> int:
    manifest = PipelineManifest.load(args.workdir)
    dataset = _load_world(manifest)
    grid = TuningGrid.paper() if args.grid == "paper" else TuningGrid.desk()
    seed = derive_seed(manifest.root_seed, "train")
    modelset = fit_location_models(
        dataset, grid, min_rows=args.min_rows, seed=seed, folds=args.folds,
        cap_quantile=args.cap_quantile, depth_mode=args.depth_mode, n_jobs=args.jobs,
    )
    save_modelset(modelset, manifest.workdir / "models")
    manifest.register("models", "models", digest=modelset_hash(manifest.workdir / "models"))

    with open(manifest.workdir / "tuning_report.csv", "w", encoding="utf-8") as fh:
        fh.write("location,depth,rate,bag,best_trees,cv_rmse\n")
        for loc_id in sorted(modelset.metadata):
            md = modelset.metadata[loc_id]
            fh.write(f"{loc_id},{md['depth']},{md['rate']},{md['bag']},"
                     f"{md['n_trees']},{md['cv_rmse']}\n")
    manifest.register("tuning_report", "tuning_report.csv")

    importance = {
        str(loc_id): variable_importance(modelset.models[loc_id])
        for loc_id in sorted(modelset.models)
    }
    (manifest.workdir / "importance.json").write_text(
        json.dumps(importance, indent=2, sort_keys=True), encoding="utf-8"
    )
    manifest.register("importance", "importance.json")

    mnl = fit_mnl(dataset, _split_list(args.mnl_features), l2=args.mnl_l2)
    save_mnl(mnl, manifest.workdir / "mnl.json")
    manifest.register("mnl", "mnl.json")
    ranking = rank_all(mnl, dataset, seed=derive_seed(manifest.root_seed, "ranking"))
    write_preference_report(ranking, manifest.workdir / "preferences.csv")
    manifest.register("preferences", "preferences.csv")

    print(f"trained {len(modelset.models)} location models "
          f"({len(modelset.unmodeled)} unmodeled), mnl iters={mnl.iterations}")
    return 0


def cmd_predict(args) -> int:
    manifest = PipelineManifest.load(args.workdir)
    dataset = _load_world(manifest)
    manifest.verify("models")
    modelset = load_modelset(manifest.path("models"))
    matrix = build_prediction_matrix(
        modelset, dataset, outcome_mode=args.outcome_mode,
        spouse_ratio=args.spouse_ratio,
    )
    save_matrix(matrix, manifest.workdir / "matrix.csv")
    manifest.register("matrix", "matrix.csv")
    manifest.register("matrix_meta", "matrix.meta.json")
    print(f"matrix {matrix.shape[0]}x{matrix.shape[1]} mode={args.outcome_mode}")
    return 0


def _load_sim_inputs(manifest: PipelineManifest):
    dataset = _load_world(manifest)
    manifest.verify("matrix", "mnl")
    matrix = load_matrix(manifest.path("matrix"))
    mnl = load_mnl(manifest.path("mnl"))
    ranking = rank_all(mnl, dataset, seed=derive_seed(manifest.root_seed, "ranking"))
    return bt.SimulationInputs(matrix, dataset, ranking)


def cmd_rank(args) -> int:
    manifest = PipelineManifest.load(args.workdir)
    dataset = _load_world(manifest)
    manifest.verify("matrix")
    matrix = load_matrix(manifest.path("matrix"))
    ranks = landing_ranks(matrix, dataset)
    with open(manifest.workdir / "ranks.csv", "w", encoding="utf-8") as fh:
        fh.write("individual_id,landing,rank\n")
        for rec, rank in zip(dataset.records, ranks):
            fh.write(f"{rec.id},{rec.landing},{rank}\n")
    manifest.register("ranks", "ranks.csv")
    valid = ranks[ranks > 0]
    print(f"mean landing rank {valid.mean():.2f} over {valid.size} individuals "
          f"(K={matrix.shape[1]})")
    return 0


def _sim_config(args, manifest) -> bt.SimulationConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    overrides = {
        "pi_max": args.pi_max,
        "compliance_mode": args.compliance_mode,
        "phi": _parse_phi(args.phi) if args.phi is not None else None,
        "z": args.z,
        "n_runs": args.n_runs,
        "outcome_mode": args.outcome_mode,
        "seed": args.seed,
        "min_cell": args.min_cell,
    }
    if args.excluded_locations:
        overrides["excluded_locations"] = [int(t) for t in _split_list(args.excluded_locations)]
    for key, val in overrides.items():
        if val is not None:
            base[key] = val
    if args.phi is not None:
        base["phi"] = _parse_phi(args.phi)
    base.setdefault("pi_max", 0.3)
    base.setdefault("seed", manifest.root_seed)
    return bt.SimulationConfig.from_json(base)


def cmd_simulate(args) -> int:
    manifest = PipelineManifest.load(args.workdir)
    inputs = _load_sim_inputs(manifest)
    config = _sim_config(args, manifest)
    summary = bt.simulate(inputs, config)
    bt.save_summary(summary, manifest.workdir / "summary.json")
    bt.save_shift(summary, manifest.workdir / "shift.csv")
    bt.save_subgroups(summary, manifest.workdir / "subgroups.csv")
    manifest.register("summary", "summary.json")
    manifest.register("shift", "shift.csv")
    manifest.register("subgroups", "subgroups.csv")
    if args.trace:
        with open(manifest.workdir / "runs.csv", "w", encoding="utf-8") as fh:
            fh.write("run,cohort_gain,complier_gain,complier_fraction,emptied\n")
            for r, row in enumerate(summary.per_run):
                fh.write(f"{r},{row[0]!r},{row[1]!r},{row[2]!r},{row[3]}\n")
        manifest.register("runs", "runs.csv")
    print(f"cohort gain {summary.cohort_gain:.1f} complier gain "
          f"{summary.complier_gain:.1f} fraction {summary.complier_fraction:.3f}")
    return 0


def cmd_sweep(args) -> int:
    manifest = PipelineManifest.load(args.workdir)
    inputs = _load_sim_inputs(manifest)
    pis = [float(t) for t in _split_list(args.pi_max)]
    phis = [_parse_phi(t) for t in _split_list(args.phi)]
    seed = args.seed if args.seed is not None else manifest.root_seed
    configs = [
        bt.SimulationConfig(
            pi_max=pi, phi=phi, z=args.z, n_runs=args.n_runs or 100,
            outcome_mode=args.outcome_mode or "income", seed=seed,
        )
        for pi in pis for phi in phis
    ]
    rows = bt.sweep(inputs, configs)
    bt.save_sweep(rows, manifest.workdir / "sweep.csv")
    manifest.register("sweep", "sweep.csv")
    print(f"swept {len(rows)} scenarios -> sweep.csv")
    return 0


def cmd_loo(args) -> int:
    manifest = PipelineManifest.load(args.workdir)
    inputs = _load_sim_inputs(manifest)
    config = _sim_config(args, manifest)
    out = bt.leave_one_out(inputs, config)
    (manifest.workdir / "loo.json").write_text(
        json.dumps(out, indent=2, sort_keys=True), encoding="utf-8"
    )
    with open(manifest.workdir / "loo.csv", "w", encoding="utf-8") as fh:
        fh.write("excluded,cohort_gain\n")
        for row in out["per_location"]:
            fh.write(f"{row['excluded']},{row['cohort_gain']!r}\n")
    manifest.register("loo", "loo.csv")
    manifest.register("loo_json", "loo.json")
    print(f"leave-one-out mean {out['mean']:.1f} ci95 +/-{out['ci95']:.1f} "
          f"coverage [{out['coverage_interval'][0]:.1f}, {out['coverage_interval'][1]:.1f}]")
    return 0


def cmd_audit(args) -> int:
    manifest = PipelineManifest.load(args.workdir)
    dataset = _load_world(manifest)
    manifest.verify("groundtruth")
    truth = load_ground_truth(manifest.path("groundtruth"))
    report = biasaudit.audit(dataset, truth, _split_list(args.strata), args.min_cell)
    biasaudit.save_bias_report(report, manifest.workdir / "bias_report.csv")
    manifest.register("bias_report", "bias_report.csv")
    interior = report.interior()
    print(f"audited {len(report.cells)} cells ({len(interior)} interior); "
          f"identity max err {report.max_identity_error():.2e}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.workdir)
    host, _, port = args.bind.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geomatch",
        description="location decision helper: synthetic data, per-location "
                    "earnings models, recommendations, and backtests",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic cohort")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--selection", default="observables-only",
                   choices=["observables-only", "u-confounded", "v-confounded"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--constant-v", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit per-location models and the preference model")
    p.add_argument("--workdir", required=True)
    p.add_argument("--grid", default="desk", choices=["desk", "paper"])
    p.add_argument("--min-rows", type=int, default=50)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--cap-quantile", type=float, default=0.99)
    p.add_argument("--depth-mode", default="depth", choices=["depth", "max-splits"])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--mnl-features", default=",".join(DEFAULT_MNL_FEATURES))
    p.add_argument("--mnl-l2", type=float, default=1e-3)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="build the client x location prediction matrix")
    p.add_argument("--workdir", required=True)
    p.add_argument("--outcome-mode", "--mode", dest="outcome_mode", default="income",
                   choices=["income", "rent-adjusted", "joint-per-adult"])
    p.add_argument("--spouse-ratio", type=float, default=0.85)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rank", help="rank each actual landing within the matrix row")
    p.add_argument("--workdir", required=True)
    p.set_defaults(func=cmd_rank)

    def _sim_flags(p):
        p.add_argument("--workdir", required=True)
        p.add_argument("--config", help="JSON scenario file; flags override")
        p.add_argument("--pi-max", type=float, default=None)
        p.add_argument("--compliance-mode", default=None,
                       choices=["linear-in-quantile", "constant"])
        p.add_argument("--phi", default=None, help="count or 'none'")
        p.add_argument("--z", type=int, default=None)
        p.add_argument("--n-runs", "--runs", dest="n_runs", type=int, default=None)
        p.add_argument("--outcome-mode", default=None,
                       choices=["income", "rent-adjusted", "joint-per-adult"])
        p.add_argument("--excluded-locations", "--exclude", dest="excluded_locations",
                       default=None, help="comma-separated location ids")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--min-cell", type=int, default=None)

    p = sub.add_parser("simulate", help="run one backtest scenario")
    _sim_flags(p)
    p.add_argument("--trace", action="store_true", help="also write per-run CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid of scenarios over pi_max x phi")
    p.add_argument("--workdir", required=True)
    p.add_argument("--pi-max", required=True, help="comma-separated values")
    p.add_argument("--phi", required=True, help="comma-separated counts or 'none'")
    p.add_argument("--z", type=int, default=3)
    p.add_argument("--n-runs", "--runs", dest="n_runs", type=int, default=None)
    p.add_argument("--outcome-mode", default=None,
                   choices=["income", "rent-adjusted", "joint-per-adult"])
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("loo", help="leave-one-location-out robustness battery")
    _sim_flags(p)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("audit", help="selection-bias decomposition on ground truth")
    p.add_argument("--workdir", required=True)
    p.add_argument("--strata", default="education,age_band")
    p.add_argument("--min-cell", type=int, default=50)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("serve", help="start the recommendation HTTP service")
    p.add_argument("--workdir", default=None)
    p.add_argument("--bind", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    import os

    args = build_parser().parse_args(argv)
    if args.command == "serve":
        args.workdir = args.workdir or os.environ.get("GEOMATCH_MANIFEST")
        if args.workdir and str(args.workdir).endswith("manifest.json"):
            args.workdir = str(Path(args.workdir).parent)
        args.bind = args.bind or os.environ.get("GEOMATCH_BIND", "127.0.0.1:8808")
        if not args.workdir:
            print(json.dumps({"error": "ConfigError",
                              "message": "serve needs --workdir or GEOMATCH_MANIFEST"}),
                  file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except Exception as exc:  # single-line machine-parseable error contract
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
