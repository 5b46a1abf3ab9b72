"""Command line interface: ``gridy <subcommand> ...``.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, artifacts
from .data import load_dataset, write_dataset
from .errors import ConfigError, GridyError, NumericalError, StageError
from .experiment import evaluate_result, replication_seed, run_experiment, write_rows
from .parallel import set_max_threads
from .pipeline import GridyResult, PipelineConfig, new_result, run_pipeline, run_stages
from .plotdata import emit_plot_data
from .simulation import SimulationConfig, read_truth, simulate_dataset, write_truth

log = logging.getLogger("gridy")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
THREADS_ENV = "GRIDY_THREADS"


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def _sim_grid(path, seed):
    obj = _read_json(path)
    items = obj if isinstance(obj, list) else obj.get("grid", [obj]) if isinstance(obj, dict) else None
    if not items:
        raise ConfigError("simulation config must be an object, a list of objects or {'grid': [...]}")
    grid = []
    for item in items:
        if not isinstance(item, dict):
            raise ConfigError("every simulation config must be a JSON object")
        cfg = SimulationConfig.from_dict(item)
        grid.append(cfg.with_(seed=seed) if seed is not None else cfg)
    return grid


def _pipeline_config(args, **extra):
    base = {}
    if getattr(args, "config", None):
        base = _read_json(args.config)
        if not isinstance(base, dict):
            raise ConfigError("pipeline config must be a JSON object")
    flags = {
        "seed": "seed", "xi": "xi", "reps": "reps", "ajive_reps": "ajive_reps", "rank": "rank",
        "rank_joint": "rank_joint", "rank_group": "rank_group", "model": "model", "tol": "tol",
        "max_iter": "max_iter", "n_starts": "n_starts", "solver": "solver", "order": "var_order", "covariance": "covariance",
        "noise_scale": "noise_scale", "max_initial_rank": "max_initial_rank", "stages": "stages",
    }
    for attr, key in flags.items():
        v = getattr(args, attr, None)
        if v is not None:
            base[key] = v
    if getattr(args, "no_center", False):
        base["center"] = False
    base.update(extra)
    return PipelineConfig.from_dict(base)


# ---------------------------------------------------------------- commands


def cmd_simulate(args):
    grid = _sim_grid(args.sim_config, args.seed)
    if args.out is None and args.emit_data is None:
        raise ConfigError("simulate needs --out and/or --emit-data")
    if args.emit_data:
        root = Path(args.emit_data)
        for i, cfg in enumerate(grid):
            d = root if len(grid) == 1 else root / f"cell{i + 1:02d}"
            ds, truth = simulate_dataset(cfg.with_(seed=replication_seed(cfg.seed, 0)))
            write_dataset(ds, d)
            write_truth(truth, d / "truth.json", subjects=ds.subjects)
            artifacts.dump_json(d / "simulation.json", cfg.to_dict())
            log.info("wrote simulated dataset to %s", d)
    if args.out:
        options = _pipeline_config(args)
        report = run_experiment(grid, options, reps=args.n_reps, rank_mode=args.rank_mode)
        report.to_csv(args.out)
        if args.rank_freq:
            report.rank_frequency_csv(args.rank_freq)
        if args.plot_data:
            emit_plot_data(report, args.plot_data)
        if report.failures:
            log.warning("%d replication(s) failed", len(report.failures))
    return EXIT_OK


def _load(args):
    return load_dataset(args.manifest, center=not args.no_center)


def cmd_rank(args):
    ds = _load(args)
    cfg = _pipeline_config(args)
    res = run_stages(new_result(ds, cfg), ["rank"])
    artifacts.write_rank(res, args.out)
    print(f"voted rank: {res.initial_rank}")
    return EXIT_OK


def cmd_segment(args):
    ds = _load(args)
    cfg = _pipeline_config(args)
    res = new_result(ds, cfg)
    if cfg.rank is None:
        ranks, voted, report = artifacts.load_rank(args.ranks) if args.ranks else (None, None, None)
        if ranks is None:
            raise ConfigError("segment needs --ranks rank.json or --rank")
        missing = set(ds.subjects) - set(ranks)
        if missing:
            raise ConfigError(f"rank report lacks subjects {sorted(missing)}")
        res.rank_report = report
        res.subject_ranks = {s: ranks[s] for s in ds.subjects}
        res.excluded = {s: "initial rank 0" for s, r in res.subject_ranks.items() if r == 0}
        res.initial_rank = voted
    else:
        run_stages(res, ["rank"])
    run_stages(res, ["segment"])
    artifacts.write_segment(res, args.out)
    print(f"joint rank: {res.joint_rank}, group rank: {res.group_rank}")
    return EXIT_OK


def cmd_fit(args):
    cfg = _pipeline_config(args)
    res = GridyResult(dataset=None, config=cfg)
    artifacts.load_segment(args.segments, res)
    if cfg.rank_joint is not None and cfg.rank_joint != res.joint_rank:
        raise ConfigError(f"--rank-joint {cfg.rank_joint} differs from the segmented joint rank {res.joint_rank}")
    if cfg.rank_group is not None:
        log.info("group rank overridden: %d (segmentation gave %d)", cfg.rank_group, res.group_rank)
        res.group_rank = cfg.rank_group
    run_stages(res, ["fit"])
    artifacts.write_fit(res, args.out)
    return EXIT_OK


def cmd_dynamics(args):
    ds = _load(args)
    cfg = _pipeline_config(args)
    res = new_result(ds, cfg)
    artifacts.load_fit(args.fit, res)
    missing = set(res.fit_subjects) - set(ds.subjects)
    if missing:
        raise ConfigError(f"manifest lacks fitted subjects {sorted(missing)}")
    run_stages(res, ["dynamics"])
    artifacts.write_dynamics(res, args.out)
    return EXIT_OK


def cmd_network(args):
    cfg = _pipeline_config(args)
    res = GridyResult(dataset=None, config=cfg)
    artifacts.load_dynamics(args.dyn, res)
    if any(dyn.order != 1 for dyn in res.dynamics.values()):
        raise ConfigError("network conversion needs VAR(1) dynamics")
    run_stages(res, ["network"])
    summary = artifacts.write_network(res, args.out)
    bad = {s: r for s, r in summary["directed_rank"].items() if r > summary["rank_bound"]}
    if bad:
        raise NumericalError(f"directed network rank exceeds r_J + r_G for {sorted(bad)}")
    return EXIT_OK


def cmd_evaluate(args):
    ds = load_dataset(args.manifest, center=not args.no_center)
    truth, truth_subjects = read_truth(args.truth)
    cfg = PipelineConfig(center=not args.no_center)
    res = new_result(ds, cfg)
    artifacts.load_dynamics(args.dyn, res)
    rows = [{"rep": 0, "structure": st, "measure": m, "value": v, "status": status}
            for st, m, v, status in evaluate_result(res, truth, truth_subjects)]
    write_rows(args.out, ("rep", "structure", "measure", "value", "status"), rows)
    for r in rows:
        print(f"{r['structure']:7s} {r['measure']:7s} {r['value']:.4f}")
    return EXIT_OK


def cmd_pipeline(args):
    cfg = _pipeline_config(args, manifest=str(args.manifest), out=str(args.out))
    res = run_pipeline(cfg)
    out = Path(args.out)
    if args.plot_data:
        emit_plot_data(res, out / "plots")
    if args.truth:
        truth, truth_subjects = read_truth(args.truth)
        rows = [{"rep": 0, "structure": st, "measure": m, "value": v, "status": status}
                for st, m, v, status in evaluate_result(res, truth, truth_subjects)]
        write_rows(out / "evaluate.csv", ("rep", "structure", "measure", "value", "status"), rows)
    print(f"initial rank {res.initial_rank}, joint rank {res.joint_rank}, group rank {res.group_rank}; "
          f"{len(res.fit_subjects)} subjects fitted, {len(res.excluded)} excluded")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_rank_opts(p, reps_flag="--reps"):
    p.add_argument("--xi", type=float, default=None, help="angle bound fraction (default 0.5)")
    p.add_argument(reps_flag, dest="reps", type=int, default=None, help="bootstrap replications L (default 100)")
    p.add_argument("--noise-scale", choices=["paper", "sqrt"], default=None,
                   help="imputed noise magnitude rule (default paper)")


def _add_fit_opts(p):
    p.add_argument("--model", choices=["pf2", "ind"], default=None, help="factor model (default pf2)")
    p.add_argument("--tol", type=float, default=None, help="relative SSE tolerance (default 1e-8)")
    p.add_argument("--max-iter", type=int, default=None, help="ALS iteration cap (default 500)")
    p.add_argument("--n-starts", type=int, default=None, help="random starts (default 5)")
    p.add_argument("--solver", choices=["als", "hybrid"], default=None,
                   help="als, or als warm-up then quasi-Newton (default als)")


def _add_center(p):
    p.add_argument("--no-center", action="store_true", help="do not center columns per subject")


def build_parser():
    ap = argparse.ArgumentParser(prog="gridy", description="Group integrative dynamic factor models.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--threads", type=int, default=None,
                    help=f"thread cap for all stages (default: ${THREADS_ENV} or 1)")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate datasets and run the Monte-Carlo evaluation")
    p.add_argument("--config", dest="sim_config", required=True,
                   help="simulation config JSON (object, list, or {'grid': [...]})")
    p.add_argument("--reps", dest="n_reps", type=int, default=20, help="replications per config (default 20)")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--out", default=None, help="tidy results CSV")
    p.add_argument("--emit-data", default=None, help="directory for one simulated dataset per config")
    p.add_argument("--rank-mode", choices=["oracle", "estimated"], default="oracle",
                   help="use true ranks or estimate them (default oracle)")
    p.add_argument("--rank-freq", default=None, help="rank frequency CSV")
    p.add_argument("--plot-data", default=None, help="directory for plot tables")
    p.add_argument("--pipeline-config", dest="config", default=None, help="pipeline options JSON")
    p.add_argument("--ajive-reps", type=int, default=None, help="segmentation resampling draws (default 100)")
    _add_rank_opts(p, "--boot-reps")
    _add_fit_opts(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rank", help="per-subject rank selection by rotational bootstrap")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="rank report JSON")
    _add_rank_opts(p)
    _add_center(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("segment", help="joint / group-individual segmentation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ranks", default=None, help="rank report JSON from 'gridy rank'")
    p.add_argument("--rank", type=int, default=None, help="initial rank for every subject (skips --ranks)")
    p.add_argument("--rank-joint", type=int, default=None, help="joint rank override")
    p.add_argument("--rank-group", type=int, default=None, help="group rank override")
    p.add_argument("--reps", dest="ajive_reps", type=int, default=None, help="resampling draws (default 100)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="segmentation directory")
    _add_center(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("fit", help="SCA-PF2 / SCA-IND fits of the segmented blocks")
    p.add_argument("--segments", required=True, help="directory from 'gridy segment'")
    p.add_argument("--rank-joint", type=int, default=None)
    p.add_argument("--rank-group", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="fit directory")
    _add_fit_opts(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("dynamics", help="factor refit and Yule-Walker VAR estimation")
    p.add_argument("--fit", required=True, help="directory from 'gridy fit'")
    p.add_argument("--manifest", required=True)
    p.add_argument("--order", type=int, default=None, help="VAR order (default 1)")
    p.add_argument("--out", required=True, help="dynamics directory")
    _add_center(p)
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("network", help="observation-level VAR networks")
    p.add_argument("--dyn", required=True, help="directory from 'gridy dynamics'")
    p.add_argument("--covariance", choices=["paper", "derived"], default=None,
                   help="innovation covariance formula (default paper)")
    p.add_argument("--out", required=True, help="network directory")
    p.set_defaults(func=cmd_network)

    p = sub.add_parser("evaluate", help="compare estimates against simulation truth")
    p.add_argument("--dyn", required=True, help="directory from 'gridy dynamics'")
    p.add_argument("--manifest", required=True)
    p.add_argument("--truth", required=True, help="truth.json written by 'gridy simulate --emit-data'")
    p.add_argument("--out", required=True, help="tidy measures CSV")
    _add_center(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run every stage and write an artifact directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--config", default=None, help="pipeline options JSON (flags take precedence)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ajive-reps", type=int, default=None, help="segmentation resampling draws (default 100)")
    p.add_argument("--rank", type=int, default=None, help="initial rank override")
    p.add_argument("--rank-joint", type=int, default=None, help="joint rank override")
    p.add_argument("--rank-group", type=int, default=None, help="group rank override")
    p.add_argument("--max-initial-rank", type=int, default=None, help="exclude subjects above this rank")
    p.add_argument("--order", type=int, default=None, help="VAR order (default 1)")
    p.add_argument("--covariance", choices=["paper", "derived"], default=None)
    p.add_argument("--stages", nargs="+", default=None, help="stages to run (prefix of the full order)")
    p.add_argument("--truth", default=None, help="truth.json; writes evaluate.csv")
    p.add_argument("--plot-data", action="store_true", help="also write plot tables under plots/")
    _add_rank_opts(p)
    _add_fit_opts(p)
    _add_center(p)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(level)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            set_max_threads(args.threads)
        return args.func(args) or EXIT_OK
    except StageError as exc:
        print(f"gridy: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NumericalError as exc:
        print(f"gridy: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, OSError) as exc:
        print(f"gridy: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GridyError as exc:
        print(f"gridy: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        set_max_threads(None)
        log.removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
