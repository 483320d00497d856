"""Command-line entry point: ``deepacc <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import DomainError, ScenarioError
from ..perception import Diversity, Ensemble, SensorModel, build_ensemble, fuse_batch, generate_training_set, synth_batch
from ..perception.ensemble import DEFAULT_SEEDS
from ..perception.training import TrainingSet
from .batch import batch_run
from .metrics import MetricsReport, compute_metrics
from .scenario import (
    ScenarioConfig, load_scenario_config, read_records, resolve_ensemble, resolve_lead,
    resolve_set_speed, run_scenario, write_records,
)
from .trajectories import load_trajectories, synthetic_batch

log = logging.getLogger("deepacc")


def _config(args) -> ScenarioConfig:
    cfg = load_scenario_config(args.config) if getattr(args, "config", None) else ScenarioConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "ood", False):
        over["ood"] = True
    if getattr(args, "dump_qp", None):
        over["dump_qp"] = args.dump_qp
    if getattr(args, "ensemble", None):
        over["ensemble"] = args.ensemble
    if getattr(args, "allow_negative_margin", False):
        over["mpc"] = replace(cfg.mpc, allow_negative_margin=True)
    return replace(cfg, **over) if over else cfg


def _sensor(args) -> SensorModel:
    if getattr(args, "config", None):
        cfg = load_scenario_config(args.config)
        if cfg.sensor is not None:
            return cfg.sensor
    return SensorModel()


def cmd_gen_data(args) -> int:
    data = generate_training_set(_sensor(args), args.n, seed=args.seed, ood=args.ood)
    data.write_csv(args.out)
    print(f"wrote {len(data)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    sensor = _sensor(args)
    if args.data:
        data = TrainingSet.read_csv(args.data)
    else:
        data = generate_training_set(sensor, args.samples, seed=args.seed)
    div = Diversity(seeds=tuple(s + args.seed for s in DEFAULT_SEEDS))
    ens = Ensemble(build_ensemble(data, n=args.n, diversity=div), sensor)
    path = ens.save(args.out)
    print(f"saved {args.n}-member ensemble to {path}")
    return 0


def cmd_eval_ensemble(args) -> int:
    ens = Ensemble.load(args.ensemble)
    d = np.linspace(args.d_lo, args.d_hi, args.points)
    x = synth_batch(ens.sensor, d, args.ood, np.random.default_rng(args.seed))
    p, var, mus, vars_ = fuse_batch(ens.members, x)
    m = len(ens.members)
    with Path(args.out).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d_true", "p", "var"] + [f"{k}{i}" for i in range(m) for k in ("p_", "var_")])
        for j in range(d.size):
            member_cols = []
            for i in range(m):
                member_cols += [repr(float(mus[i, j])), repr(float(vars_[i, j]))]
            w.writerow([repr(float(d[j])), repr(float(p[j])), repr(float(var[j]))] + member_cols)
    print(f"mean fused variance {float(var.mean()):.6g} over {d.size} headways -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.trajectories:
        trajs = load_trajectories(args.trajectories)
        pick = [t for t in trajs if args.id is None or t.name == args.id]
        if not pick:
            raise DomainError(f"trajectory id {args.id!r} not found in {args.trajectories}")
        cfg = replace(cfg, lead_trajectory=pick[0])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        records, report = run_scenario(cfg)
    except ScenarioError as exc:
        write_records(exc.records, out / "records.csv")
        raise
    write_records(records, out / "records.csv")
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"{len(records)} frames, min headway {report.min_headway:.3f} m, "
          f"time to safety {report.time_to_safety:.2f} s -> {out}")
    return 0


def cmd_batch(args) -> int:
    cfg = _config(args)
    if args.trajectories:
        trajs = load_trajectories(args.trajectories)
    else:
        trajs = synthetic_batch(args.synthetic, seed=cfg.seed, min_std=args.min_std)
    res = batch_run(cfg, trajs, args.out, min_std=args.min_std, ensemble=resolve_ensemble(cfg))
    print(f"{len(res.rows)} scenarios ({res.n_failed} failed) -> {args.out}")
    return 1 if res.n_failed else 0


def cmd_metrics(args) -> int:
    path = Path(args.records)
    records = read_records(path)
    if not records:
        raise DomainError(f"{path}: no records")
    if args.config:
        cfg = _config(args)
        lead = resolve_lead(cfg)
        params = {"d_s": cfg.mpc.d_s, "T_s": cfg.mpc.T_s, "v_s": resolve_set_speed(cfg, lead),
                  "replan_period": cfg.replan_period}
    else:
        beside = path.parent / "metrics.json"
        if not beside.exists():
            raise DomainError(f"no metrics.json next to {path}; pass --config to supply d_s, T_s and v_s")
        params = json.loads(beside.read_text(encoding="utf-8"))["params"]
    report = compute_metrics(records, params["d_s"], params["T_s"], params["v_s"], params["replan_period"])
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deepacc", description="Uncertainty-aware car-following toolkit")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a training set over a headway sweep")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=20706, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ood", action="store_true", help="apply the OOD feature shift")
    p.add_argument("--config", help="scenario file whose [sensor] table is used")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the regressor ensemble")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", help="training CSV (default: synthesize)")
    p.add_argument("--samples", type=int, default=20706)
    p.add_argument("--n", type=int, default=6, help="ensemble size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="scenario file whose [sensor] table is used")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-ensemble", help="per-member and fused estimates over a headway sweep")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d-lo", type=float, default=2.0)
    p.add_argument("--d-hi", type=float, default=25.0)
    p.add_argument("--points", type=int, default=47)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ood", action="store_true")
    p.set_defaults(func=cmd_eval_ensemble)

    def scenario_flags(p):
        p.add_argument("--config", help="scenario TOML file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--ensemble", help="ensemble directory (default: config or in-process training)")
        p.add_argument("--ood", action="store_true", help="out-of-distribution sensor features")
        p.add_argument("--dump-qp", help="directory for per-solve QP dumps")
        p.add_argument("--allow-negative-margin", action="store_true",
                       help="keep risk levels above 0.5 (negative tightening)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--trajectories", help="lead trace CSV")

    p = sub.add_parser("simulate", help="run one closed-loop scenario")
    scenario_flags(p)
    p.add_argument("--id", help="trace id inside --trajectories")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("batch", help="one scenario per lead trace")
    scenario_flags(p)
    p.add_argument("--synthetic", type=int, default=20, help="synthetic traces when no CSV is given")
    p.add_argument("--min-std", type=float, default=4.0, help="speed std filter (m/s)")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("metrics", help="recompute a metrics report from a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--config", help="scenario file supplying d_s, T_s, v_s (default: metrics.json beside records)")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_metrics)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage message
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DomainError, ScenarioError, OSError, ValueError, KeyError) as exc:
        print(f"deepacc {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
