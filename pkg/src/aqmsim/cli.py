"""Command-line entry points for single runs and the experiment families."""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import harness
from .scenario import ScenarioConfig, apply_overrides, load_config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--seed", type=int, default=1, help="master seed (default 1)")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--duration-s", type=int, help="simulated seconds override")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="config override, repeatable")
    p.add_argument("--jobs", type=int, default=0,
                   help="parallel worker processes (0 = cpu count)")


def _build_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    cfg = apply_overrides(cfg, args.overrides)
    if args.duration_s is not None:
        cfg = replace(cfg, duration_s=args.duration_s)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aqmsim",
        description="Deterministic AQM simulator with an ECN-driven "
                    "forecast-and-tune control loop.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario, write epochs/summary CSVs")
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="target/interval sweep per discipline")
    _add_common(p_sweep)
    p_sweep.add_argument("--targets-ms", default="0.05,0.5,1,2,4,6",
                         help="comma-separated target values in ms")
    p_sweep.add_argument("--seeds", default="1,2,3", help="comma-separated seeds")
    p_sweep.add_argument("--sweep-duration-s", type=int, default=20,
                         help="simulated seconds per sweep point (default 20)")

    p_cmp = sub.add_parser("compare", help="intelligent vs static arms")
    _add_common(p_cmp)
    p_cmp.add_argument("--seeds", default="1,2,3,4,5", help="comma-separated seeds")
    p_cmp.add_argument("--disciplines", default="codel,fq_codel")

    p_pre = sub.add_parser("pretrain", help="pre-train the congestion forecaster")
    p_pre.add_argument("--trace", help="trace CSV (interval_index,ece_count); "
                                       "omitted = synthetic bursty trace")
    p_pre.add_argument("--synth-seed", type=int, default=1234)
    p_pre.add_argument("--length", type=int, default=6000)
    p_pre.add_argument("--epochs", type=int, default=100)
    p_pre.add_argument("--out", default="out")

    p_rt = sub.add_parser("retrain-demo",
                          help="random-scenario transfer: collect 6 s of 1 ms "
                               "bins, one-epoch retrain")
    _add_common(p_rt)
    p_rt.add_argument("--checkpoint", required=True,
                      help="pre-trained forecaster checkpoint")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "run":
        cfg = _build_config(args)
        result = harness.run_scenario(cfg, args.seed, args.out)
        s = result.summary
        print(f"wrote {args.out}/epochs.csv ({len(result.rows)} epochs) and summary.csv")
        print(f"mean mRTT {s['mean_mrtt_us']:.1f} us, "
              f"mean throughput {s['mean_throughput_bps'] / 1e6:.3f} Mbps, "
              f"final cumulative power {s['final_cumulative_power']:.4f}")
        return 0

    if args.command == "sweep":
        cfg = _build_config(args)
        targets = [float(x) for x in args.targets_ms.split(",") if x]
        seeds = [int(x) for x in args.seeds.split(",") if x]
        rows = harness.target_sweep(cfg, args.out, targets_ms=targets, seeds=seeds,
                                    duration_s=args.sweep_duration_s, jobs=args.jobs)
        for r in rows:
            print(f"{r['disc']:9s} target {r['target_us']:>5d} us: "
                  f"mRTT {r['mrtt_us_mean']:.1f} us, "
                  f"thr {r['throughput_bps_mean'] / 1e6:.3f} Mbps")
        print(f"wrote {args.out}/sweep.csv")
        return 0

    if args.command == "compare":
        cfg = _build_config(args)
        seeds = [int(x) for x in args.seeds.split(",") if x]
        discs = [d for d in args.disciplines.split(",") if d]
        table = harness.compare_iaqm(cfg, args.out, seeds=seeds,
                                     disciplines=discs, jobs=args.jobs)
        for (disc, arm), agg in sorted(table.items()):
            print(f"{disc:9s} {arm:12s} power {agg['final_cumulative_power_mean']:.4f} "
                  f"occupancy avg {agg['occupancy_mean_pct']:.3f}% "
                  f"max {agg['occupancy_max_pct']:.3f}%")
        print(f"wrote {args.out}/compare.csv")
        return 0

    if args.command == "pretrain":
        os.makedirs(args.out, exist_ok=True)
        ckpt = os.path.join(args.out, "pretrained.json")
        _, report = harness.pretrain_predictor(
            ckpt, trace_path=args.trace, synth_seed=args.synth_seed,
            length=args.length, epochs=args.epochs,
            report_path=os.path.join(args.out, "fit_report.csv"))
        print(f"wrote {ckpt}")
        print(f"train RMSE {report.rmse_train:.4f} MAE {report.mae_train:.4f} | "
              f"test RMSE {report.rmse_test:.4f} MAE {report.mae_test:.4f}")
        return 0

    if args.command == "retrain-demo":
        cfg = _build_config(args)
        if not cfg.random_topology:
            cfg = replace(cfg, random_topology=True, bottleneck_bw_bps=10 * 10**6,
                          duration_s=min(cfg.duration_s, 10))
        _, report = harness.retrain_demo(cfg, args.checkpoint, args.out,
                                         seed=args.seed)
        print(f"one-epoch retrain: train RMSE {report.rmse_train:.4f} "
              f"MAE {report.mae_train:.4f} | test RMSE {report.rmse_test:.4f} "
              f"MAE {report.mae_test:.4f}")
        print(f"wrote {args.out}/retrained.json and fit_report.csv")
        return 0

    raise ValueError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
