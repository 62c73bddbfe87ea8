"""Scenario orchestration: build, run, measure, and write CSV outputs.

One SimContext owns one simulation instance. Every decision epoch (1 s of
simulated time) it closes out the monitor connection's goodput and measured
RTT, computes the power reward, and, when the intelligent loop is on, feeds
the Q-learning tuner and applies its chosen (target, interval) pair to the
edge router's discipline. Multi-run experiments (sweep, compare) fan out
across processes; each run is fully determined by (config, seed).
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import MS, SECOND, US, Simulator
from .predictor import (EceSeries, LstmForecaster, load_checkpoint,
                        neurons_per_layer, save_checkpoint, synth_trace)
from .rng import RngHub
from .scenario import ScenarioConfig
from .transport import Connection
from .network import PingProbe, Topology
from .tuner import QLearningTuner, RewardSample, TunerConfig

BIN_NS = 100 * MS
RETRAIN_BIN_NS = 1 * MS
PING_INTERVAL_NS = 100 * MS  # ten request/response pairs per epoch
TRANSFER_PROBE_BYTES = 1500  # single-segment probe transfers time the path

EPOCH_COLUMNS = (
    "epoch_index", "observed_count", "state", "action", "target_us",
    "interval_us", "throughput_bps", "mrtt_us", "reward", "predicted_next",
    "occupancy_pct", "drops", "marks", "cumulative_power", "mrtt_carried",
    "conn_goodput_bps", "conn_rtt_us",
)

SUMMARY_COLUMNS = (
    "seed", "disc", "ecn", "intelligent", "duration_s", "pairs",
    "mean_mrtt_us", "mean_throughput_bps", "mean_conn_goodput_bps",
    "mean_conn_rtt_us", "mean_agg_goodput_bps", "final_cumulative_power",
    "occupancy_mean_pct", "occupancy_max_pct", "marks", "law_drops",
    "overflow_drops", "reward_normalizer",
)


@dataclass
class RunResult:
    rows: list
    summary: dict
    bins100: list = field(default_factory=list)
    bins1ms: list = field(default_factory=list)


class SimContext:
    """One fully wired simulation run."""

    def __init__(self, cfg: ScenarioConfig, seed: int, collect_1ms_s: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.sim = Simulator()
        self.rng_hub = RngHub(seed)
        self.topo = Topology(self.sim, cfg, self.rng_hub)
        self.duration_ns = cfg.duration_s * SECOND

        n_bins = cfg.duration_s * 10 + 1
        self.bins100 = [0] * n_bins
        self._n_bins = n_bins
        collect_1ms_s = max(collect_1ms_s,
                            cfg.retrain_at_s if cfg.intelligent and cfg.retrain_at_s > 0 else 0)
        self._ms_limit_ns = min(collect_1ms_s, cfg.duration_s) * SECOND
        self.bins1ms = [0] * (self._ms_limit_ns // RETRAIN_BIN_NS) if self._ms_limit_ns else []

        r1 = self.topo.r1
        b_side = {h.node_id for h in self.topo.hosts_b} | {self.topo.mon_b.node_id}
        r1.ece_count_ids = frozenset(b_side)
        r1.ece_hook = self._note_ece

        # Bulk transfers B -> A plus the monitor pair's probe connection.
        # The monitor comes up first; load starts at bulk_start_ms.
        self.conns = []
        stream = self.rng_hub.stream("flow-starts") if cfg.random_topology else None
        for i in range(cfg.pairs):
            if cfg.random_topology:
                start = int(stream.integers(0, cfg.rand_start_max_s * SECOND))
            else:
                start = cfg.bulk_start_ms * MS + i * cfg.flow_stagger_ms * MS
            conn = Connection(self.sim, i, self.topo.hosts_b[i], self.topo.hosts_a[i],
                              ecn_capable=cfg.ecn, start_ns=start)
            conn.start()
            self.conns.append(conn)
        # Monitor pair, three probe channels: 64 B pings measure the path
        # round trip; data-sized single-segment transfers time the
        # achievable probe-transfer rate; one bulk connection carries the
        # reward (the power of the connection: its goodput over its own
        # measured RTT).
        self.monitor = Connection(self.sim, cfg.pairs, self.topo.mon_b, self.topo.mon_a,
                                  ecn_capable=cfg.ecn, is_probe=True,
                                  start_ns=cfg.monitor_start_ms * MS)
        self.monitor.start()
        self._conn_rtt_samples = []
        self.monitor.rtt_cb = self._conn_rtt_samples.append
        self.pinger = PingProbe(self.sim, cfg.pairs + 1, self.topo.mon_b,
                                self.topo.mon_a, interval_ns=PING_INTERVAL_NS,
                                start_ns=cfg.monitor_start_ms * MS)
        self.pinger.start()
        self.transfer_probe = PingProbe(self.sim, cfg.pairs + 2, self.topo.mon_b,
                                        self.topo.mon_a, interval_ns=PING_INTERVAL_NS,
                                        start_ns=cfg.monitor_start_ms * MS + 50 * MS,
                                        request_size=TRANSFER_PROBE_BYTES)
        self.transfer_probe.start()

        base_rtt_s = self.topo.base_rtt_ns() / SECOND
        self.reward_normalizer = cfg.bottleneck_bw_bps / base_rtt_s
        self.tuner = None
        self.model = None
        if cfg.intelligent:
            if not cfg.checkpoint:
                raise ValueError("intelligent runs need a predictor checkpoint")
            self.model = load_checkpoint(cfg.checkpoint)
            self.tuner = QLearningTuner(
                TunerConfig(alpha=cfg.alpha, gamma=cfg.gamma, epsilon=cfg.epsilon),
                self.model, self.rng_hub.stream("tuner"), self.reward_normalizer)
            if cfg.retrain_at_s > 0 and cfg.retrain_at_s <= cfg.duration_s:
                self.sim.schedule(cfg.retrain_at_s * SECOND, self._retrain)

        # Per-epoch state.
        self.rows = []
        self.cumulative_power = 0.0
        self._prev_mon_delivered = 0
        self._prev_agg_delivered = 0
        self._prev_marks = 0
        self._prev_drops = 0
        self._mrtt_ns = float(self.topo.base_rtt_ns())
        self._conn_rtt_ns = float(self.topo.base_rtt_ns())
        self._thr_bps = TRANSFER_PROBE_BYTES * 8.0 * SECOND / self.topo.base_rtt_ns()
        self._current_decision = None
        self._occ_max_pct = 0.0
        self._agg_sum_bps = 0.0
        self._conn_sum_bps = 0.0
        for k in range(1, cfg.duration_s + 1):
            self.sim.schedule(k * SECOND, self._on_epoch, k)

    # -- instrumentation ----------------------------------------------------

    def _note_ece(self, now: int) -> None:
        idx = now // BIN_NS
        if idx < self._n_bins:
            self.bins100[idx] += 1
        if now < self._ms_limit_ns:
            self.bins1ms[now // RETRAIN_BIN_NS] += 1

    def _retrain(self) -> None:
        self.model.retrain_one_epoch(np.array(self.bins1ms, dtype=np.float64))

    # -- epoch loop -----------------------------------------------------------

    def _on_epoch(self, k: int) -> None:
        cfg = self.cfg
        stats = self.topo.bottleneck.stats
        now = self.sim.now

        mon_delivered = self.monitor.delivered_bytes
        conn_goodput_bps = (mon_delivered - self._prev_mon_delivered) * 8.0
        self._prev_mon_delivered = mon_delivered
        self._conn_sum_bps += conn_goodput_bps

        agg = sum(c.delivered_bytes for c in self.conns)
        agg_bps = (agg - self._prev_agg_delivered) * 8.0
        self._prev_agg_delivered = agg
        self._agg_sum_bps += agg_bps

        carried = 0
        samples = self.pinger.samples
        if samples:
            self._mrtt_ns = sum(samples) / len(samples)
            samples.clear()
        else:
            carried = 1
        mrtt_ns = self._mrtt_ns

        transfers = self.transfer_probe.samples
        if transfers:
            bits = TRANSFER_PROBE_BYTES * 8.0 * SECOND
            self._thr_bps = sum(bits / d for d in transfers) / len(transfers)
            transfers.clear()
        throughput_bps = self._thr_bps

        conn_samples = self._conn_rtt_samples
        if conn_samples:
            self._conn_rtt_ns = sum(conn_samples) / len(conn_samples)
            conn_samples.clear()
        conn_rtt_ns = self._conn_rtt_ns

        area = stats.drain_area(now)
        occupancy_pct = 100.0 * area / (SECOND * cfg.hard_limit)
        peak_pct = 100.0 * stats.drain_peak() / cfg.hard_limit
        if peak_pct > self._occ_max_pct:
            self._occ_max_pct = peak_pct

        marks = stats.marked
        drops_total = stats.dropped_law + stats.dropped_overflow
        d_marks = marks - self._prev_marks
        d_drops = drops_total - self._prev_drops
        self._prev_marks = marks
        self._prev_drops = drops_total

        sample = RewardSample(conn_goodput_bps, conn_rtt_ns / SECOND)
        predicted = None
        if self.tuner is not None:
            reward, predicted = self.tuner.learn(
                sample, self.bins100[max(k * 10 - 10, 0):k * 10])
        else:
            reward = sample.power() / self.reward_normalizer
        self.cumulative_power += reward

        dec = self._current_decision
        if dec is not None:
            state_s, action_s = str(dec.state), str(dec.action)
            target_ns, interval_ns = dec.target_ns, dec.interval_ns
        else:
            state_s = action_s = ""
            target_ns, interval_ns = cfg.target_ns, cfg.interval_ns
        observed_prev = self.bins100[(k - 1) * 10 - 1] if k > 1 else 0

        self.rows.append((
            k - 1,
            observed_prev,
            state_s,
            action_s,
            target_ns // US,
            interval_ns // US,
            throughput_bps,
            mrtt_ns / US,
            reward,
            "" if predicted is None else predicted,
            occupancy_pct,
            d_drops,
            d_marks,
            self.cumulative_power,
            carried,
            conn_goodput_bps,
            conn_rtt_ns / US,
        ))

        if self.tuner is not None and k < cfg.duration_s:
            observed = self.bins100[k * 10 - 1]
            decision = self.tuner.decide(observed)
            self.topo.bottleneck.set_params(decision.target_ns, decision.interval_ns)
            self._current_decision = decision

    # -- results ---------------------------------------------------------------

    def run(self) -> RunResult:
        self.sim.run(self.duration_ns)
        cfg = self.cfg
        stats = self.topo.bottleneck.stats
        balance = stats.enqueued - (stats.forwarded + stats.dropped_law
                                    + stats.dropped_overflow + stats.qlen())
        if balance != 0:
            raise RuntimeError(f"queue accounting out of balance by {balance} packets")
        rows = self.rows
        n = len(rows)
        summary = {
            "seed": self.seed,
            "disc": cfg.disc,
            "ecn": int(cfg.ecn),
            "intelligent": int(cfg.intelligent),
            "duration_s": cfg.duration_s,
            "pairs": cfg.pairs,
            "mean_mrtt_us": sum(r[7] for r in rows) / n,
            "mean_throughput_bps": sum(r[6] for r in rows) / n,
            "mean_conn_goodput_bps": self._conn_sum_bps / n,
            "mean_conn_rtt_us": sum(r[16] for r in rows) / n,
            "mean_agg_goodput_bps": self._agg_sum_bps / n,
            "final_cumulative_power": self.cumulative_power,
            "occupancy_mean_pct": sum(r[10] for r in rows) / n,
            "occupancy_max_pct": self._occ_max_pct,
            "marks": stats.marked,
            "law_drops": stats.dropped_law,
            "overflow_drops": stats.dropped_overflow,
            "reward_normalizer": self.reward_normalizer,
        }
        return RunResult(rows=rows, summary=summary, bins100=self.bins100,
                         bins1ms=self.bins1ms)


def simulate(cfg: ScenarioConfig, seed: int, collect_1ms_s: int = 0) -> RunResult:
    return SimContext(cfg, seed, collect_1ms_s).run()


# -- CSV writers -------------------------------------------------------------


def _fmt_epoch_row(row) -> str:
    (idx, observed, state, action, target_us, interval_us, thr, mrtt_us,
     reward, predicted, occ, drops, marks, cum, carried, conn_bps,
     conn_rtt_us) = row
    pred_s = "" if predicted == "" else f"{predicted:.6f}"
    return (f"{idx},{observed},{state},{action},{target_us},{interval_us},"
            f"{thr:.0f},{mrtt_us:.3f},{reward:.9e},{pred_s},{occ:.6f},"
            f"{drops},{marks},{cum:.9e},{carried},{conn_bps:.0f},"
            f"{conn_rtt_us:.3f}")


def write_epochs_csv(result: RunResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(EPOCH_COLUMNS) + "\n")
        for row in result.rows:
            fh.write(_fmt_epoch_row(row) + "\n")


def write_summary_csv(result: RunResult, path) -> None:
    s = result.summary
    vals = (
        f"{s['seed']}", s["disc"], f"{s['ecn']}", f"{s['intelligent']}",
        f"{s['duration_s']}", f"{s['pairs']}",
        f"{s['mean_mrtt_us']:.3f}", f"{s['mean_throughput_bps']:.3f}",
        f"{s['mean_conn_goodput_bps']:.3f}", f"{s['mean_conn_rtt_us']:.3f}",
        f"{s['mean_agg_goodput_bps']:.3f}",
        f"{s['final_cumulative_power']:.9e}",
        f"{s['occupancy_mean_pct']:.6f}", f"{s['occupancy_max_pct']:.6f}",
        f"{s['marks']}", f"{s['law_drops']}", f"{s['overflow_drops']}",
        f"{s['reward_normalizer']:.9e}",
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        fh.write(",".join(vals) + "\n")


def run_scenario(cfg: ScenarioConfig, seed: int, outdir) -> RunResult:
    """Single run; writes epochs.csv and summary.csv under outdir."""
    os.makedirs(outdir, exist_ok=True)
    result = simulate(cfg, seed)
    write_epochs_csv(result, os.path.join(outdir, "epochs.csv"))
    write_summary_csv(result, os.path.join(outdir, "summary.csv"))
    return result


# -- multi-run experiments ------------------------------------------------------


def _simulate_summary(args):
    cfg, seed = args
    return simulate(cfg, seed).summary


def _run_all(tasks, jobs: int):
    """Run (cfg, seed) tasks, preserving order; fan out when jobs > 1."""
    if jobs is None or jobs < 1:
        jobs = os.cpu_count() or 1
    jobs = min(jobs, len(tasks))
    if jobs <= 1:
        return [_simulate_summary(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_simulate_summary, tasks))


SWEEP_TARGETS_MS = (0.05, 0.5, 1.0, 2.0, 4.0, 6.0)


def target_sweep(cfg: ScenarioConfig, outdir, targets_ms=SWEEP_TARGETS_MS,
                 seeds=(1, 2, 3), disciplines=("codel", "fq_codel"),
                 duration_s: int = 20, jobs: int = 0) -> list:
    """Fixed-topology sweep of (target, interval = 20x target) per discipline.

    Returns one dict per (discipline, target) with seed-averaged mean mRTT
    and mean throughput; also written to sweep.csv.
    """
    os.makedirs(outdir, exist_ok=True)
    tasks = []
    keys = []
    for disc in disciplines:
        for t_ms in targets_ms:
            target_ns = int(round(t_ms * MS))
            run_cfg = replace(cfg, disc=disc, intelligent=False,
                              duration_s=duration_s, target_ns=target_ns,
                              interval_ns=20 * target_ns)
            for seed in seeds:
                tasks.append((run_cfg, seed))
                keys.append((disc, t_ms))
    summaries = _run_all(tasks, jobs)
    out_rows = []
    for disc in disciplines:
        for t_ms in targets_ms:
            runs = [s for key, s in zip(keys, summaries) if key == (disc, t_ms)]
            n = len(runs)
            out_rows.append({
                "disc": disc,
                "target_us": int(round(t_ms * 1000)),
                "interval_us": int(round(t_ms * 1000)) * 20,
                "mrtt_us_mean": sum(r["mean_mrtt_us"] for r in runs) / n,
                "throughput_bps_mean": sum(r["mean_throughput_bps"] for r in runs) / n,
                "conn_rtt_us_mean": sum(r["mean_conn_rtt_us"] for r in runs) / n,
                "conn_goodput_bps_mean": sum(r["mean_conn_goodput_bps"] for r in runs) / n,
                "seeds": n,
            })
    with open(os.path.join(outdir, "sweep.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("disc,target_us,interval_us,mrtt_us_mean,throughput_bps_mean,"
                 "conn_rtt_us_mean,conn_goodput_bps_mean,seeds\n")
        for r in out_rows:
            fh.write(f"{r['disc']},{r['target_us']},{r['interval_us']},"
                     f"{r['mrtt_us_mean']:.3f},{r['throughput_bps_mean']:.3f},"
                     f"{r['conn_rtt_us_mean']:.3f},{r['conn_goodput_bps_mean']:.3f},"
                     f"{r['seeds']}\n")
    return out_rows


def ensure_checkpoint(cfg: ScenarioConfig, outdir, epochs: int = 100,
                      trace_seed: int = 1234, trace_len: int = 6000) -> str:
    """Return cfg.checkpoint, pre-training a default one if unset."""
    if cfg.checkpoint:
        return cfg.checkpoint
    path = os.path.join(outdir, "pretrained.json")
    if not os.path.exists(path):
        pretrain_predictor(path, synth_seed=trace_seed, length=trace_len,
                           epochs=epochs)
    return path


def compare_iaqm(cfg: ScenarioConfig, outdir, seeds=(1, 2, 3, 4, 5),
                 disciplines=("codel", "fq_codel"), jobs: int = 0,
                 pretrain_epochs: int = 100) -> dict:
    """Intelligent vs static arms over shared seeds; Table-style occupancy.

    Static arms keep the configured defaults for the whole run; intelligent
    arms start from the same defaults and retune every second.
    """
    os.makedirs(outdir, exist_ok=True)
    checkpoint = ensure_checkpoint(cfg, outdir, epochs=pretrain_epochs)
    tasks = []
    keys = []
    for disc in disciplines:
        for intelligent in (False, True):
            run_cfg = replace(cfg, disc=disc, intelligent=intelligent,
                              checkpoint=checkpoint if intelligent else "")
            for seed in seeds:
                tasks.append((run_cfg, seed))
                keys.append((disc, intelligent, seed))
    summaries = _run_all(tasks, jobs)
    by_arm = {}
    rows = []
    for (disc, intelligent, seed), s in zip(keys, summaries):
        rows.append((disc, "intelligent" if intelligent else "static", seed, s))
        by_arm.setdefault((disc, intelligent), []).append(s)
    table = {}
    for (disc, intelligent), runs in by_arm.items():
        n = len(runs)
        table[(disc, "intelligent" if intelligent else "static")] = {
            "final_cumulative_power_mean": sum(r["final_cumulative_power"] for r in runs) / n,
            "occupancy_mean_pct": sum(r["occupancy_mean_pct"] for r in runs) / n,
            "occupancy_max_pct": max(r["occupancy_max_pct"] for r in runs),
            "mean_mrtt_us": sum(r["mean_mrtt_us"] for r in runs) / n,
            "mean_throughput_bps": sum(r["mean_throughput_bps"] for r in runs) / n,
            "seeds": n,
        }
    with open(os.path.join(outdir, "compare.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("disc,arm,seed,final_cumulative_power,occupancy_mean_pct,"
                 "occupancy_max_pct,mean_mrtt_us,mean_throughput_bps\n")
        for disc, arm, seed, s in rows:
            fh.write(f"{disc},{arm},{seed},{s['final_cumulative_power']:.9e},"
                     f"{s['occupancy_mean_pct']:.6f},{s['occupancy_max_pct']:.6f},"
                     f"{s['mean_mrtt_us']:.3f},{s['mean_throughput_bps']:.3f}\n")
        for (disc, arm), agg in sorted(table.items()):
            fh.write(f"{disc},{arm},mean,{agg['final_cumulative_power_mean']:.9e},"
                     f"{agg['occupancy_mean_pct']:.6f},{agg['occupancy_max_pct']:.6f},"
                     f"{agg['mean_mrtt_us']:.3f},{agg['mean_throughput_bps']:.3f}\n")
    return table


# -- predictor workflows ---------------------------------------------------------


def write_fit_report_csv(report, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rmse_train,rmse_test,mae_train,mae_test,epochs,split,"
                 "n_train_windows,n_test_windows\n")
        fh.write(f"{report.rmse_train:.6f},{report.rmse_test:.6f},"
                 f"{report.mae_train:.6f},{report.mae_test:.6f},"
                 f"{report.epochs},{report.split},"
                 f"{report.n_train_windows},{report.n_test_windows}\n")


def pretrain_predictor(checkpoint_path, trace_path=None, synth_seed: int = 1234,
                       length: int = 6000, epochs: int = 100,
                       layers: int = 3, steps: int = 10, hidden: int = 0,
                       report_path=None, model_seed: int = 7):
    """Train a forecaster on a trace (CSV path or synthetic) and checkpoint it."""
    from .predictor import ingest_trace  # local to keep import cheap in workers

    if trace_path is not None:
        series = ingest_trace(trace_path)
    else:
        series = synth_trace(synth_seed, length)
    if hidden <= 0:
        hidden = neurons_per_layer(steps, len(series.counts), layers)
    model = LstmForecaster(steps=steps, layers=layers, hidden=hidden,
                           seed=model_seed)
    report = model.fit(series.counts, epochs)
    save_checkpoint(model, checkpoint_path)
    if report_path is not None:
        write_fit_report_csv(report, report_path)
    return model, report


def retrain_demo(cfg: ScenarioConfig, checkpoint_path, outdir, seed: int = 1,
                 collect_s: int = 6):
    """Transfer workflow: run the (random) scenario, collect 1 ms ECE bins
    for `collect_s` seconds, one-epoch retrain the pre-trained model."""
    os.makedirs(outdir, exist_ok=True)
    run_cfg = replace(cfg, intelligent=False)
    if run_cfg.duration_s < collect_s:
        run_cfg = replace(run_cfg, duration_s=collect_s)
    result = simulate(run_cfg, seed, collect_1ms_s=collect_s)
    model = load_checkpoint(checkpoint_path)
    series = EceSeries(interval_ns=RETRAIN_BIN_NS,
                       counts=np.array(result.bins1ms, dtype=np.int64))
    report = model.retrain_one_epoch(series.counts.astype(np.float64))
    out_ckpt = os.path.join(outdir, "retrained.json")
    save_checkpoint(model, out_ckpt)
    write_fit_report_csv(report, os.path.join(outdir, "fit_report.csv"))
    write_epochs_csv(result, os.path.join(outdir, "epochs.csv"))
    return model, report
