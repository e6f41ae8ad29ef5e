"""Experiment orchestration: runs, sweeps, reports, and offline metrics.

Everything here is a pure function of (config, seeds); reports are recomputed
from decision logs and traces, so any number in a CSV can be re-derived.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .engine import Engine, EngineConfig
from .features import compute_normalizers
from .mlp import infer_batch, load as load_model
from .oracle import (TraceCollector, make_combos, oracle_best_core, qos_grid,
                     examples_for_sweep_point, select_vf, trace_grids)
from .platform import BIG, LITTLE, N_CORES, Platform
from .policies import make_policy, load_qtable
from .workload import ScenarioSpec, generate_scenario, mean_rate


@dataclass
class ExperimentResult:
    policy: str
    cooling: str
    arrival_rate: float
    seed: int
    model_seed: int
    avg_temp: float            # time-weighted mean of the hottest core, degC
    peak_temp: float
    violations: int            # apps whose whole-run mean IPS missed Q
    app_count: int
    migrations: int
    duration: float            # simulated s
    cpu_time_hist: dict        # "cluster:level" -> executing seconds
    per_app: list = field(default_factory=list)

    def headline(self):
        return {k: v for k, v in asdict(self).items() if k != "per_app"}


def run_experiment(platform_config, library, spec: ScenarioSpec, policy_name,
                   model=None, qtable=None, model_seed=0,
                   engine_config=EngineConfig(), out_dir=None, tag=""):
    """One deterministic run of a scenario under a policy."""
    instances = generate_scenario(spec, library, platform_config)
    platform = Platform(platform_config, cooling=spec.cooling)
    policy = make_policy(policy_name, model=model, qtable=qtable,
                         seed=model_seed)
    engine = Engine(platform, instances, library, policy,
                    config=engine_config).run()
    temps = np.array([row[1:9] for row in engine.temp_trace])
    peak_series = temps.max(axis=1) if temps.size else np.array([])
    finished = engine.finished
    violations = sum(1 for a in finished if a.mean_ips() < a.qos_target)
    hist = {f"{cl}:{platform_config.clusters[cl].freq_levels[idx]}": t
            for (cl, idx), t in sorted(engine.cpu_time_hist.items())}
    result = ExperimentResult(
        policy=policy_name,
        cooling=spec.cooling,
        arrival_rate=spec.arrival_rate,
        seed=spec.seed,
        model_seed=model_seed,
        avg_temp=float(peak_series.mean()) if len(peak_series) else
        platform_config.thermal.ambient,
        peak_temp=float(peak_series.max()) if len(peak_series) else
        platform_config.thermal.ambient,
        violations=violations,
        app_count=len(finished),
        migrations=engine.migration_count,
        duration=float(platform.time),
        cpu_time_hist=hist,
        per_app=[{
            "app": a.model.name,
            "qos_ips": a.qos_target,
            "mean_ips": a.mean_ips(),
            "violated": bool(a.mean_ips() < a.qos_target),
            "wait_s": (a.start_time or 0) - a.arrival_time,
            "exec_s": (a.finish_time or 0) - (a.start_time or 0),
        } for a in finished],
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        base = tag or f"{policy_name}_{spec.cooling}_r{spec.arrival_rate}_s{spec.seed}"
        with open(os.path.join(out_dir, f"{base}_result.json"), "w") as fh:
            json.dump(asdict(result), fh, indent=1)
        write_decision_log(engine.decision_log,
                           os.path.join(out_dir, f"{base}_decisions.csv"))
        write_temp_trace(engine.temp_trace,
                         os.path.join(out_dir, f"{base}_temps.csv"))
    return result


DECISION_COLUMNS = ["time", "event", "app", "from_core", "to_core",
                    "f_l", "f_b", "reason"]


def write_decision_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DECISION_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def write_temp_trace(rows, path):
    cols = (["time_s"] + [f"t_core{j}" for j in range(N_CORES)]
            + ["t_pkg", "f_l", "f_b"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([f"{row[0]:.3f}"] + [f"{v:.4f}" for v in row[1:10]]
                       + list(row[10:]))


_POOL_CTX = {}


def _sweep_init(config_path, apps_path, engine_cfg_fields):
    from .platform import load_platform_config
    from .workload import load_app_library
    _POOL_CTX["config"] = load_platform_config(config_path)
    _POOL_CTX["library"] = load_app_library(apps_path)
    _POOL_CTX["engine_config"] = EngineConfig(**engine_cfg_fields)


def _sweep_run(task):
    spec = ScenarioSpec(**task["spec"])
    model = load_model(task["model"]) if task["model"] else None
    qtable = load_qtable(task["qtable"]) if task["qtable"] else None
    return run_experiment(_POOL_CTX["config"], _POOL_CTX["library"], spec,
                          task["policy"], model=model, qtable=qtable,
                          model_seed=task["model_seed"],
                          engine_config=_POOL_CTX["engine_config"])


def compare(policies, rates, model_files=None, qtable_files=None,
            coolings=("fan", "no_fan"), scenario_seed=7, app_count=20,
            out_dir=None, engine_config=EngineConfig(), qos_range=(0.2, 0.8),
            instr_scale=200.0, config_path=None, apps_path=None, workers=1):
    """Sweep (cooling, rate, policy); learned policies repeat per artifact.

    model_files/qtable_files: paths, one per training seed.  Policies without
    learned state run once per cell.  Each run is an independent seeded
    simulation, so workers > 1 fans them out across processes with identical
    results.  Returns (per-run results, aggregate rows).
    """
    from .workload import load_app_library
    library = load_app_library(apps_path)
    pool = library.training_pool + library.evaluation_pool
    tasks = []
    for cooling in coolings:
        for ri, rate in enumerate(rates):
            spec = dict(seed=scenario_seed + ri, app_pool=pool,
                        count=app_count, arrival_rate=rate,
                        qos_range=qos_range, cooling=cooling,
                        instr_scale=instr_scale)
            for policy in policies:
                if policy == "topil":
                    reps = [(i, p, None) for i, p in enumerate(model_files or [])]
                elif policy == "rl":
                    reps = [(i, None, p) for i, p in enumerate(qtable_files or [])]
                else:
                    reps = [(0, None, None)]
                for midx, mpath, qpath in reps:
                    tasks.append({"spec": spec, "policy": policy,
                                  "model": mpath, "qtable": qpath,
                                  "model_seed": midx})
    init_args = (config_path, apps_path, asdict(engine_config))
    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(
                workers, initializer=_sweep_init,
                initargs=init_args) as mp_pool:
            results = mp_pool.map(_sweep_run, tasks)
    else:
        _sweep_init(*init_args)
        results = [_sweep_run(t) for t in tasks]
    agg = aggregate(results)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_compare_csv(results, agg, out_dir)
        write_charts(results, agg, out_dir)
    return results, agg


def aggregate(results):
    """Mean/stddev per (cooling, rate, policy) cell across repetitions."""
    cells = {}
    for r in results:
        cells.setdefault((r.cooling, r.arrival_rate, r.policy), []).append(r)
    rows = []
    for (cooling, rate, policy), rs in sorted(cells.items()):
        def stat(attr):
            vals = [getattr(x, attr) for x in rs]
            return float(np.mean(vals)), float(np.std(vals))
        row = {"cooling": cooling, "arrival_rate": rate, "policy": policy,
               "reps": len(rs)}
        for attr in ("avg_temp", "peak_temp", "violations", "migrations",
                     "duration"):
            m, s = stat(attr)
            row[f"{attr}_mean"], row[f"{attr}_std"] = m, s
        rows.append(row)
    return rows


def write_compare_csv(results, agg, out_dir):
    with open(os.path.join(out_dir, "compare.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(agg[0].keys()))
        w.writeheader()
        w.writerows(agg)
    hist_rows = []
    for r in results:
        for key, secs in r.cpu_time_hist.items():
            cl, lvl = key.split(":")
            hist_rows.append({
                "cooling": r.cooling, "arrival_rate": r.arrival_rate,
                "policy": r.policy, "model_seed": r.model_seed,
                "cluster": cl, "level_ghz": lvl, "seconds": f"{secs:.4f}",
            })
    with open(os.path.join(out_dir, "cpu_hist.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["cooling", "arrival_rate", "policy",
                                           "model_seed", "cluster",
                                           "level_ghz", "seconds"])
        w.writeheader()
        w.writerows(hist_rows)


def write_charts(results, agg, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    coolings = sorted({a["cooling"] for a in agg})
    policies = sorted({a["policy"] for a in agg})
    rates = sorted({a["arrival_rate"] for a in agg})
    for metric, fname in (("avg_temp", "avg_temp.svg"),
                          ("violations", "violations.svg")):
        fig, axes = plt.subplots(1, len(coolings),
                                 figsize=(5 * len(coolings), 3.2),
                                 squeeze=False)
        for ci, cooling in enumerate(coolings):
            ax = axes[0][ci]
            width = 0.8 / len(policies)
            for pi, pol in enumerate(policies):
                xs, ms, ss = [], [], []
                for ri, rate in enumerate(rates):
                    cell = [a for a in agg if a["cooling"] == cooling
                            and a["policy"] == pol
                            and a["arrival_rate"] == rate]
                    if cell:
                        xs.append(ri + pi * width)
                        ms.append(cell[0][f"{metric}_mean"])
                        ss.append(cell[0][f"{metric}_std"])
                ax.bar(xs, ms, width=width, yerr=ss, label=pol)
            ax.set_xticks([i + 0.4 for i in range(len(rates))])
            ax.set_xticklabels([str(r) for r in rates])
            ax.set_xlabel("arrival rate (apps/s)")
            ax.set_ylabel(metric)
            ax.set_title(cooling)
            if ci == 0:
                ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, fname))
        plt.close(fig)
    # CPU-time histogram per policy: stacked by (cluster, level)
    fig, axes = plt.subplots(1, len(policies),
                             figsize=(3.2 * len(policies), 3.2), squeeze=False)
    for pi, pol in enumerate(policies):
        ax = axes[0][pi]
        totals = {}
        for r in results:
            if r.policy != pol:
                continue
            for key, secs in r.cpu_time_hist.items():
                totals[key] = totals.get(key, 0.0) + secs
        keys = sorted(totals, key=lambda k: (k.split(":")[0],
                                             float(k.split(":")[1])))
        ax.bar(range(len(keys)), [totals[k] for k in keys])
        ax.set_xticks(range(len(keys)))
        ax.set_xticklabels(keys, rotation=90, fontsize=6)
        ax.set_title(pol)
        ax.set_ylabel("CPU time (s)")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "cpu_time.svg"))
    plt.close(fig)


def check_orderings(results, agg, platform_config, min_gap_c=3.0):
    """The comparison sweep's acceptance assertions; returns failure strings."""
    failures = []
    coolings = sorted({a["cooling"] for a in agg})
    rates = sorted({a["arrival_rate"] for a in agg})
    present = {a["policy"] for a in agg}

    def cell(cooling, rate, policy, metric):
        for a in agg:
            if (a["cooling"], a["arrival_rate"], a["policy"]) == \
                    (cooling, rate, policy):
                return a[metric]
        return None

    for cooling in coolings:
        gaps = []
        tot = {p: 0.0 for p in present}
        for rate in rates:
            t_top = cell(cooling, rate, "topil", "avg_temp_mean")
            t_od = cell(cooling, rate, "gts-ondemand", "avg_temp_mean")
            t_ps = cell(cooling, rate, "gts-powersave", "avg_temp_mean")
            if None in (t_top, t_od, t_ps):
                continue
            if not t_ps <= t_top + 0.05:
                failures.append(
                    f"{cooling} rate {rate}: powersave avg T {t_ps:.2f} "
                    f"above topil {t_top:.2f}")
            if not t_top < t_od:
                failures.append(
                    f"{cooling} rate {rate}: topil avg T {t_top:.2f} "
                    f"not below ondemand {t_od:.2f}")
            gaps.append(t_od - t_top)
            for p in tot:
                v = cell(cooling, rate, p, "violations_mean")
                if v is not None:
                    tot[p] += v
        if gaps and not np.mean(gaps) >= min_gap_c:
            failures.append(
                f"{cooling}: topil-vs-ondemand mean gap "
                f"{np.mean(gaps):.2f} degC below {min_gap_c}")
        if "rl" in present and not tot["topil"] < tot["rl"]:
            failures.append(
                f"{cooling}: topil violations {tot['topil']:.1f} not below "
                f"rl {tot['rl']:.1f}")
        # "far below": at most half, and smaller by at least 5 apps
        if "gts-powersave" in present and not (
                tot["gts-powersave"] >= 2 * tot["topil"] + 5):
            failures.append(
                f"{cooling}: topil violations {tot['topil']:.1f} not far "
                f"below powersave {tot['gts-powersave']:.1f}")

    def hist_share(policy, num_pred, den_pred):
        num = den = 0.0
        for r in results:
            if r.policy != policy:
                continue
            for key, secs in r.cpu_time_hist.items():
                cl, lvl = key.split(":")
                lvl = float(lvl)
                if den_pred(cl, lvl):
                    den += secs
                if num_pred(cl, lvl):
                    num += secs
        return num / den if den else 0.0

    big_max = platform_config.clusters[BIG].max_freq
    mins = {c: platform_config.clusters[c].min_freq
            for c in platform_config.clusters}
    if "gts-ondemand" in present:
        share = hist_share("gts-ondemand",
                           lambda c, f: c == BIG and f == big_max,
                           lambda c, f: c == BIG)
        if not share >= 0.5:
            failures.append(
                f"ondemand big-cluster time at max level only {share:.2f}")
    if "gts-powersave" in present:
        share = hist_share("gts-powersave",
                           lambda c, f: f == mins[c],
                           lambda c, f: True)
        if not share >= 0.95:
            failures.append(
                f"powersave time at min levels only {share:.2f}")
    return failures


def migration_overhead(platform_config, library, model_name, period=0.5,
                       engine_config=EngineConfig(), repeats=3,
                       run_seconds=160.0):
    """Overhead of periodic cluster ping-pong vs pinned runs.

    Both clusters run at their top levels.  The instruction budget is sized
    for ~run_seconds of alternating execution; the end-of-run makeup phase
    biases m by a constant ~one period of time, so long runs keep it small.
    Repeats alternate the starting cluster, which flips the sign of that
    bias.  Returns a dict with t_big, t_little, t_migrate stats and m.
    """
    model = library[model_name]
    f_sat = library.f_sat
    f_l = platform_config.clusters[LITTLE].max_freq
    f_b = platform_config.clusters[BIG].max_freq
    r_l = mean_rate(model, LITTLE, f_l, f_sat)
    r_b = mean_rate(model, BIG, f_b, f_sat)
    budget = 0.5 * (r_l + r_b) * run_seconds

    def timed(core_of_time, penalties):
        from .workload import AppInstance
        platform = Platform(platform_config, cooling="fan")
        platform.set_cluster_freq(LITTLE, f_l)
        platform.set_cluster_freq(BIG, f_b)
        inst = AppInstance(app_id=0, model=model, qos_target=0.0,
                           arrival_time=0.0, total_instructions=budget)
        inst.start_time = 0.0
        stall_until = slow_until = -1.0
        prev_core = core_of_time(0.0)
        n_mig = 0
        while not inst.done:
            t = platform.time
            core = core_of_time(t)
            if core != prev_core:
                n_mig += 1
                prev_core = core
                if penalties:
                    stall_until = t + engine_config.migration_stall
                    slow_until = stall_until + engine_config.migration_slow_time
            dt = platform.dt
            stall = min(max(stall_until - t, 0.0), dt)
            factor = (engine_config.migration_slow_factor
                      if t < slow_until - 1e-9 else 1.0)
            cluster = platform.cluster_of_core(core)
            busy = inst.advance(cluster, platform.freqs[cluster], f_sat,
                                dt - stall, rate_factor=factor)
            loads = [(0.0, 0.0)] * N_CORES
            loads[core] = ((stall + busy) / dt, inst.current_phase().activity)
            platform.step(loads)
            if inst.done:
                return platform.time - dt + stall + busy, n_mig
        return platform.time, n_mig

    t_big, _ = timed(lambda t: 4, penalties=True)
    t_little, _ = timed(lambda t: 0, penalties=True)
    runs = []
    for rep in range(repeats):
        first, second = (4, 0) if rep % 2 == 0 else (0, 4)
        t_m, n_mig = timed(
            lambda t: first if int(t / period) % 2 == 0 else second,
            penalties=True)
        m = 0.5 * (1.0 / t_big + 1.0 / t_little) * t_m - 1.0
        runs.append((m, t_m, n_mig))
    ms = [r[0] for r in runs]
    loss = (engine_config.migration_stall
            + (1 - engine_config.migration_slow_factor)
            * engine_config.migration_slow_time)
    # closed-form prediction: per-phase analytic pinned times, equal-time
    # alternation baseline, each period losing `loss` seconds of progress.
    # Single-phase apps collapse to loss / (period - loss).
    from .workload import ips
    tb = tl = talt = 0.0
    for ph in model.phases:
        b_i = ph.fraction * budget
        r_b_i = ips(ph, BIG, f_b, f_sat)
        r_l_i = ips(ph, LITTLE, f_l, f_sat)
        tb += b_i / r_b_i
        tl += b_i / r_l_i
        talt += 2.0 * b_i / (r_b_i + r_l_i)
    m_pred = 0.5 * (1.0 / tb + 1.0 / tl) * talt * period / (period - loss) - 1.0
    return {
        "app": model_name,
        "period_s": period,
        "t_big": t_big,
        "t_little": t_little,
        "t_migrate_mean": float(np.mean([r[1] for r in runs])),
        "migrations": runs[0][2],
        "m_mean": float(np.mean(ms)),
        "m_std": float(np.std(ms)),
        "m_predicted": m_pred,
        "m_predicted_flat": loss / (period - loss),
    }


def rl_pretrain(platform_config, library, seed=0, episodes=30, app_count=12,
                rates=(0.05, 0.1, 0.2), coolings=("fan", "no_fan"),
                rl_config=None, engine_config=EngineConfig(),
                instr_scale=50.0, qos_range=(0.2, 0.8)):
    """Train a Q-table across randomized scenarios; returns (table, deltas).

    deltas[k] is the max absolute table change during episode k, a cheap
    convergence trace.
    """
    from .policies import RLConfig, RlPolicy, new_qtable
    rl_config = rl_config or RLConfig()
    qtable = new_qtable(rl_config)
    policy = RlPolicy(qtable, rl_config, seed=seed, learn=True)
    pool = library.training_pool
    deltas = []
    for ep in range(episodes):
        spec = ScenarioSpec(seed=seed * 1009 + ep, app_pool=pool,
                            count=app_count,
                            arrival_rate=rates[ep % len(rates)],
                            qos_range=qos_range,
                            cooling=coolings[(ep // len(rates)) % len(coolings)],
                            instr_scale=instr_scale)
        instances = generate_scenario(spec, library, platform_config)
        platform = Platform(platform_config, cooling=spec.cooling)
        before = qtable.copy()
        Engine(platform, instances, library, policy,
               config=engine_config, log=False).run()
        deltas.append(float(np.abs(qtable - before).max()))
    return qtable, deltas


def build_decision_points(platform_config, library, combos, collector,
                          qos_points=8, qos_span=(0.1, 0.9)):
    """(features row, candidate temps, oracle core) tuples for evaluation."""
    norm = compute_normalizers(library, platform_config)
    points = []
    f_b_max = platform_config.clusters[BIG].max_freq
    for combo in combos:
        records = collector.collect(combo)
        grids, lvl_l, lvl_b, aoi = trace_grids(records)
        occupied = combo.occupied
        ref = mean_rate(library[aoi], BIG, f_b_max, library.f_sat)
        for q_mips in qos_grid(ref, qos_points, qos_span):
            for req_l in lvl_l:
                for req_b in lvl_b:
                    labels, examples = examples_for_sweep_point(
                        grids, occupied, q_mips, req_l, req_b, lvl_l, lvl_b,
                        combo_id=combo.combo_id)
                    if labels is None:
                        continue
                    best = oracle_best_core(grids, q_mips, req_l, req_b)
                    temps = {}
                    for j in grids:
                        sel = select_vf(grids[j], q_mips, req_l, req_b)
                        temps[j] = sel.peak_t if sel is not None else None
                    for ex in examples:
                        points.append({
                            "x": ex.features.to_array(norm),
                            "free": sorted(grids),
                            "temps": temps,
                            "oracle": best,
                        })
    return points


def evaluate_decision_points(points, rate_fn):
    """Compare a rating function's core choice against the oracle optimum.

    rate_fn: (n x 21 matrix) -> (n x 8 ratings).  Reports the share of
    decisions whose selected mapping lands within 1 degC of the optimal one,
    the mean excess over feasible choices, exact-match share, and the share
    of QoS-infeasible choices.
    """
    if not points:
        raise ValueError("no decision points")
    x = np.vstack([p["x"] for p in points])
    ratings = rate_fn(x)
    n = len(points)
    within = exact = infeasible = 0
    excesses = []
    for i, p in enumerate(points):
        free = p["free"]
        row = ratings[i]
        chosen = min(free, key=lambda j: (-row[j], j))
        oracle_core, oracle_t = p["oracle"]
        t_chosen = p["temps"][chosen]
        if chosen == oracle_core:
            exact += 1
        if t_chosen is None:
            infeasible += 1
            continue
        excess = t_chosen - oracle_t
        excesses.append(excess)
        if excess <= 1.0 + 1e-9:
            within += 1
    return {
        "n": n,
        "within_1c": within / n,
        "exact": exact / n,
        "infeasible_choice": infeasible / n,
        "mean_excess_c": float(np.mean(excesses)) if excesses else float("nan"),
    }


def evaluate_model(model, platform_config, library, seed=11, n_combos=10,
                   qos_points=8, cooling="fan", pool=None, collector=None):
    """Held-out evaluation: AoIs from the evaluation pool vs the brute-force
    oracle on freshly collected traces."""
    combos = make_combos(seed, pool or library.evaluation_pool, n_combos,
                         library, prefix="e")
    # backgrounds may include any model; AoIs stay held out by pool choice
    collector = collector or TraceCollector(platform_config, library,
                                            cooling=cooling, seed=seed)
    points = build_decision_points(platform_config, library, combos,
                                   collector, qos_points=qos_points)
    report = evaluate_decision_points(points, lambda x: infer_batch(model, x))
    report["combos"] = len(combos)
    return report
