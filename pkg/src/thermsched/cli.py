"""Command-line front end for the trace/train/evaluate pipeline."""

import argparse
import csv
import json
import os
import sys

import numpy as np
import yaml

from . import harness, mlp, oracle
from .engine import EngineConfig
from .features import compute_normalizers
from .platform import BIG, load_platform_config
from .policies import POLICY_NAMES, RLConfig, save_qtable
from .workload import ScenarioSpec, load_app_library, mean_rate

COOLING_FLAG = {"fan": "fan", "nofan": "no_fan"}

COMMON_DEFAULTS = {"config": None, "apps": None, "seed": 0, "out_dir": "out",
                   "cooling": "fan", "policy": "topil"}


def common_parser():
    # SUPPRESS keeps subcommand-level defaults from clobbering values parsed
    # before the subcommand name; main() fills the real defaults afterwards
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="platform YAML (default: packaged)")
    p.add_argument("--apps", help="application library YAML (default: packaged)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--cooling", choices=sorted(COOLING_FLAG))
    p.add_argument("--policy", choices=POLICY_NAMES)
    return p


def _ctx(args):
    cfg = load_platform_config(args.config)
    lib = load_app_library(args.apps)
    os.makedirs(args.out_dir, exist_ok=True)
    return cfg, lib, COOLING_FLAG[args.cooling]


def _pool(lib, which):
    return {"train": lib.training_pool,
            "eval": lib.evaluation_pool,
            "all": lib.training_pool + lib.evaluation_pool}[which]


# -- trace ------------------------------------------------------------------

def cmd_trace(args):
    cfg, lib, cooling = _ctx(args)
    combos = oracle.make_combos(args.seed, _pool(lib, args.pool),
                                args.combos, lib)
    collector = oracle.TraceCollector(cfg, lib, cooling=cooling,
                                      seed=args.seed)
    trace_dir = os.path.join(args.out_dir, "traces")
    os.makedirs(trace_dir, exist_ok=True)
    doc = []
    for combo in combos:
        records = collector.collect(combo)
        oracle.save_traces(records, os.path.join(trace_dir,
                                                 f"{combo.combo_id}.csv"))
        doc.append({"id": combo.combo_id, "aoi": combo.aoi,
                    "background": [[n, c] for n, c in combo.background]})
        print(f"{combo.combo_id}: aoi={combo.aoi} "
              f"bg={len(combo.background)} rows={len(records)}")
    with open(os.path.join(args.out_dir, "combos.yaml"), "w") as fh:
        yaml.safe_dump({"cooling": cooling, "seed": args.seed,
                        "combos": doc}, fh, sort_keys=False)
    print(f"wrote {len(combos)} trace files to {trace_dir} "
          f"({collector.sim_runs} pinned runs)")
    return 0


def _load_combo_doc(out_dir):
    with open(os.path.join(out_dir, "combos.yaml")) as fh:
        return yaml.safe_load(fh)


# -- extract ----------------------------------------------------------------

def cmd_extract(args):
    cfg, lib, _ = _ctx(args)
    doc = _load_combo_doc(args.out_dir)
    trace_dir = os.path.join(args.out_dir, "traces")
    norm = compute_normalizers(lib, cfg)
    f_b_max = cfg.clusters[BIG].max_freq
    examples = []
    for entry in doc["combos"]:
        records = oracle.load_traces(
            os.path.join(trace_dir, f"{entry['id']}.csv"))
        occupied = tuple(c for _, c in entry["background"])
        ref = mean_rate(lib[entry["aoi"]], BIG, f_b_max, lib.f_sat)
        examples.extend(oracle.extract_training_data(
            records, entry["id"], occupied, ref,
            qos_points=args.qos_points, alpha=args.alpha))
    out = args.out or os.path.join(args.out_dir, "training_set.csv")
    oracle.save_training_set(examples, norm, out)
    print(f"wrote {len(examples)} examples from {len(doc['combos'])} "
          f"combos to {out}")
    return 0


# -- train / nas -------------------------------------------------------------

def _load_data(path):
    combos, x, y, meta = oracle.load_training_set(path)
    return combos, x, y, meta


def cmd_train(args):
    combos, x, y, meta = _load_data(args.data)
    spec = mlp.ModelSpec(input_dim=x.shape[1],
                         hidden=(args.width,) * args.depth,
                         output_dim=y.shape[1])
    cfg = mlp.TrainConfig(lr0=args.lr, batch_size=args.batch_size,
                          max_epochs=args.max_epochs, patience=args.patience,
                          val_split=args.val_split, seed=args.seed)
    model, curve = mlp.train(x, y, spec, cfg, groups=combos,
                             normalizers=meta)
    out = args.out or os.path.join(args.out_dir, f"model_s{args.seed}.bin")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    mlp.save(model, out)
    with open(out + ".curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_mse", "val_mse"])
        w.writerows(curve)
    print(f"trained {spec.layer_dims} on {len(x)} rows: "
          f"val MSE {model.metadata['val_mse']:.5f} "
          f"(best epoch {model.metadata['best_epoch']}) -> {out}")
    return 0


def cmd_nas(args):
    combos, x, y, meta = _load_data(args.data)
    depths = [int(v) for v in args.depths.split(",")]
    widths = [int(v) for v in args.widths.split(",")]
    seeds = [int(v) for v in args.seeds.split(",")]
    cfg = mlp.TrainConfig(max_epochs=args.max_epochs, patience=args.patience)
    results = mlp.grid_search(x, y, depths, widths, cfg, groups=combos,
                              seeds=seeds, normalizers=meta)
    out = os.path.join(args.out_dir, "nas_results.csv")
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["depth", "width", "mean_val_mse",
                                           "val_mses"])
        w.writeheader()
        w.writerows(results)
    best = results[0]
    print(f"best architecture: depth={best['depth']} width={best['width']} "
          f"mean val MSE {best['mean_val_mse']:.5f} ({out})")
    return 0


# -- pretrain-rl --------------------------------------------------------------

def cmd_pretrain_rl(args):
    cfg, lib, _ = _ctx(args)
    qtable, deltas = harness.rl_pretrain(
        cfg, lib, seed=args.seed, episodes=args.episodes,
        app_count=args.apps_per_episode, rl_config=RLConfig())
    out = args.out or os.path.join(args.out_dir, f"qtable_s{args.seed}.npy")
    save_qtable(qtable, out)
    with open(out + ".deltas.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "max_abs_delta"])
        w.writerows(enumerate(deltas))
    print(f"pretrained Q-table over {args.episodes} episodes "
          f"(visited {(qtable != 0).sum()} cells) -> {out}")
    return 0


# -- run ----------------------------------------------------------------------

def cmd_run(args):
    cfg, lib, cooling = _ctx(args)
    spec = ScenarioSpec(seed=args.seed,
                        app_pool=_pool(lib, args.pool),
                        count=args.count, arrival_rate=args.rate,
                        cooling=cooling, instr_scale=args.instr_scale)
    model = mlp.load(args.model) if args.model else None
    qtable = None
    if args.qtable:
        from .policies import load_qtable
        qtable = load_qtable(args.qtable)
    result = harness.run_experiment(cfg, lib, spec, args.policy, model=model,
                                    qtable=qtable, out_dir=args.out_dir,
                                    tag=args.tag or "run")
    print(json.dumps(result.headline(), indent=1))
    return 0


# -- compare ------------------------------------------------------------------

def cmd_compare(args):
    cfg, lib, _ = _ctx(args)
    policies = args.policies.split(",")
    rates = [float(v) for v in args.rates.split(",")]
    coolings = tuple(COOLING_FLAG[c] for c in args.coolings.split(","))
    results, agg = harness.compare(
        policies, rates,
        model_files=args.models.split(",") if args.models else None,
        qtable_files=args.qtables.split(",") if args.qtables else None,
        coolings=coolings, scenario_seed=args.seed, app_count=args.count,
        out_dir=args.out_dir, config_path=args.config, apps_path=args.apps,
        instr_scale=args.instr_scale, workers=args.workers)
    for row in agg:
        print(f"{row['cooling']:7s} rate={row['arrival_rate']:<5g} "
              f"{row['policy']:14s} avgT={row['avg_temp_mean']:6.2f} "
              f"viol={row['violations_mean']:5.2f} "
              f"mig={row['migrations_mean']:6.1f}")
    if args.assert_:
        failures = harness.check_orderings(results, agg, cfg)
        for f in failures:
            print("ASSERT FAIL:", f)
        if failures:
            return 1
        print("all comparison assertions hold")
    return 0


# -- eval-model ----------------------------------------------------------------

def cmd_eval_model(args):
    cfg, lib, cooling = _ctx(args)
    model = mlp.load(args.model)
    report = harness.evaluate_model(model, cfg, lib, seed=args.seed,
                                    n_combos=args.combos,
                                    qos_points=args.qos_points,
                                    cooling=cooling)
    out = os.path.join(args.out_dir, "eval.json")
    with open(out, "w") as fh:
        json.dump(report, fh, indent=1)
    print(json.dumps(report, indent=1))
    return 0


# -- overhead ------------------------------------------------------------------

def cmd_overhead(args):
    cfg, lib, _ = _ctx(args)
    names = (args.app.split(",") if args.app
             else list(lib.training_pool) + list(lib.evaluation_pool))
    rows = []
    for name in names:
        rep = harness.migration_overhead(cfg, lib, name, period=args.period,
                                         run_seconds=args.run_seconds)
        rows.append(rep)
        print(f"{name:16s} m={rep['m_mean']*100:5.2f}% "
              f"(predicted {rep['m_predicted']*100:5.2f}%) "
              f"std={rep['m_std']*100:.3f}pp")
    out = os.path.join(args.out_dir, "overhead.csv")
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    worst = max(r["m_mean"] for r in rows)
    print(f"worst-case m = {worst*100:.2f}% -> {out}")
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser():
    common = common_parser()
    p = argparse.ArgumentParser(
        prog="thermsched",
        description="thermal-aware scheduling simulator and learning pipeline",
        parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("trace", parents=[common],
                        help="collect oracle trace grids for app combos")
    sp.add_argument("--combos", type=int, default=20)
    sp.add_argument("--pool", choices=("train", "eval", "all"),
                    default="train")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("extract", parents=[common],
                        help="traces -> labeled training examples CSV")
    sp.add_argument("--qos-points", type=int, default=12)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("train", parents=[common],
                        help="train the rating network on an examples CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument("--depth", type=int, default=4)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--max-epochs", type=int, default=500)
    sp.add_argument("--patience", type=int, default=20)
    sp.add_argument("--val-split", type=float, default=0.15)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("nas", parents=[common],
                        help="grid-search depth/width by validation MSE")
    sp.add_argument("--data", required=True)
    sp.add_argument("--depths", default="1,2,3,4,5,6")
    sp.add_argument("--widths", default="8,16,32,64,128")
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--max-epochs", type=int, default=150)
    sp.add_argument("--patience", type=int, default=15)
    sp.set_defaults(func=cmd_nas)

    sp = sub.add_parser("pretrain-rl", parents=[common],
                        help="pretrain the Q-learning baseline's table")
    sp.add_argument("--episodes", type=int, default=30)
    sp.add_argument("--apps-per-episode", type=int, default=12)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_pretrain_rl)

    sp = sub.add_parser("run", parents=[common],
                        help="run one scenario under one policy")
    sp.add_argument("--count", type=int, default=20)
    sp.add_argument("--rate", type=float, default=0.1)
    sp.add_argument("--pool", choices=("train", "eval", "all"), default="all")
    sp.add_argument("--instr-scale", type=float, default=50.0)
    sp.add_argument("--model", default=None)
    sp.add_argument("--qtable", default=None)
    sp.add_argument("--tag", default=None)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", parents=[common],
                        help="policy sweep with reports and charts")
    sp.add_argument("--policies", default=",".join(POLICY_NAMES))
    sp.add_argument("--rates", default="0.1,0.2,0.5,1.0")
    sp.add_argument("--coolings", default="fan,nofan")
    sp.add_argument("--count", type=int, default=20)
    sp.add_argument("--instr-scale", type=float, default=200.0)
    sp.add_argument("--models", default=None,
                    help="comma-separated model files (one per seed)")
    sp.add_argument("--qtables", default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--assert", dest="assert_", action="store_true",
                    help="check policy orderings; nonzero exit on failure")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("eval-model", parents=[common],
                        help="held-out decision quality vs brute-force oracle")
    sp.add_argument("--model", required=True)
    sp.add_argument("--combos", type=int, default=10)
    sp.add_argument("--qos-points", type=int, default=8)
    sp.set_defaults(func=cmd_eval_model)

    sp = sub.add_parser("overhead", parents=[common],
                        help="migration-overhead metric vs closed form")
    sp.add_argument("--app", default=None,
                    help="comma-separated app names (default: all)")
    sp.add_argument("--period", type=float, default=0.5)
    sp.add_argument("--run-seconds", type=float, default=160.0)
    sp.set_defaults(func=cmd_overhead)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    for key, val in COMMON_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, val)
    np.seterr(all="raise", under="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
