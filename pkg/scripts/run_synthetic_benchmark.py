"""Active vs random annotation on a synthetic bundle, paired over seeds.

Generates one embedding dataset, runs the full loop once per (mode, seed)
pair, and prints mean +/- sd of the tracked metrics per snapshot so the
acquisition curves can be compared at equal annotation budgets. Raw
histories land in --out as jsonl/csv, one file per run.

Typical call (a few minutes on a laptop):

    python3 scripts/run_synthetic_benchmark.py --seeds 1 2 3 --epochs 400
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from conceptgp import (
    AcquisitionConfig,
    ConceptFitConfig,
    EvalConfig,
    OptSchedule,
    SynthSpec,
    run_experiment,
    run_to_jsonl,
    run_to_metric_csv,
    synth_generate,
)

SUMMARY_KEYS = ("f1_c", "f1_y", "roc_auc_c", "ecce_r", "dci")


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--modes", nargs="+", default=["active", "random"], choices=["active", "random"])
    p.add_argument("--cardinalities", type=int, nargs="+", default=[2, 2, 3])
    p.add_argument("--dim", type=int, default=12)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--noise-scale", type=float, nargs="+", default=[4.0, 1.0, 1.0],
                   help="per-concept cluster spread multiplier; the noisy concept is where acquisition should focus")
    p.add_argument("--data-seed", type=int, default=11)
    p.add_argument("--initial", type=int, default=30)
    p.add_argument("--step", type=int, default=30)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--pool", type=int, default=60)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.02)
    p.add_argument("--no-dci", action="store_true", help="skip the forest metric (it dominates eval time)")
    p.add_argument("--out", type=Path, default=Path("benchmark_out"))
    return p.parse_args(argv)


def summarize(runs):
    """mode -> iteration -> {metric: (mean, sd)} over seeds."""
    table = {}
    for mode, per_seed in runs.items():
        n_snap = len(per_seed[0].records)
        rows = []
        for it in range(n_snap):
            docs = [r.records[it].metrics.to_json() for r in per_seed]
            budget = per_seed[0].records[it].cumulative_annotations
            stats = {}
            for key in SUMMARY_KEYS:
                vals = [d[key] for d in docs if d[key] is not None]
                if vals:
                    stats[key] = (float(np.mean(vals)), float(np.std(vals)))
            rows.append((it, budget, stats))
        table[mode] = rows
    return table


def main(argv=None):
    args = parse_args(argv if argv is not None else sys.argv[1:])
    spec = SynthSpec(
        cardinalities=tuple(args.cardinalities),
        dim=args.dim,
        n_samples=args.n_samples,
        noise_scale=tuple(args.noise_scale),
        seed=args.data_seed,
    )
    dataset = synth_generate(spec)
    fit_config = ConceptFitConfig(
        schedule=OptSchedule(epochs=args.epochs, learning_rate=args.learning_rate)
    )
    eval_config = EvalConfig(compute_dci=not args.no_dci)
    args.out.mkdir(parents=True, exist_ok=True)

    runs = {mode: [] for mode in args.modes}
    for mode in args.modes:
        for seed in args.seeds:
            config = AcquisitionConfig(
                mode=mode,
                initial_samples=args.initial,
                samples_per_iteration=args.step,
                iterations=args.iterations,
                pool_size=args.pool,
                seed=seed,
            )
            started = time.perf_counter()
            run = run_experiment(dataset, config, fit_config=fit_config, eval_config=eval_config)
            elapsed = time.perf_counter() - started
            final = run.records[-1].metrics.to_json()
            print(f"[{mode} seed={seed}] {elapsed:6.1f}s  f1_c={final['f1_c']:.4f}  ecce_r={final['ecce_r']:.4f}")
            stem = args.out / f"{mode}_seed{seed}"
            stem.with_suffix(".jsonl").write_text(run_to_jsonl(run))
            stem.with_suffix(".csv").write_text(run_to_metric_csv(run))
            runs[mode].append(run)

    table = summarize(runs)
    for mode, rows in table.items():
        print(f"\n{mode} (n={len(args.seeds)} seeds), mean +/- sd per snapshot:")
        header = "  it  budget " + "".join(f"{k:>20}" for k in SUMMARY_KEYS)
        print(header)
        for it, budget, stats in rows:
            cells = []
            for key in SUMMARY_KEYS:
                if key in stats:
                    m, s = stats[key]
                    cells.append(f"{m:.4f} +/- {s:.4f}".rjust(20))
                else:
                    cells.append("-".rjust(20))
            print(f"  {it:2d}  {budget:6d} " + "".join(cells))

    if "active" in table and "random" in table:
        a = table["active"][-1][2]["f1_c"][0]
        r = table["random"][-1][2]["f1_c"][0]
        print(f"\nfinal concept F1: active {a:.4f} vs random {r:.4f} (delta {a - r:+.4f})")

    (args.out / "summary.json").write_text(json.dumps(
        {mode: [{"iteration": it, "budget": b, **{k: v[0] for k, v in st.items()}} for it, b, st in rows]
         for mode, rows in table.items()}, indent=2) + "\n")
    print(f"\nraw histories in {args.out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
