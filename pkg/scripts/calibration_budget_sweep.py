"""How concept calibration moves with annotation budget, no loop involved.

Draws budgets of random (sample, concept) annotations from the train split,
fits the concept classifiers once per budget, and reports test-split F1,
ECCE and ECE. Useful for checking that the Dirichlet targets keep the
classifiers honest when labels are scarce, before blaming the acquisition
strategy for any miscalibration.

    python3 scripts/calibration_budget_sweep.py --budgets 20 40 80 160
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from conceptgp import (
    AnnotationLedger,
    ConceptFitConfig,
    EvalConfig,
    HeadConfig,
    OptSchedule,
    SynthSpec,
    evaluate,
    fit_concept,
    fit_head,
    fit_standardizer,
    load_bundle,
    standardize_dataset,
    substream,
    synth_generate,
)


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--bundle", type=Path, default=None, help="manifest or bundle dir; default is a synthetic dataset")
    p.add_argument("--budgets", type=int, nargs="+", default=[20, 40, 80, 160],
                   help="numbers of annotated samples (each sample contributes one label per concept)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.02)
    p.add_argument("--no-dci", action="store_true")
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv if argv is not None else sys.argv[1:])
    if args.bundle is not None:
        dataset = load_bundle(args.bundle)
    else:
        dataset = synth_generate(SynthSpec(seed=args.seed))
    std = fit_standardizer(dataset.embeddings[dataset.split_indices("train")])
    ds = standardize_dataset(std, dataset)

    fit_config = ConceptFitConfig(
        schedule=OptSchedule(epochs=args.epochs, learning_rate=args.learning_rate), seed=args.seed
    )
    eval_config = EvalConfig(compute_dci=not args.no_dci)
    head_config = HeadConfig(seed=args.seed)

    # one permutation, prefixes per budget: bigger budgets strictly extend smaller ones
    train = ds.split_indices("train")
    order = substream(args.seed, "sweep", "select").permutation(train)

    print(f"{'budget':>7} {'f1_c':>8} {'f1_y':>8} {'ecce_r':>8} {'ece1':>8}" + ("" if args.no_dci else f" {'dci':>8}"))
    for budget in sorted(args.budgets):
        if budget > train.size:
            print(f"{budget:7d} skipped: train split holds {train.size} samples")
            continue
        ledger = AnnotationLedger()
        for s in order[:budget]:
            for c in range(ds.schema.k):
                ledger.add(int(s), c, ds.annotation_value(int(s), c))
        visible = replace(ds, concept_annotations=dict(ledger.entries))
        gps = [fit_concept(visible, ci, fit_config) for ci in range(ds.schema.k)]
        head = fit_head(gps, visible, head_config)
        report = evaluate(gps, head, ds, eval_config, substream(args.seed, "sweep", "eval", budget))
        doc = report.to_json()
        row = f"{budget:7d} {doc['f1_c']:8.4f} {doc['f1_y']:8.4f} {doc['ecce_r']:8.4f} {doc['ece1']:8.4f}"
        if not args.no_dci and doc["dci"] is not None:
            row += f" {doc['dci']:8.4f}"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
