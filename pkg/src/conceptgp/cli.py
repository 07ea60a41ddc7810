"""Command-line entry points: synth, run, eval, serve."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .concepts import ConceptFitConfig
from .data import BundleError, load_bundle, standardize_dataset, write_bundle
from .head import HeadConfig
from .loop import (
    AcquisitionConfig,
    EvalConfig,
    LoopError,
    evaluate,
    load_models,
    run_experiment,
    run_to_jsonl,
    run_to_metric_csv,
    save_models,
)
from .rng import substream
from .synth import SynthSpec, synth_generate


def _cmd_synth(args: argparse.Namespace) -> int:
    doc = {}
    if args.spec is not None:
        doc = json.loads(Path(args.spec).read_text())
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = SynthSpec.from_dict(doc)
    dataset = synth_generate(spec)
    manifest = write_bundle(dataset, args.out)
    checksum = json.loads(manifest.read_text())["checksum"]
    print(f"bundle: {manifest}")
    print(f"samples: {dataset.n}  dim: {dataset.d}  concepts: {dataset.schema.k}")
    print(f"checksum: {checksum}")
    return 0


def _run_configs(args: argparse.Namespace, seed: int) -> tuple[AcquisitionConfig, ConceptFitConfig, HeadConfig, EvalConfig]:
    acq = AcquisitionConfig(
        mode=args.mode,
        initial_samples=args.initial,
        samples_per_iteration=args.step,
        iterations=args.iterations,
        pool_size=args.pool,
        seed=seed,
    )
    fit = ConceptFitConfig(seed=seed)
    schedule = fit.schedule
    if args.epochs is not None:
        schedule = replace(schedule, epochs=args.epochs)
    if args.learning_rate is not None:
        schedule = replace(schedule, learning_rate=args.learning_rate)
    fit = replace(fit, schedule=schedule)
    head = HeadConfig(seed=seed)
    if args.head_epochs is not None:
        head = replace(head, max_epochs=args.head_epochs)
    ev = EvalConfig(prediction_samples=args.prediction_samples, compute_dci=not args.no_dci)
    return acq, fit, head, ev


def _cmd_run(args: argparse.Namespace) -> int:
    dataset = load_bundle(args.bundle)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        raise ValueError("--seeds must name at least one seed")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    runs = []
    for seed in seeds:
        acq, fit, head, ev = _run_configs(args, seed)
        try:
            run = run_experiment(dataset, acq, fit_config=fit, head_config=head, eval_config=ev)
        except LoopError as e:
            raise LoopError(f"seed {seed}: {e}") from e
        (out / f"run_{args.mode}_seed{seed}.jsonl").write_text(run_to_jsonl(run))
        (out / f"metrics_{args.mode}_seed{seed}.csv").write_text(run_to_metric_csv(run))
        save_models(run, out / f"models_{args.mode}_seed{seed}")
        runs.append(run)
        final = run.records[-1].metrics
        print(f"seed {seed}: final f1_c={final.f1_c:.4f} f1_y={final.f1_y:.4f} ecce_r={final.ecce_r:.4f}")

    print()
    print(f"mode={args.mode} seeds={seeds} (mean ± sd per snapshot)")
    header = f"{'iter':>4}  {'annotations':>11}  {'f1_c':>15}  {'f1_y':>15}  {'ecce_r':>15}"
    print(header)
    for i in range(len(runs[0].records)):
        cells = [f"{i:>4}", f"{runs[0].records[i].cumulative_annotations:>11}"]
        for key in ("f1_c", "f1_y", "ecce_r"):
            values = np.array([getattr(r.records[i].metrics, key) for r in runs])
            cells.append(f"{values.mean():.4f} ± {values.std():.4f}".rjust(15))
        print("  ".join(cells))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    dataset = load_bundle(args.bundle)
    std, gps, head = load_models(args.models)
    ds = standardize_dataset(std, dataset)
    report = evaluate(
        gps,
        head,
        ds,
        EvalConfig(prediction_samples=args.samples),
        substream(args.seed, "cli-eval"),
    )
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    ui = args.ui
    if ui is None and Path("frontend/dist").is_dir():
        ui = "frontend/dist"
    app = create_app(bundle_root=args.bundle_root, ui_dir=ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptgp", description="GP concept bottleneck pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding bundle")
    p.add_argument("--spec", help="JSON file with generator fields (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="run the annotation loop on a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--mode", choices=("active", "random"), default="active")
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--step", type=int, default=60, help="samples annotated per iteration")
    p.add_argument("--pool", type=int, default=95, help="active-mode candidate pool size")
    p.add_argument("--initial", type=int, default=40, help="seed samples annotated up front")
    p.add_argument("--epochs", type=int, help="override GP fit epochs")
    p.add_argument("--learning-rate", type=float, help="override GP fit learning rate")
    p.add_argument("--head-epochs", type=int, help="override head fit epochs")
    p.add_argument("--prediction-samples", type=int, default=256)
    p.add_argument("--no-dci", action="store_true", help="skip the forest-based DCI metric")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="evaluate saved models on a bundle's test split")
    p.add_argument("--bundle", required=True)
    p.add_argument("--models", required=True, help="directory produced by `run`")
    p.add_argument("--samples", type=int, default=256, help="MC draws per prediction")
    p.add_argument("--seed", type=int, default=0, help="prediction RNG seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="start the annotation session service")
    p.add_argument("--bundle-root", default=".", help="base directory for relative bundle paths")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui", help="built frontend directory to serve under /ui")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BundleError, ValueError, FileNotFoundError, json.JSONDecodeError, LoopError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
