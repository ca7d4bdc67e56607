"""``pointlab`` command line: simulate, preprocess, train, evaluate, compare, gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import load_dataset, preprocess, save_dataset
from .decoders import N_MC_EVAL
from .harness import (ExperimentConfig, HarnessError, compare, failed_cells, gradcheck,
                      gradcheck_families, downsized, run_experiment)
from .metrics import evaluate
from .model import ModelSpec, TPPModel
from .simulate import HawkesParams, paper_hawkes_params, simulate_dataset


def _emit(doc, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_simulate(args) -> int:
    if args.params == "paper-hawkes":
        params = paper_hawkes_params()
    elif args.params == "paper-hawkes-normalized":
        params = paper_hawkes_params(normalized=True)
    else:
        if not args.rates:
            raise HarnessError("--params poisson needs --rates")
        K = len(args.rates)
        params = HawkesParams(args.rates, [[0.0] * K] * K, [[1.0] * K] * K)
    ds = simulate_dataset(params, args.sequences, t_end=args.t_end, seed=args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} sequences ({ds.num_events} events) to {args.out}", file=sys.stderr)
    return 0


def cmd_preprocess(args) -> int:
    ds = preprocess(load_dataset(args.input), top_marks=args.top_marks, scale_to=args.scale)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} sequences, K={ds.num_marks} to {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    doc = json.loads(Path(args.config).read_text())
    if args.output:
        doc["output"] = args.output
    if args.seeds:
        doc["seeds"] = args.seeds
    if args.max_epochs is not None:
        doc.setdefault("schedule", {})["max_epochs"] = args.max_epochs
    if args.window_q is not None:
        doc["window_q"] = args.window_q
    cfg = ExperimentConfig.from_dict(doc)
    out = run_experiment(cfg, log=lambda msg: print(msg, file=sys.stderr))
    failed = failed_cells(out)
    print(str(out))
    for r in failed:
        print(f"failed: {r['dataset']} {r['model']} seed={r['seed']}: {r['error']}", file=sys.stderr)
    return 1 if failed else 0


def cmd_evaluate(args) -> int:
    model = TPPModel.from_checkpoint(json.loads(Path(args.checkpoint).read_text()))
    ds = load_dataset(args.data)
    seqs = ds.subset(args.split) if ds.splits and args.split else list(ds.sequences)
    report = evaluate(model, seqs, n_mc=args.n_mc)
    _emit(report.to_dict(), args.out)
    return 0


def cmd_compare(args) -> int:
    _emit(compare(args.files, args.metric, args.dir, args.alpha), args.out)
    return 0


def cmd_gradcheck(args) -> int:
    if args.all:
        specs = gradcheck_families()
    else:
        specs = [downsized(ModelSpec(args.decoder, args.encoding, args.history))]
    failed = 0
    for spec in specs:
        r = gradcheck(spec, tolerance=args.tol)
        failed += not r.passed
        print(f"{'PASS' if r.passed else 'FAIL'} {r.model:24s} max_rel_err={r.max_error:.2e}")
    print(f"{len(specs) - failed}/{len(specs)} passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointlab", description="Marked temporal point process toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a synthetic dataset")
    p.add_argument("--params", choices=["paper-hawkes", "paper-hawkes-normalized", "poisson"], default="paper-hawkes")
    p.add_argument("--rates", type=float, nargs="+", help="per-mark rates for --params poisson")
    p.add_argument("--sequences", type=int, default=1000)
    p.add_argument("--t-end", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="filter marks and rescale times")
    p.add_argument("--input", required=True)
    p.add_argument("--top-marks", type=int, default=50)
    p.add_argument("--scale", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--window-q", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", help="split to use when the dataset has splits")
    p.add_argument("--n-mc", type=int, default=N_MC_EVAL)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="rank models across datasets")
    p.add_argument("files", nargs="+", help="metrics.jsonl files")
    p.add_argument("--metric", default="nll_t")
    p.add_argument("--dir", choices=["min", "max"], help="defaults to the metric's natural direction")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--all", action="store_true")
    p.add_argument("--decoder", default="POISSON")
    p.add_argument("--encoding")
    p.add_argument("--history")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HarnessError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
