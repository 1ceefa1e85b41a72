"""Command-line entry point: ``starformer {gen,train,eval,bench,gradcheck,reachability}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .checkpoint import read_config
from .harness import (MODEL_KINDS, PAPER_SCALE, TrainConfig, bench, bench_csv, cmd_eval, cmd_gen,
                      cmd_train, make_config, speed_ratios)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    for f in fields(TrainConfig):
        if f.name == "paper_scale":
            continue
        if f.name == "model":
            p.add_argument("--model", choices=MODEL_KINDS, default=None)
        elif f.name in ("ring_wraparound", "share_params"):
            p.add_argument(_flag(f.name), dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        else:
            p.add_argument(_flag(f.name), dest=f.name, default=None, metavar=f.name.upper(),
                           help=f"default {f.default!r}")
    p.add_argument("--config", help="plain-text 'key = value' file with TrainConfig fields")
    p.add_argument("--paper-scale", action="store_true",
                   help="preset: " + ", ".join(f"{k}={v}" for k, v in PAPER_SCALE.items()))


def _train_config(args) -> TrainConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(TrainConfig)
                 if f.name != "paper_scale" and hasattr(args, f.name)}
    file_values = read_config(args.config) if args.config else None
    return make_config(overrides, file_values, paper_scale=args.paper_scale)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="starformer",
                                 description="Star-topology encoder experiments on Masked Summation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="write train/dev/test Masked Summation files")
    g.add_argument("--n", type=int, default=32)
    g.add_argument("--k", type=int, default=5)
    g.add_argument("--d", type=int, default=10)
    g.add_argument("--train-count", type=int, default=2000)
    g.add_argument("--dev-count", type=int, default=1000)
    g.add_argument("--test-count", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--paper-scale", action="store_true", help="n=200, k=10, d=10, 10k per split")
    g.add_argument("--out-dir", default="data")

    t = sub.add_parser("train", help="train a model; writes metrics.csv, summary.txt, model.ckpt")
    _add_train_flags(t)

    e = sub.add_parser("eval", help="MSE of a checkpoint on a dataset file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)

    b = sub.add_parser("bench", help="forward-pass timing and score-pair counts")
    b.add_argument("--lengths", default="64,128,256,512,1024")
    b.add_argument("--models", default="star,baseline")
    b.add_argument("--batch", type=int, default=4)
    b.add_argument("--hidden", type=int, default=64)
    b.add_argument("--heads", type=int, default=4)
    b.add_argument("--steps", type=int, default=3)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--out", help="also write the CSV here")

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op and tiny models")
    gc.add_argument("--seeds", type=int, default=10)

    r = sub.add_parser("reachability", help="numerical input->output Jacobian support")
    r.add_argument("--model", choices=MODEL_KINDS[:3] + ("baseline",), default="star_no_radical")
    r.add_argument("--steps", type=int, default=2)
    r.add_argument("--n", type=int, default=12)
    r.add_argument("--seed", type=int, default=0)

    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")

    if args.cmd == "gen":
        n, k, d = args.n, args.k, args.d
        counts = {"train": args.train_count, "dev": args.dev_count, "test": args.test_count}
        if args.paper_scale:
            n, k, d = PAPER_SCALE["n"], PAPER_SCALE["k"], PAPER_SCALE["d"]
            counts = {s: PAPER_SCALE[f"{s}_count"] for s in counts}
        for p in cmd_gen(n, k, d, counts, args.seed, args.out_dir):
            print(p)
    elif args.cmd == "train":
        cfg = _train_config(args)
        metrics = cmd_train(cfg)
        out = Path(cfg.out_dir)
        print((out / "summary.txt").read_text(), end="")
        print(f"wrote {out / 'metrics.csv'}, {out / 'summary.txt'}, {out / 'model.ckpt'}")
        del metrics
    elif args.cmd == "eval":
        res = cmd_eval(args.checkpoint, args.data)
        print(f"count = {res['count']}\nmse = {res['mse']!r}\nk_half_mse = {res['k_half_mse']!r}")
    elif args.cmd == "bench":
        lengths = [int(x) for x in args.lengths.split(",")]
        kinds = args.models.split(",")
        print(f"# config: batch={args.batch} hidden={args.hidden} heads={args.heads} steps={args.steps} "
              f"d=10 repeats={args.repeats} warmup={args.warmup} threads=1 forward-only")
        rows = bench(lengths, kinds, batch=args.batch, hidden=args.hidden, heads=args.heads,
                     steps=args.steps, repeats=args.repeats, warmup=args.warmup)
        text = bench_csv(rows)
        print(text, end="")
        for n, ratio in sorted(speed_ratios(rows).items()):
            print(f"# speedup baseline/star at n={n}: {ratio:.2f}x")
        if args.out:
            Path(args.out).write_text(text)
    elif args.cmd == "gradcheck":
        from .suite import GRAD_TOL, gradcheck_suite

        results = gradcheck_suite(range(args.seeds))
        width = max(len(r.name) for r in results)
        for r in results:
            print(f"{r.name:<{width}}  max_rel_err={r.max_rel_error:.3e}  {'PASS' if r.passed else 'FAIL'}")
        ok = all(r.passed for r in results)
        print(f"tolerance {GRAD_TOL:g}: {'all passed' if ok else 'FAILURES'}")
        return 0 if ok else 1
    elif args.cmd == "reachability":
        from .suite import reachability

        rep = reachability(args.model, args.steps, args.n, args.seed)
        print(f"# {args.model} T={args.steps} n={args.n}: rows = input position i, "
              f"cols = output position j, entry = 1 if max|dh_j/dx_i| > {rep.threshold:g}")
        for row in rep.reached():
            print(" ".join("1" if v else "." for v in row))
        print(f"max dependency distance (ring) = {rep.max_distance}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
