"""Command-line entry point.

Every command exits 0 on success. On failure a single JSON line
``{"error": <kind>, "message": <text>}`` goes to stderr and the exit code is 1
(2 for usage errors).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .autodiff import CheckpointError


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls) -> None:
    for f in fields(cls):
        flags = dict.fromkeys([f"--{f.name.replace('_', '-')}", f"--{f.name}"])
        parser.add_argument(*flags, dest=f"cfg_{f.name}", default=None, type=_coerce,
                            metavar=f.name.upper(), help=f"override {f.name}")


def _dataclass_config(cls, args: argparse.Namespace, config_path: str | None):
    data = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"config file {path} must hold a JSON object")
    for f in fields(cls):
        val = getattr(args, f"cfg_{f.name}")
        if val is not None:
            data[f.name] = val
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {unknown}")
    return cls(**data)


def _parser() -> argparse.ArgumentParser:
    from .data.dataset import DatasetConfig
    from .train import TrainConfig

    p = _Parser(prog="vir-vlfm", description="Toy image change captioning.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    g.add_argument("out", help="dataset directory")
    g.add_argument("--config", help="JSON file with dataset settings")
    _add_dataclass_flags(g, DatasetConfig)

    t = sub.add_parser("train", help="pretrain or adapt")
    t.add_argument("data", help="dataset directory")
    t.add_argument("out", help="run directory")
    t.add_argument("--config", help="JSON file with training settings")
    t.add_argument("--quiet", action="store_true", help="do not echo log lines")
    _add_dataclass_flags(t, TrainConfig)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("data")
    e.add_argument("--split", default="test")
    e.add_argument("--decoders", default="rank,beam", help="comma list of rank, beam, greedy")
    e.add_argument("--out", default=None, help="report directory")
    e.add_argument("--limit", type=int, default=None)

    i = sub.add_parser("infer", help="caption one image pair")
    i.add_argument("checkpoint")
    i.add_argument("before", help="before image (PPM)")
    i.add_argument("after", help="after image (PPM)")
    i.add_argument("--vocab", required=True, help="vocabulary file")
    i.add_argument("--candidates", default=None, help="file of candidate captions to rank")
    i.add_argument("--beams", type=int, default=None)

    v = sub.add_parser("viz-flow", help="export flow fields for pairs")
    v.add_argument("checkpoint")
    v.add_argument("data")
    v.add_argument("out")
    v.add_argument("pair_ids", nargs="+")
    v.add_argument("--split", default="test")

    c = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--coords", type=int, default=32)

    x = sub.add_parser("experiments", help="run the ablation grid")
    x.add_argument("data")
    x.add_argument("out")
    x.add_argument("--pretrain", required=True, help="pretrain checkpoint")
    x.add_argument("--seeds", default="0,1,2")
    x.add_argument("--epochs", type=int, default=15)
    x.add_argument("--train-limit", type=int, default=1000)
    x.add_argument("--lr", type=float, default=None)
    x.add_argument("--val-limit", type=int, default=None)
    x.add_argument("--only", default=None, help="comma list of run names")
    return p


def _cmd_gen_data(args) -> None:
    from .data.dataset import DatasetConfig, build_dataset

    cfg = _dataclass_config(DatasetConfig, args, args.config)
    build_dataset(args.out, cfg, log=lambda m: print(m, file=sys.stderr))
    print(json.dumps({"dataset": str(args.out)}))


def _cmd_train(args) -> None:
    from .train import TrainConfig, train

    cfg = _dataclass_config(TrainConfig, args, args.config)
    path = train(cfg, args.data, args.out, echo=not args.quiet)
    print(json.dumps({"checkpoint": str(path)}))


def _cmd_eval(args) -> None:
    from .evaluate import evaluate, headline

    decoders = [d for d in args.decoders.split(",") if d]
    reports = evaluate(args.checkpoint, args.data, args.split, decoders, args.out, limit=args.limit)
    print(json.dumps({d: headline(r) for d, r in reports.items()}, sort_keys=True))


def _cmd_infer(args) -> None:
    from .autodiff import Tensor, no_grad
    from .data.ppm import read_ppm
    from .data.render import from_uint8
    from .model import load_model
    from .vocab import Vocabulary

    model = load_model(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    a = from_uint8(read_ppm(args.before))[None]
    b = from_uint8(read_ppm(args.after))[None]
    with no_grad():
        prefix = model.prefix(a, b)
    seq, score = model.decoder.generate(Tensor(prefix.data[0]), beams=args.beams)
    result = {"beam": vocab.decode(seq), "beam_score": score}
    if args.candidates:
        cands = [c for c in Path(args.candidates).read_text(encoding="utf-8").splitlines() if c.strip()]
        ranked = model.decoder.rank(prefix, [vocab.encode(c) for c in cands])
        result["rank"] = vocab.decode(ranked[0][0])
        result["rank_score"] = ranked[0][1]
    print(json.dumps(result, sort_keys=True))


def _cmd_viz_flow(args) -> None:
    from .viz import viz_flow

    paths = viz_flow(args.checkpoint, args.data, args.pair_ids, args.out, args.split)
    print(json.dumps({"written": [str(p) for p in paths]}))


def _cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite

    results = run_suite(args.seed, args.coords)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} max_rel_err={r.error:.3e} tol={TOLERANCE:g}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise ArithmeticError(f"gradient check failed for {', '.join(failed)}")
    return 0


def _cmd_experiments(args) -> None:
    from .experiments import run_grid

    only = args.only.split(",") if args.only else None
    seeds = [int(s) for s in args.seeds.split(",")]
    summary = run_grid(args.data, args.out, args.pretrain, seeds, args.epochs, args.train_limit,
                       lr=args.lr, only=only, val_limit=args.val_limit)
    print(json.dumps(summary, sort_keys=True))


COMMANDS = {
    "gen-data": _cmd_gen_data, "train": _cmd_train, "eval": _cmd_eval, "infer": _cmd_infer,
    "viz-flow": _cmd_viz_flow, "gradcheck": _cmd_gradcheck, "experiments": _cmd_experiments,
}


def _fail(kind: str, message: str, code: int = 1) -> int:
    print(json.dumps({"error": kind, "message": " ".join(message.split())}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except (FileNotFoundError, CheckpointError, KeyError, ValueError, ArithmeticError,
            RuntimeError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
