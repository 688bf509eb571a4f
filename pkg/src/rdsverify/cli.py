"""Command-line entry point: synth | preprocess | train | eval."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import DataError, RdsError
from .model import PavenetConfig, PavenetParams
from .preprocess import preprocess, write_feature_csv
from .synth import MAX_DIGITS, MIN_DIGITS, SynthConfig, write_dataset
from .traceio import load_manifest, validate_pairing
from .training import TrainConfig, load_config, train
from .verify import RANDOM_CAP, Protocol, Scope, evaluate, format_report, write_outputs

OUT_ENV = "RDSVERIFY_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("rdsverify")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rdsverify", description="Online random-digit-string writer verification.")
    parser.add_argument("--threads", type=_positive_int, default=1, help="worker cap for evaluation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./synth)")
    p.add_argument("--writers", type=_positive_int, default=30)
    p.add_argument("--per-session", type=_positive_int, default=10)
    p.add_argument("--train-writers", type=int)
    p.add_argument("--beta", type=float, default=0.35)
    p.add_argument("--drift", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("preprocess", help="write 12-channel feature CSVs for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./features)")

    p = sub.add_parser("train", help="train the embedding network")
    p.add_argument("--manifest", required=True, help="training-writer manifest")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./run)")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--steps", type=_positive_int, dest="steps_per_epoch")
    p.add_argument("--lr0", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--rdel-min", type=float)
    p.add_argument("--rdel-max", type=float)
    p.add_argument("--id-normalization", choices=("identities", "batch"))
    p.add_argument("--channels", type=_positive_int)
    p.add_argument("--no-dpm", action="store_true")
    p.add_argument("--no-gta", action="store_true")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the DTW baseline")
    p.add_argument("--manifest", required=True, help="test-writer manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=("dtw",))
    p.add_argument("--protocol", choices=[m.value for m in Protocol], default="4v1")
    p.add_argument("--scope", choices=[m.value for m in Scope], default="across")
    p.add_argument("--forgery", choices=("skilled", "random", "both"), default="both")
    p.add_argument("--random-cap", type=_positive_int, default=RANDOM_CAP)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./eval)")
    return parser


def _out_dir(args, default: str) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or default)


def _load_sequences(manifest_path):
    manifest = load_manifest(manifest_path)
    for w in validate_pairing(manifest):
        log.warning(w)
    return manifest, [preprocess(e.load()) for e in manifest.entries]


def cmd_synth(args) -> int:
    cfg = SynthConfig(args.writers, args.per_session, args.beta, args.drift, args.seed, args.train_writers)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args, "synth")
    manifest = write_dataset(cfg, out)
    print(f"writers: {cfg.num_writers} (train {cfg.n_train}, test {cfg.num_writers - cfg.n_train})")
    print(f"traces: {len(manifest)} ({cfg.per_session_count} genuine + {cfg.per_session_count} "
          f"skilled forgeries per writer and session)")
    print(f"contents: {MIN_DIGITS}-{MAX_DIGITS} digits")
    print(f"seed: {cfg.seed}")
    print(f"output: {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args, "features")
    out.mkdir(parents=True, exist_ok=True)
    for e in manifest.entries:
        write_feature_csv(preprocess(e.load()), out / (Path(e.path).stem + ".csv"))
    print(f"wrote {len(manifest)} feature files to {out}")
    return EXIT_OK


def _train_configs(args) -> tuple[TrainConfig, PavenetConfig]:
    train_kw, model_kw = load_config(args.config) if args.config else ({}, {})
    for name in ("epochs", "steps_per_epoch", "lr0", "decay", "rdel_min", "rdel_max", "id_normalization", "seed"):
        value = getattr(args, name)
        if value is not None:
            train_kw[name] = value
    if args.channels is not None:
        model_kw["channels"] = args.channels
    if args.no_dpm:
        model_kw["use_dpm"] = False
    if args.no_gta:
        model_kw["use_gta"] = False
    tc = TrainConfig(**train_kw)
    mc = PavenetConfig(**model_kw)
    tc.validate()
    mc.validate()
    return tc, mc


def cmd_train(args) -> int:
    try:
        tc, mc = _train_configs(args)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    manifest, seqs = _load_sequences(args.manifest)
    out = _out_dir(args, "run")
    print(" ".join(f"{f.name}={getattr(tc, f.name)}" for f in dataclasses.fields(tc)))
    out.mkdir(parents=True, exist_ok=True)
    result = train(seqs, tc, mc, log_path=out / "train_log.csv")
    ckpt = out / "model.ckpt"
    result.params.save(ckpt, {"train_writers": manifest.writers, "train_config": dataclasses.asdict(tc)})
    last = result.log[-1]
    print(f"final L_total={last['L_total']:.6f} lr={last['lr']:.6g}")
    print(f"checkpoint: {ckpt}")
    print(f"log: {out / 'train_log.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.baseline is None):
        raise UsageError("eval needs exactly one of --checkpoint or --baseline dtw")
    params: Optional[PavenetParams] = None
    if args.checkpoint:
        params, meta = PavenetParams.load_with_meta(args.checkpoint)
    manifest, seqs = _load_sequences(args.manifest)
    if params is not None:
        overlap = sorted(set(meta.get("train_writers", [])) & set(manifest.writers))
        if overlap:
            raise DataError(f"test writers {overlap} were used for training (open-set split required)")
    kinds = ("skilled", "random") if args.forgery == "both" else (args.forgery,)
    result = evaluate(seqs, params, Protocol(args.protocol), Scope(args.scope),
                      args.random_cap, args.seed, args.threads)
    out = _out_dir(args, "eval")
    write_outputs(result, out, kinds)
    sys.stdout.write(format_report(result, kinds))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RdsError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
