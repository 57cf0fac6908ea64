"""Command-line entry point: ``keystego <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Passphrases are never
written to disk or to the log.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import attack, diagnostics, pipeline, training
from .errors import KeystegoError
from .inn import load_checkpoint, save_checkpoint
from .metrics import MetricsReport

logger = logging.getLogger("keystego")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _key(args) -> bytes:
    if getattr(args, "key_hex", None):
        try:
            return bytes.fromhex(args.key_hex)
        except ValueError:
            raise UsageError("--key-hex is not valid hexadecimal") from None
    if getattr(args, "key", None) is None:
        raise UsageError("a passphrase is required (--key or --key-hex)")
    return args.key.encode("utf-8")


def _add_key(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--key", help="passphrase (UTF-8)")
    g.add_argument("--key-hex", help="passphrase as raw bytes in hex")


def _train_config(args) -> training.TrainConfig:
    cfg = training.TrainConfig.from_json(args.config) if args.config else training.TrainConfig()
    overrides = {"seed": args.seed, "max_steps": args.steps, "epochs": args.epochs, "decay_rate": args.decay_rate,
                 "preprocess": args.preprocess, "key_mode": args.key_mode, "n_blocks": args.blocks}
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()


def _add_train_opts(p):
    p.add_argument("--data", required=True, help="directory of PNG training images")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--steps", type=int, help="stop after this many optimiser steps")
    p.add_argument("--epochs", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--decay-rate", type=float)
    p.add_argument("--preprocess", choices=["normalize", "standardize"])
    p.add_argument("--key-mode", choices=["random", "fixed", "none"])
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="keystego", description="Key-conditioned invertible image hiding")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a desk-scale model")
    _add_train_opts(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="CSV path for per-epoch history")

    p = sub.add_parser("embed", help="hide a secret image inside a host image")
    p.add_argument("--host", required=True)
    p.add_argument("--secret", required=True)
    _add_key(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="recover the secret from a container")
    p.add_argument("--container", required=True)
    _add_key(p)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, help="placeholder noise seed (default: OS entropy)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="C-, S- and S'-pair metrics for one host/secret pair")
    p.add_argument("--host", required=True)
    p.add_argument("--secret", required=True)
    _add_key(p)
    p.add_argument("--wrong-key", help="probe passphrase for the S'-pair (default: passphrase + fixed suffix)")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write the report as JSON")

    p = sub.add_parser("ablate", help="decay-rate / pre-processing sweep")
    _add_train_opts(p)
    p.add_argument("--out", required=True, help="CSV path for the table")

    p = sub.add_parser("divergence", help="per-block drift of the secret pipeline")
    p.add_argument("--host", required=True)
    p.add_argument("--secret", required=True)
    _add_key(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="CSV path")

    p = sub.add_parser("diffviz", help="amplified host/container difference image")
    p.add_argument("--host", required=True)
    p.add_argument("--container", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("attack", help="surrogate attack simulation")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="directory of PNG images used to build attack pairs")
    p.add_argument("--mode", choices=["embedding", "extraction", "both"], default="extraction")
    p.add_argument("--key-mode", choices=["none", "fixed", "random", "all"], default="all")
    p.add_argument("--budget", type=int, default=2000, help="surrogate optimiser steps")
    p.add_argument("--crop", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path")
    return parser


# ------------------------------------------------------------------ commands

def cmd_train(args):
    cfg = _train_config(args)
    model, hist = training.train(pipeline.load_image_dir(args.data), cfg, log_every=50 if args.verbose else 0)
    save_checkpoint(model, args.out)
    if args.history:
        hist.write_csv(args.history)
    print(f"trained {hist.steps} steps in {hist.seconds:.1f}s: loss {hist.initial_loss:.3f} -> {hist.final_loss:.3f}")


def cmd_embed(args):
    model = load_checkpoint(args.model)
    container, _ = pipeline.embed(pipeline.read_png(args.host), pipeline.read_png(args.secret), _key(args), model)
    pipeline.write_png(args.out, container)


def cmd_extract(args):
    model = load_checkpoint(args.model)
    secret = pipeline.extract(pipeline.read_png(args.container), _key(args), model, args.seed)
    pipeline.write_png(args.out, secret)


def cmd_evaluate(args):
    model = load_checkpoint(args.model)
    key = _key(args)
    wrong = args.wrong_key.encode("utf-8") if args.wrong_key else key + training.WRONG_SUFFIX
    host, secret = pipeline.read_png(args.host), pipeline.read_png(args.secret)
    container, _ = pipeline.embed(host, secret, key, model)
    extracted = pipeline.extract(container, key, model, args.seed)
    probe = pipeline.extract(container, wrong, model, args.seed)
    report = MetricsReport.from_images(host, container, secret, extracted, probe)
    print(report.table())
    if args.json:
        Path(args.json).write_text(report.to_json())


def cmd_ablate(args):
    cfg = _train_config(args)
    rows = training.ablate(pipeline.load_image_dir(args.data), cfg)
    training.write_ablation_csv(rows, args.out)
    print(training.ablation_table(rows))


def cmd_divergence(args):
    model = load_checkpoint(args.model)
    rows = diagnostics.secret_divergence_report(model, pipeline.read_png(args.host), pipeline.read_png(args.secret),
                                                _key(args))
    print(diagnostics.divergence_table(rows))
    if args.out:
        diagnostics.write_divergence_csv(rows, args.out)


def cmd_diffviz(args):
    pipeline.write_png(args.out, pipeline.diff_visualize(pipeline.read_png(args.host),
                                                         pipeline.read_png(args.container)))


def cmd_attack(args):
    model = load_checkpoint(args.model)
    images = pipeline.load_image_dir(args.data)
    modes = ["embedding", "extraction"] if args.mode == "both" else [args.mode]
    key_modes = list(attack.KEY_MODES) if args.key_mode == "all" else [args.key_mode]
    reports = [attack.attack_sim(model, images, m, k, budget=args.budget, crop=args.crop, seed=args.seed)
               for m in modes for k in key_modes]
    print(attack.attack_table(reports))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "key_mode", "psnr", "ssim", "budget"])
            for r in reports:
                w.writerow([r.mode, r.key_mode, f"{r.psnr:.4f}", f"{r.ssim:.6f}", r.budget])


COMMANDS = {
    "train": cmd_train, "embed": cmd_embed, "extract": cmd_extract, "evaluate": cmd_evaluate,
    "ablate": cmd_ablate, "divergence": cmd_divergence, "diffviz": cmd_diffviz, "attack": cmd_attack,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"choose a command: {', '.join(COMMANDS)}")
    except UsageError as exc:
        print(f"keystego: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"keystego {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KeystegoError, OSError) as exc:
        print(f"keystego {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
