"""Command-line entry point: ``acunet <subcommand> ...``.

Exit status is 0 on success, 1 for validation or contract errors and 2 for
I/O errors (missing or unreadable files, unwritable outputs).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import audio
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import downscale_page, load_corpus, read_page_png, save_corpus
from .errors import AcunetError
from .evaluation import ABLATION_SETS, ablation, evaluate, render_overlay, write_ablation_csv
from .model import ModelConfig, parse_film_blocks
from .synth import SynthConfig, synth_generate
from .tensor import no_grad
from .training import TrainConfig, model_from_checkpoint, train

logger = logging.getLogger("acunet")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--base-filters", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=TrainConfig.max_epochs, help="upper bound on epochs")
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--excerpts-per-piece", type=int, default=TrainConfig.excerpts_per_piece)
    p.add_argument("--val-stride", type=int, default=TrainConfig.val_stride)
    p.add_argument("--time-limit", type=float, default=None, help="seconds of training per model")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        max_epochs=args.epochs,
        excerpts_per_piece=args.excerpts_per_piece,
        val_stride=args.val_stride,
        time_limit=args.time_limit,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acunet", description="Audio-conditioned U-Net for sheet-image localisation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--pieces", type=int, default=SynthConfig.pieces)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--film", default="C-G", help="block range (C-G), comma list (A,E) or 'none'")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--log", type=Path, default=None, help="CSV training log (default: <out>.log.csv)")
    _add_train_options(p)

    p = sub.add_parser("eval", help="pixel metrics of a checkpoint on one split")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--report", required=True, type=Path)
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("ablate", help="train and evaluate one model per FiLM block set")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--sets", default=",".join(ABLATION_SETS), help="comma-separated sets; use + inside a set (A+E)")
    p.add_argument("--report", required=True, type=Path)
    p.add_argument("--split", default="test")
    _add_train_options(p)

    p = sub.add_parser("predict", help="render the probability map for one audio excerpt")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--page", required=True, type=Path)
    p.add_argument("--audio", required=True, type=Path)
    p.add_argument("--frame", required=True, type=int, help="last spectrogram frame of the excerpt")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and a tiny model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    return parser


def _split_sets(text: str) -> list[str]:
    # commas separate sets here; join blocks inside one set with "+"
    sets = [s.strip() for s in text.split(",") if s.strip()]
    for s in sets:
        parse_film_blocks(s)
    return sets


def cmd_synth(args) -> int:
    pieces = synth_generate(args.seed, SynthConfig(pieces=args.pieces))
    args.out.mkdir(parents=True, exist_ok=True)
    save_corpus(pieces, args.out)
    print(f"wrote {len(pieces)} pieces to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    model_config = ModelConfig(base_filters=args.base_filters, film_blocks=parse_film_blocks(args.film))
    corpus = load_corpus(args.data)
    log_path = args.log or args.out.with_name(args.out.name + ".log.csv")
    result = train(corpus, model_config, _train_config(args), log_path=log_path)
    save_checkpoint(args.out, result.checkpoint)
    cp = result.checkpoint
    print(f"best epoch {cp.epoch} val_loss {cp.val_loss:.6f}; checkpoint {args.out}, log {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cp = load_checkpoint(args.ckpt)
    pieces = load_corpus(args.data, args.split)
    report = evaluate(pieces, cp, threshold=args.threshold, label=args.split)
    report.write_csv(args.report)
    print(f"{args.split}: P {report.precision:.4f} R {report.recall:.4f} F1 {report.f1:.4f} -> {args.report}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    sets = _split_sets(args.sets)
    corpus = load_corpus(args.data)
    rows = ablation(corpus, sets, ModelConfig(base_filters=args.base_filters), _train_config(args), args.split)
    write_ablation_csv(rows, args.report)
    for r in rows:
        print(f"{r.label:24s} P {r.precision:.4f} R {r.recall:.4f} F1 {r.f1:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    page = downscale_page(read_page_png(args.page)).pixels
    signal = audio.read_wav(args.audio)
    ex = audio.excerpt(audio.spectrogram(signal), args.frame)
    with no_grad():
        prob = model(page[None], ex.values[None]).data[0, 0]
    overlay, raw = render_overlay(page, prob, args.out)
    print(f"max probability {float(np.max(prob)):.4f}; wrote {overlay} and {raw}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    return EXIT_OK if run_all(args.seed, args.trials) else EXIT_INVALID


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage, which is reserved for I/O here
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AcunetError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
