"""Command-line interface of the GMS pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, NoReturn

from .archive import read_archive_header
from .data import DomainSpec, generate_synthetic, load_dataset, worker_count
from .errors import ContractError, UsageError
from .losses import LossConfig
from .tokenizer import TokenizerKind, VaeTrainConfig, save_tokenizer, train_conv_vae
from .trainer import (
    evaluate,
    make_train_config,
    predict,
    run_ablation,
    run_cross_domain,
    run_tokenizer_ablation,
    train,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .trainer import ExperimentTable, TrainConfig

log = logging.getLogger(__name__)

TOKENIZER_CHOICES = {"patch": TokenizerKind.patch, "vae": TokenizerKind.conv_vae}
TOKENIZER_FILE = "tokenizer.gmsa"


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting, so the caller decides the exit code."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _on_off(value: str) -> bool:
    if value not in {"on", "off"}:
        msg = f"expected 'on' or 'off', got {value!r}"
        raise argparse.ArgumentTypeError(msg)
    return value == "on"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=7, help="master seed (default: %(default)s)")
    parser.add_argument("--deterministic", type=_on_off, default=True, metavar="{on,off}", help="default: on")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")


def _add_training(parser: argparse.ArgumentParser, *, multi_dataset: bool = False) -> None:
    if multi_dataset:
        parser.add_argument("--dataset", action="append", required=True, help="dataset directory (give twice: A, B)")
    else:
        parser.add_argument("--dataset", required=True, help="dataset directory")
    parser.add_argument("--tokenizer", choices=sorted(TOKENIZER_CHOICES), default="patch")
    parser.add_argument("--tokenizer-weights", help="conv-VAE weights written by train-tokenizer")
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--loss", choices=["lm", "seg", "both"], default="both")
    parser.add_argument("--size", type=int, default=64, help="training image size")
    parser.add_argument("--out", required=True, help="output directory")
    _add_common(parser)


def build_parser() -> argparse.ArgumentParser:
    """Create the ``gms`` argument parser with all subcommands."""
    parser = _Parser(prog="gms", description="Generative segmentation in the latent space of a frozen tokenizer.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic segmentation dataset")
    p.add_argument("--domain", choices=["A", "B"], required=True)
    p.add_argument("--n", type=int, default=250, help="number of samples")
    p.add_argument("--size", type=int, default=64, help="image size in pixels")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("train-tokenizer", help="train the conv-VAE tokenizer")
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--out", required=True, help=f"output directory (writes {TOKENIZER_FILE})")
    _add_common(p)

    p = sub.add_parser("train", help="train the latent mapping model")
    _add_training(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--out", help="directory for report.json")
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("predict", help="segment one PPM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", help="reference mask; adds DSC and a contour overlay")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("ablate", help="train with lm, seg and both losses")
    _add_training(p)

    p = sub.add_parser("cross-domain", help="train on A and B, evaluate each on both")
    _add_training(p, multi_dataset=True)

    p = sub.add_parser("tok-ablate", help="compare the patch and conv-VAE tokenizers")
    _add_training(p)

    p = sub.add_parser("inspect-archive", help="print an archive header as JSON")
    p.add_argument("archive")
    p.add_argument("--verbose", action="store_true")
    return parser


def _train_config(args: argparse.Namespace, dataset: str, out: Path) -> TrainConfig:
    return make_train_config(
        dataset,
        tokenizer=TOKENIZER_CHOICES[args.tokenizer],
        tokenizer_weights=args.tokenizer_weights,
        loss=LossConfig.from_mode(args.loss),
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        image_size=args.size,
        seed=args.seed,
        output_dir=out,
        deterministic=args.deterministic,
        progress=sys.stderr.isatty(),
    )


def _print_table(table: ExperimentTable) -> None:
    print(table.to_text())


def _gen_data(args: argparse.Namespace) -> None:
    threads = worker_count(args.deterministic)
    manifest = generate_synthetic(DomainSpec.for_domain(args.domain), args.n, args.size, args.seed, args.out, threads)
    print(f"Wrote {len(manifest)} samples to {manifest.root}")


def _train_tokenizer(args: argparse.Namespace) -> None:
    samples = load_dataset(args.dataset, threads=worker_count(args.deterministic))
    config = VaeTrainConfig(
        epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed, progress=sys.stderr.isatty()
    )
    tok = train_conv_vae(samples, config)
    path = Path(args.out) / TOKENIZER_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    save_tokenizer(tok, path)
    print(f"Wrote {path} (digest {tok.digest()[:16]})")


def _train(args: argparse.Namespace) -> None:
    result = train(_train_config(args, args.dataset, Path(args.out)))
    report = result.report
    print(f"test DSC {report.dsc:.4f}  IoU {report.iou:.4f}  HD95 {report.hd95:.3f}  (n={report.n})")


def _eval(args: argparse.Namespace) -> None:
    report = evaluate(args.checkpoint, args.dataset, args.split)
    if args.out is not None:
        report.write(Path(args.out) / "report.json")
    print(json.dumps({"dsc": report.dsc, "iou": report.iou, "hd95": report.hd95, "n": report.n}, sort_keys=True))


def _predict(args: argparse.Namespace) -> None:
    result = predict(args.checkpoint, args.image, args.out, args.mask)
    print(f"Wrote {result.mask_path} and {result.gray_path}")
    if result.metrics is not None:
        print(f"DSC {result.metrics.dsc:.4f}  IoU {result.metrics.iou:.4f}  HD95 {result.metrics.hd95:.3f}")


def _ablate(args: argparse.Namespace) -> None:
    _print_table(run_ablation(_train_config(args, args.dataset, Path(args.out))))


def _cross_domain(args: argparse.Namespace) -> None:
    if len(args.dataset) != 2:
        msg = f"--dataset must be given exactly twice (domain A, then domain B), got {len(args.dataset)}"
        raise UsageError(msg)
    out = Path(args.out)
    cfg_a = _train_config(args, args.dataset[0], out / "A")
    cfg_b = _train_config(args, args.dataset[1], out / "B")
    table = run_cross_domain(cfg_a, cfg_b, output_dir=out)
    _print_table(table)


def _tok_ablate(args: argparse.Namespace) -> None:
    if args.tokenizer_weights is None:
        msg = "--tokenizer-weights is required: the comparison trains against the conv-VAE tokenizer"
        raise UsageError(msg)
    _print_table(run_tokenizer_ablation(_train_config(args, args.dataset, Path(args.out))))


def _inspect_archive(args: argparse.Namespace) -> None:
    print(json.dumps(read_archive_header(args.archive).to_dict(), sort_keys=True, indent=2))


_COMMANDS = {
    "gen-data": _gen_data,
    "train-tokenizer": _train_tokenizer,
    "train": _train,
    "eval": _eval,
    "predict": _predict,
    "ablate": _ablate,
    "cross-domain": _cross_domain,
    "tok-ablate": _tok_ablate,
    "inspect-archive": _inspect_archive,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run one command and return its exit code.

    Returns:
        0 on success, 1 on usage, validation, contract and I/O errors, 2 on any other failure.
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not logging.getLogger().handlers:
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
        )
    try:
        _COMMANDS[args.command](args)
    except (ValueError, ContractError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("gms %s failed", args.command)
        return 2
    return 0


def main() -> None:
    """Console-script entry point."""
    sys.exit(dispatch())
