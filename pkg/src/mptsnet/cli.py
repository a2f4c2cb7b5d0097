"""Command-line entry point: ``mptsnet {train,eval,inspect-periods,synth,export-attention}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data, format or
checkpoint error, 3 runtime failure. Errors print a single line to stderr.
``MPTSNET_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data, model, spectral
from . import numerics as nx
from .checkpoint import load_checkpoint
from .errors import CheckpointError, ConfigError, DataError, MPTSNetError, ShapeError, UsageError
from .train import TrainOptions, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("mptsnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mptsnet", description="Multiscale periodic time-series classifier.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write checkpoint.bin + report.json")
    p.add_argument("--train", required=True, type=Path)
    p.add_argument("--test", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--d-embed", type=_positive_int, default=32)
    p.add_argument("--blocks", type=_positive_int, default=2)
    p.add_argument("--heads", type=_positive_int, default=4)
    p.add_argument("--kernel-sizes", type=_int_list, default=(1, 3, 5, 7, 9, 11))
    p.add_argument("--combine", choices=("mean", "concat"), default="mean")
    p.add_argument("--variant", choices=("full", "no-local", "no-global", "no-mp"), default="full")
    p.add_argument("--epochs", type=_nonneg_int, default=100)
    p.add_argument("--lr", type=_positive_float, default=1e-3)
    p.add_argument("--batch-size", type=_positive_int, default=16)
    p.add_argument("--clip", type=_nonneg_float, default=5.0, help="global gradient norm cap (0 disables)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labelled .ts file")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)

    p = sub.add_parser("inspect-periods", help="print the dataset's main periods")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("synth", help="write a planted-period train/test pair")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--periods", required=True, help="classes separated by ';', periods by ',' (e.g. '8;12')")
    p.add_argument("--d", type=_positive_int, default=3)
    p.add_argument("--l", type=_positive_int, default=96)
    p.add_argument("--m-per-class", type=_positive_int, default=20)
    p.add_argument("--test-per-class", type=_positive_int, default=None)
    p.add_argument("--noise", type=_nonneg_float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export-attention", help="dump attention matrices and composite maps")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--samples", type=_int_list, default=(0,))
    p.add_argument("--out", type=Path, default=None, help="output file (stdout when omitted)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


# ----------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    train_ds = data.load_ts(args.train)
    test_ds = data.load_ts(args.test)
    overrides = dict(
        k=args.k,
        d_embed=args.d_embed,
        num_blocks=args.blocks,
        heads=args.heads,
        kernel_sizes=args.kernel_sizes,
        variant=args.variant,
        combine=args.combine,
    )
    options = TrainOptions(
        epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed, clip_norm=args.clip
    )
    result = train(train_ds, test_ds, options=options, out_dir=args.out, **overrides)
    final = result.report.final
    print(
        f"final train_acc={final.train_accuracy:.4f} test_acc={final.eval_accuracy:.4f} "
        f"best_epoch={result.report.best_epoch} best_test_acc={result.report.best_eval_accuracy:.4f}"
    )
    print(f"wrote {args.out / 'checkpoint.bin'} and {args.out / 'report.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    result = evaluate(ckpt, data.load_ts(args.data))
    print(json.dumps(result.to_dict(), indent=2))
    return EXIT_OK


def period_rows(ds: data.Dataset, k: int) -> list[dict]:
    (norm,), _ = data.normalize(ds)
    ps = spectral.main_periods_of(norm.values, k)
    return [{"frequency": e.frequency, "period": e.period, "mean_amplitude": e.amplitude} for e in ps.entries]


def cmd_inspect_periods(args) -> int:
    rows = period_rows(data.load_ts(args.data), args.k)
    if args.format == "json":
        print(json.dumps(rows))
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["frequency", "period", "mean_amplitude"], lineterminator="\n")
        writer.writeheader()
        writer.writerows({**r, "mean_amplitude": repr(r["mean_amplitude"])} for r in rows)
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = data.SynthSpec(
        classes=data.parse_period_classes(args.periods),
        num_variables=args.d,
        series_length=args.l,
        m_per_class=args.m_per_class,
        noise_std=args.noise,
        seed=args.seed,
    )
    train_ds, test_ds = data.synth_split(spec, args.test_per_class)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, ds in (("train", train_ds), ("test", test_ds)):
        path = args.out / f"{name}.ts"
        path.write_text(data.render_ts(ds))
        print(f"wrote {path} ({ds.num_samples} samples)")
    return EXIT_OK


def attention_export(ckpt, ds: data.Dataset, indices) -> list[dict]:
    """Attention records for ``indices`` of the raw dataset ``ds``, as plain dicts."""
    if not ckpt.config.uses_global:
        raise ConfigError(f"variant {ckpt.config.variant} has no attention to export")
    indices = list(indices)
    for i in indices:
        if not 0 <= i < ds.num_samples:
            raise DataError(f"sample index {i} out of range for {ds.num_samples} samples")
    if ckpt.normalization is not None:
        ds = ckpt.normalization.apply(ds)
    with nx.no_grad():
        logits, records = model.forward(ds.values[indices], ckpt.period_set, ckpt.params, ckpt.config, True)
    out = []
    for row, (i, rec) in enumerate(zip(indices, records)):
        entry = {"sample": i, "predicted": int(np.argmax(logits.data[row]))}
        if ds.has_labels:
            entry["label"] = int(ds.labels[i])
        entry.update(rec.to_dict())
        out.append(entry)
    return out


def _attention_csv(samples: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample", "kind", "scale", "row", "col", "value"])
    for s in samples:
        for i, sc in enumerate(s["scales"]):
            writer.writerow([s["sample"], "alpha", i, "", "", repr(sc["alpha"])])
            for r, values in enumerate(sc["attention"]):
                for c, v in enumerate(values):
                    writer.writerow([s["sample"], "attention", i, r, c, repr(v)])
        for t, v in enumerate(s["composite"]):
            writer.writerow([s["sample"], "composite", "", "", t, repr(v)])
    return buf.getvalue()


def cmd_export_attention(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    samples = attention_export(ckpt, data.load_ts(args.data), args.samples)
    text = json.dumps({"samples": samples}) + "\n" if args.format == "json" else _attention_csv(samples)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
        print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect-periods": cmd_inspect_periods,
    "synth": cmd_synth,
    "export-attention": cmd_export_attention,
}


def _thread_limit() -> int | None:
    raw = os.environ.get("MPTSNET_THREADS")
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"MPTSNET_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise UsageError(f"MPTSNET_THREADS must be a positive integer, got {raw!r}")
    return value


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, (DataError, ShapeError, CheckpointError, OSError)):
        return EXIT_DATA
    return EXIT_RUNTIME


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
        )
        with threadpool_limits(limits=_thread_limit()):
            return COMMANDS[args.command](args)
    except (MPTSNetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
