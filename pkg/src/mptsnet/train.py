"""Adam optimisation loop, evaluation metrics, and the train/evaluate entry points."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from . import numerics as nx
from . import spectral
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Dataset, NormalizationStats, batches, normalize
from .errors import CheckpointError, ConfigError, TrainingError
from .numerics import Tensor

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, in place. Parameters without a gradient are skipped."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}; aborting")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise TrainingError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values() if g is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            if g is not None:
                g *= scale
    return total


# ------------------------------------------------------------------------ metrics


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    per_class_accuracy: list[float]
    confusion: np.ndarray  # rows: true class, columns: predicted

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "loss": self.loss,
            "per_class_accuracy": [None if math.isnan(a) else a for a in self.per_class_accuracy],
            "confusion": self.confusion.tolist(),
        }


def classification_metrics(y_true, y_pred, num_classes: int) -> tuple[float, list[float], np.ndarray]:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
    accuracy = float(np.mean(y_true == y_pred)) if y_true.size else float("nan")
    return accuracy, [float(a) for a in per_class], confusion


def predict_logits(params, config: M.ModelConfig, period_set, values, batch_size: int = 64) -> np.ndarray:
    out = []
    with nx.no_grad():
        for start in range(0, values.shape[0], batch_size):
            out.append(M.forward(values[start:start + batch_size], period_set, params, config).data)
    return np.concatenate(out, axis=0)


def evaluate_model(params, config: M.ModelConfig, period_set, ds: Dataset, batch_size: int = 64) -> EvalResult:
    """Metrics on an already-normalised dataset."""
    ds.require_labels()
    _check_dims(config, ds)
    logits = predict_logits(params, config, period_set, ds.values, batch_size)
    with nx.no_grad():
        loss = nx.cross_entropy_with_logits(nx.Tensor(logits, dtype=logits.dtype), ds.labels).item()
    acc, per_class, confusion = classification_metrics(ds.labels, logits.argmax(axis=1), config.num_classes)
    return EvalResult(acc, loss, per_class, confusion)


def evaluate(checkpoint, ds: Dataset, batch_size: int = 64) -> EvalResult:
    """Metrics for a checkpoint (object or path) on a raw, un-normalised dataset."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    _check_dims(ckpt.config, ds)
    if ckpt.normalization is not None:
        ds = ckpt.normalization.apply(ds)
    return evaluate_model(ckpt.params, ckpt.config, ckpt.period_set, ds, batch_size)


def _check_dims(config: M.ModelConfig, ds: Dataset) -> None:
    got = (ds.num_variables, ds.series_length)
    want = (config.num_variables, config.series_length)
    if got != want:
        raise ConfigError(f"dataset has (variables, length) {got}, model expects {want}")
    if ds.has_labels and ds.num_classes != config.num_classes:
        raise ConfigError(f"dataset has {ds.num_classes} classes, model expects {config.num_classes}")


# ----------------------------------------------------------------------- training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    eval_loss: float
    eval_accuracy: float
    wall_time: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    best_epoch: int
    best_eval_accuracy: float
    best_checkpoint: str | None
    period_set: dict
    config: dict

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class TrainResult:
    report: TrainReport
    final: Checkpoint  # parameters after the last epoch
    best: Checkpoint  # parameters with the best eval accuracy


@dataclass
class TrainOptions:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def build_config(train_ds: Dataset, **overrides) -> M.ModelConfig:
    return M.ModelConfig(
        num_variables=train_ds.num_variables,
        series_length=train_ds.series_length,
        num_classes=train_ds.num_classes,
        **overrides,
    )


def _snapshot(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {n: Tensor(t.data.copy(), requires_grad=True, dtype=t.dtype, name=n) for n, t in params.items()}


def train(
    train_ds: Dataset,
    eval_ds: Dataset,
    config: M.ModelConfig | None = None,
    options: TrainOptions | None = None,
    out_dir=None,
    **model_overrides,
) -> TrainResult:
    """Fit a model on ``train_ds`` (raw values) and track accuracy on ``eval_ds``.

    Normalisation statistics and main periods come from the training split
    only. Epoch 0 of the report is the evaluation of the freshly initialised
    model. When ``out_dir`` is given the best checkpoint is written to
    ``out_dir/checkpoint.bin`` as it improves and the report to
    ``out_dir/report.json`` at the end.
    """
    options = options or TrainOptions()
    train_ds.require_labels()
    eval_ds.require_labels()
    config = config or build_config(train_ds, **model_overrides)
    _check_dims(config, train_ds)
    _check_dims(config, eval_ds)
    if eval_ds.label_names != train_ds.label_names:
        raise ConfigError("train and eval splits declare different class lists")

    (train_n, eval_n), stats = normalize(train_ds, eval_ds)
    if config.variant == "no_mp":
        period_set = spectral.whole_series_period_set(config.series_length)
    else:
        period_set = spectral.main_periods_of(train_n.values, config.k)
    log.info("main periods: %s", [(e.frequency, e.period) for e in period_set.entries])

    params = M.init_params(config, np.random.default_rng([options.seed, 0]))
    opt = AdamState(lr=options.lr)
    ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / "checkpoint.bin"

    history: list[EpochRecord] = []
    best_key = None
    best_epoch = 0
    best_params = _snapshot(params)
    started = time.perf_counter()

    def record(epoch: int, train_loss: float | None) -> None:
        nonlocal best_key, best_epoch, best_params
        tr = evaluate_model(params, config, period_set, train_n)
        ev = evaluate_model(params, config, period_set, eval_n)
        history.append(
            EpochRecord(
                epoch,
                tr.loss if train_loss is None else train_loss,
                tr.accuracy,
                ev.loss,
                ev.accuracy,
                time.perf_counter() - started,
            )
        )
        key = (ev.accuracy, -ev.loss)
        if best_key is None or key > best_key:
            best_key, best_epoch = key, epoch
            best_params = _snapshot(params)
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, Checkpoint(config, period_set, best_params, stats))
        log.info(
            "epoch %d loss %.4f train_acc %.3f eval_acc %.3f", epoch, history[-1].train_loss, tr.accuracy, ev.accuracy
        )

    try:
        record(0, None)
        for epoch in range(1, options.epochs + 1):
            total, seen = 0.0, 0
            for xb, yb in batches(train_n, options.batch_size, seed=options.seed * 100_003 + epoch):
                logits = M.forward(xb, period_set, params, config)
                loss = nx.cross_entropy_with_logits(logits, yb)
                for p in params.values():
                    p.zero_grad()
                nx.backward(loss)
                if not np.isfinite(loss.item()):
                    raise TrainingError(f"loss became non-finite at epoch {epoch}")
                grads = {n: p.grad for n, p in params.items()}
                clip_grad_norm(grads, options.clip_norm)
                adam_step(params, grads, opt)
                total += loss.item() * len(yb)
                seen += len(yb)
            record(epoch, total / seen)
    except CheckpointError:
        log.error("checkpoint write failed; partial report follows")
        _write_report(out_dir, history, best_epoch, best_key, ckpt_path, period_set, config)
        raise

    report = _write_report(out_dir, history, best_epoch, best_key, ckpt_path, period_set, config)
    return TrainResult(
        report,
        Checkpoint(config, period_set, params, stats),
        Checkpoint(config, period_set, best_params, stats),
    )


def _write_report(out_dir, history, best_epoch, best_key, ckpt_path, period_set, config) -> TrainReport:
    report = TrainReport(
        epochs=history,
        best_epoch=best_epoch,
        best_eval_accuracy=best_key[0] if best_key else float("nan"),
        best_checkpoint=str(ckpt_path) if ckpt_path is not None and ckpt_path.exists() else None,
        period_set=period_set.to_dict(),
        config=config.to_dict(),
    )
    if out_dir is not None:
        (Path(out_dir) / "report.json").write_text(report.to_json())
    return report
