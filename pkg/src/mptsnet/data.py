"""
Datasets: UEA ``.ts`` parsing and rendering, z-score normalisation,
batching, and synthetic planted-period generation.

Only equal-length series without missing values are supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError

STD_FLOOR = 1e-8

_BOOL_DIRECTIVES = {"timestamps", "missing", "univariate", "equallength"}
_INT_DIRECTIVES = {"dimensions", "serieslength"}


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray  # (m, d, l)
    labels: np.ndarray  # (m,) int, empty when the file carries no class labels
    label_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if values.ndim != 3:
            raise DataError(f"values must be (samples, variables, length), got shape {values.shape}")
        if labels.size and labels.shape[0] != values.shape[0]:
            raise DataError(f"{values.shape[0]} series but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.label_names)):
            raise DataError(f"labels must index into {len(self.label_names)} class names")
        values.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def num_samples(self) -> int:
        return self.values.shape[0]

    @property
    def num_variables(self) -> int:
        return self.values.shape[1]

    @property
    def series_length(self) -> int:
        return self.values.shape[2]

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    @property
    def has_labels(self) -> bool:
        return self.labels.size > 0

    def require_labels(self) -> None:
        if not self.has_labels:
            raise DataError("dataset has no class labels; classification needs @classLabel true")

    def with_values(self, values) -> "Dataset":
        return Dataset(values, self.labels, self.label_names, dict(self.meta))

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        labels = self.labels[indices] if self.labels.size else self.labels
        return Dataset(self.values[indices], labels, self.label_names, dict(self.meta))


# ------------------------------------------------------------------------ parsing


def _parse_bool(value: str, lineno: int, name: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "false"):
        return v == "true"
    raise FormatError(f"line {lineno}: @{name} expects true/false, got {value!r}")


def parse_ts(text: str) -> Dataset:
    """Parse the contents of a UEA/sktime ``.ts`` file."""
    meta: dict = {}
    class_names: list[str] | None = None
    has_labels = False
    records: list[tuple[int, str]] = []
    in_data = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if in_data:
            records.append((lineno, line))
            continue
        if not line.startswith("@"):
            raise FormatError(f"line {lineno}: expected a @directive before @data, got {line[:40]!r}")
        parts = line[1:].split(None, 1)
        name = parts[0].lower()
        arg = parts[1].strip() if len(parts) > 1 else ""
        if name == "data":
            in_data = True
        elif name == "classlabel":
            tokens = arg.split()
            if not tokens:
                raise FormatError(f"line {lineno}: @classLabel needs true/false")
            has_labels = _parse_bool(tokens[0], lineno, "classLabel")
            if has_labels:
                class_names = tokens[1:]
                if not class_names:
                    raise FormatError(f"line {lineno}: @classLabel true lists no classes")
                if len(set(class_names)) != len(class_names):
                    raise FormatError(f"line {lineno}: duplicate class names in @classLabel")
        elif name in _BOOL_DIRECTIVES:
            meta[name] = _parse_bool(arg, lineno, parts[0])
        elif name in _INT_DIRECTIVES:
            try:
                meta[name] = int(arg)
            except ValueError:
                raise FormatError(f"line {lineno}: @{parts[0]} expects an integer, got {arg!r}") from None
        elif name == "problemname":
            meta["problemname"] = arg
        elif name == "targetlabel" and arg.lower().startswith("true"):
            raise FormatError(f"line {lineno}: regression datasets (@targetLabel true) are not supported")
        else:
            meta[name] = arg

    if not in_data:
        raise FormatError("missing @data section")
    if meta.get("timestamps"):
        raise FormatError("time-stamped series (@timeStamps true) are not supported")
    if meta.get("equallength") is False:
        raise FormatError("unequal-length datasets are not supported; the model needs a fixed series length")

    label_index = {name: i for i, name in enumerate(class_names or [])}
    expected_dims = meta.get("dimensions")
    if expected_dims is None and meta.get("univariate") is True:
        expected_dims = 1
    expected_len = meta.get("serieslength")

    rows: list[np.ndarray] = []
    labels: list[int] = []
    for lineno, line in records:
        fields = line.split(":")
        if has_labels:
            if len(fields) < 2 or (expected_dims is not None and len(fields) == expected_dims):
                raise FormatError(f"line {lineno}: record has no class label")
            label = fields[-1].strip()
            fields = fields[:-1]
            if label not in label_index:
                raise DataError(f"line {lineno}: unknown class label {label!r}")
            labels.append(label_index[label])
        if expected_dims is not None and len(fields) != expected_dims:
            raise FormatError(f"line {lineno}: expected {expected_dims} dimensions, found {len(fields)}")
        dims = []
        for field_text in fields:
            tokens = [t.strip() for t in field_text.split(",")]
            if "?" in tokens:
                raise DataError(f"line {lineno}: missing values ('?') are not supported")
            try:
                dims.append([float(t) for t in tokens])
            except ValueError:
                bad = next(t for t in tokens if not _is_float(t))
                raise DataError(f"line {lineno}: non-numeric value {bad!r}") from None
        lengths = {len(d) for d in dims}
        if len(lengths) != 1:
            raise FormatError(f"line {lineno}: dimensions have different lengths {sorted(lengths)}")
        length = lengths.pop()
        if expected_len is not None and length != expected_len:
            raise FormatError(f"line {lineno}: expected series length {expected_len}, found {length}")
        if rows and (len(dims), length) != rows[0].shape:
            raise FormatError(
                f"line {lineno}: record shape {(len(dims), length)} differs from first record {rows[0].shape}"
            )
        row = np.array(dims)
        if not np.all(np.isfinite(row)):
            raise DataError(f"line {lineno}: non-finite value")
        rows.append(row)

    if not rows:
        raise FormatError("no records after @data")
    values = np.stack(rows)
    meta["classlabel"] = has_labels
    return Dataset(values, np.array(labels, dtype=np.int64), tuple(class_names or ()), meta)


def _is_float(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_ts(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    try:
        return parse_ts(text)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def render_ts(ds: Dataset, problem_name: str | None = None) -> str:
    """Serialise ``ds`` in ``.ts`` format; values written with 6 significant digits."""
    name = problem_name or ds.meta.get("problemname") or "Dataset"
    lines = [
        f"@problemName {name}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if ds.num_variables == 1 else 'false'}",
        f"@dimensions {ds.num_variables}",
        "@equalLength true",
        f"@seriesLength {ds.series_length}",
    ]
    if ds.has_labels:
        lines.append("@classLabel true " + " ".join(ds.label_names))
    else:
        lines.append("@classLabel false")
    lines.append("@data")
    for i in range(ds.num_samples):
        fields = [",".join(f"{v:.6g}" for v in dim) for dim in ds.values[i]]
        if ds.has_labels:
            fields.append(ds.label_names[ds.labels[i]])
        lines.append(":".join(fields))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ normalisation


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray  # (d,)
    std: np.ndarray  # (d,), clamped to >= STD_FLOOR

    @classmethod
    def fit(cls, ds: Dataset) -> "NormalizationStats":
        mean = ds.values.mean(axis=(0, 2))
        std = np.maximum(ds.values.std(axis=(0, 2)), STD_FLOOR)
        return cls(mean, std)

    def apply(self, ds: Dataset) -> Dataset:
        if ds.num_variables != self.mean.shape[0]:
            raise DataError(f"stats cover {self.mean.shape[0]} variables, dataset has {ds.num_variables}")
        return ds.with_values((ds.values - self.mean[:, None]) / self.std[:, None])

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def normalize(train: Dataset, *others: Dataset) -> tuple[list[Dataset], NormalizationStats]:
    """Z-score every variable with statistics from ``train`` only."""
    stats = NormalizationStats.fit(train)
    return [stats.apply(ds) for ds in (train, *others)], stats


# ---------------------------------------------------------------------- batching


def batches(ds: Dataset, batch_size: int, seed: int = 0, shuffle: bool = True) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(ds.num_samples) if shuffle else np.arange(ds.num_samples)
    for start in range(0, ds.num_samples, batch_size):
        idx = order[start:start + batch_size]
        yield ds.values[idx], (ds.labels[idx] if ds.labels.size else ds.labels)


# ---------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthSpec:
    classes: Sequence[Sequence[float]]  # periods (in timesteps) planted in each class
    num_variables: int = 3
    series_length: int = 96
    m_per_class: int = 20
    noise_std: float = 0.1
    seed: int = 0


def synth_planted_periods(spec: SynthSpec) -> Dataset:
    """Sum of unit sinusoids at each class's periods, random phases, plus Gaussian noise.

    Samples are emitted class by class, so labels are balanced and sorted.
    """
    if not spec.classes:
        raise ConfigError("at least one class is required")
    if spec.series_length < 4 or spec.num_variables < 1 or spec.m_per_class < 1:
        raise ConfigError("series_length >= 4, num_variables >= 1 and m_per_class >= 1 are required")
    if spec.noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    for periods in spec.classes:
        if not periods:
            raise ConfigError("every class needs at least one period")
        for p in periods:
            if not 2 <= p <= spec.series_length / 2:
                raise ConfigError(f"period {p} must lie in [2, l/2] = [2, {spec.series_length / 2}]")

    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.series_length)
    values, labels = [], []
    for c, periods in enumerate(spec.classes):
        for _ in range(spec.m_per_class):
            x = np.zeros((spec.num_variables, spec.series_length))
            for p in periods:
                phase = rng.uniform(0, 2 * math.pi, size=(spec.num_variables, 1))
                x += np.sin(2 * math.pi * t / p + phase)
            x += spec.noise_std * rng.standard_normal(x.shape)
            values.append(x)
            labels.append(c)
    names = tuple(f"p{'_'.join(f'{p:g}' for p in periods)}" for periods in spec.classes)
    meta = {"problemname": "PlantedPeriods", "classlabel": True}
    return Dataset(np.stack(values), np.array(labels), names, meta)


def synth_split(spec: SynthSpec, test_per_class: int | None = None) -> tuple[Dataset, Dataset]:
    """Independent train and test draws; the test split uses its own stream so seeds never collide."""
    test_per_class = spec.m_per_class if test_per_class is None else test_per_class
    train = synth_planted_periods(replace(spec, seed=2 * spec.seed))
    test = synth_planted_periods(replace(spec, seed=2 * spec.seed + 1, m_per_class=test_per_class))
    return train, test


def parse_period_classes(text: str) -> list[list[float]]:
    """``"8;12"`` -> [[8], [12]]; ``"8,20;12"`` -> [[8, 20], [12]]."""
    try:
        classes = [[float(p) for p in group.split(",") if p.strip()] for group in text.split(";")]
    except ValueError:
        raise ConfigError(f"cannot parse class periods {text!r}; expected e.g. '8;12' or '8,20;12'") from None
    if not classes or any(not c for c in classes):
        raise ConfigError(f"cannot parse class periods {text!r}")
    return classes
