"""
The multiscale periodic classifier.

Data flow for one batch ``x`` of shape (B, d, l)::

    embed            (B, d, l)      -> (B, D, l)
    per PeriodicBlock, per scale (f, p):
      pad + fold      (B, D, l)      -> (B, D, p, f)
      local_extract   (B, D, p, f)   -> (B, D, p, f)   multi-kernel conv per segment
      segment_pool    (B, D, p, f)   -> (B, f, D)      one token per segment
      global_capture  (B, f, D)      -> (B, f, D)      self-attention over segments
      broadcast back  (B, f, D)      -> (B, D, l)
    aggregate scales with softmax(amplitudes), add residual
    classify         (B, D, l)      -> (B, C)

``D`` is ``d_embed``. All functions here operate on batched tensors; the
leading axis is always the sample.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numerics as nx
from . import spectral
from .errors import ConfigError, ShapeError
from .numerics import Tensor
from .spectral import PeriodSet

VARIANTS = ("full", "no_local", "no_global", "no_mp")
DEFAULT_KERNELS = (1, 3, 5, 7, 9, 11)


@dataclass(frozen=True)
class ModelConfig:
    num_variables: int
    series_length: int
    num_classes: int
    k: int = 5
    d_embed: int = 32
    num_blocks: int = 2
    heads: int = 4
    kernel_sizes: tuple[int, ...] = DEFAULT_KERNELS
    variant: str = "full"
    combine: str = "mean"  # how Local Extractor branches merge: "mean" or "concat" (+1x1 projection)

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        variant = self.variant.replace("-", "_")
        object.__setattr__(self, "variant", variant)
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if variant == "no_mp":
            object.__setattr__(self, "k", 1)
        if self.combine not in ("mean", "concat"):
            raise ConfigError(f"combine must be 'mean' or 'concat', got {self.combine!r}")
        for name in ("num_variables", "series_length", "num_classes", "k", "d_embed", "num_blocks", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_embed % self.heads:
            raise ConfigError(f"d_embed={self.d_embed} is not divisible by heads={self.heads}")
        if not self.kernel_sizes or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be positive and odd, got {self.kernel_sizes}")
        if self.variant != "no_mp" and self.k > self.series_length // 2:
            raise ConfigError(f"k={self.k} exceeds {self.series_length // 2} usable frequencies")

    @property
    def head_dim(self) -> int:
        return self.d_embed // self.heads

    @property
    def uses_local(self) -> bool:
        return self.variant != "no_local"

    @property
    def uses_global(self) -> bool:
        return self.variant != "no_global"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "kernel_sizes": tuple(d["kernel_sizes"])})

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


# ------------------------------------------------------------------ parameters


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor, in canonical order."""
    D, d = config.d_embed, config.num_variables
    shapes: dict[str, tuple[int, ...]] = {"embed.weight": (D, d), "embed.bias": (D,)}
    for b in range(config.num_blocks):
        pre = f"blocks.{b}"
        if config.uses_local:
            for ker in config.kernel_sizes:
                shapes[f"{pre}.local.conv{ker}.weight"] = (D, D, ker)
                shapes[f"{pre}.local.conv{ker}.bias"] = (D,)
            if config.combine == "concat":
                shapes[f"{pre}.local.proj.weight"] = (D, D * len(config.kernel_sizes), 1)
                shapes[f"{pre}.local.proj.bias"] = (D,)
        if config.uses_global:
            for name in ("w_q", "w_k", "w_v", "w_o"):
                shapes[f"{pre}.attn.{name}"] = (D, D)
    shapes["head.weight"] = (D, config.num_classes)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.startswith("embed."):
        return shape[1] if len(shape) == 2 else 1
    if len(shape) == 3:
        return shape[1] * shape[2]
    return shape[0]


def init_params(config: ModelConfig, seed: int | np.random.Generator = 0) -> dict[str, Tensor]:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(name, shape))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def check_params(params: dict[str, Tensor], config: ModelConfig) -> None:
    expected = param_shapes(config)
    if list(params) != list(expected):
        missing = set(expected) - set(params)
        extra = set(params) - set(expected)
        raise ConfigError(f"parameter names do not match config (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ConfigError(f"{name}: expected shape {shape}, got {params[name].shape}")


# -------------------------------------------------------------------- building blocks


def embed(x: Tensor, params: dict[str, Tensor], activation: bool = True) -> Tensor:
    """Pointwise linear map over the variable axis (axis 1), then GELU.

    ``x`` is (B, d, *cells); the result is (B, D, *cells).
    """
    w, b = params["embed.weight"], params["embed.bias"]
    if x.ndim < 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"embedding expects (batch, {w.shape[1]}, ...), got {x.shape}")
    batch, cells = x.shape[0], x.shape[2:]
    flat = nx.reshape(x, (batch, x.shape[1], int(np.prod(cells))))
    out = w @ flat + nx.reshape(b, (w.shape[0], 1))
    if activation:
        out = nx.gelu(out)
    return nx.reshape(out, (batch, w.shape[0], *cells))


def fold(x: Tensor, frequency: int, period: int) -> Tensor:
    """(B, D, l) -> (B, D, period, frequency), zero-padded on the right."""
    length = x.shape[2]
    if period * frequency < length:
        raise AssertionError(f"period grid {period}x{frequency} cannot hold {length} steps")
    padded = nx.pad(x, axis=2, after=period * frequency - length)
    grid = nx.reshape(padded, (x.shape[0], x.shape[1], frequency, period))
    return nx.transpose(grid, (0, 1, 3, 2))


def unfold(grid: Tensor, length: int) -> Tensor:
    """Inverse of :func:`fold`: (B, D, p, f) -> (B, D, length)."""
    batch, channels, period, frequency = grid.shape
    flat = nx.reshape(nx.transpose(grid, (0, 1, 3, 2)), (batch, channels, period * frequency))
    return nx.narrow(flat, axis=2, start=0, length=length)


def local_extract(E: Tensor, params: dict[str, Tensor], prefix: str, config: ModelConfig) -> Tensor:
    """Multi-kernel same-padded convolution applied to every segment independently.

    Branch outputs are averaged (or, with ``combine="concat"``, stacked on the
    channel axis and projected back to ``D`` by a 1x1 convolution), then GELU.
    """
    batch, D, period, frequency = E.shape
    segs = nx.reshape(nx.transpose(E, (0, 3, 1, 2)), (batch * frequency, D, period))
    branches = [
        nx.conv1d(segs, params[f"{prefix}.local.conv{ker}.weight"], params[f"{prefix}.local.conv{ker}.bias"])
        for ker in config.kernel_sizes
    ]
    if config.combine == "concat":
        merged = nx.conv1d(
            nx.concat(branches, axis=1), params[f"{prefix}.local.proj.weight"], params[f"{prefix}.local.proj.bias"]
        )
    else:
        merged = branches[0]
        for branch in branches[1:]:
            merged = merged + branch
        if len(branches) > 1:
            merged = merged * (1.0 / len(branches))
    out = nx.gelu(merged)
    return nx.transpose(nx.reshape(out, (batch, frequency, D, period)), (0, 2, 3, 1))


def segment_pool(L: Tensor) -> Tensor:
    """(B, D, p, f) -> (B, f, D): mean over each segment's timesteps."""
    return nx.transpose(nx.mean(L, axis=2), (0, 2, 1))


def global_capture(tokens: Tensor, params: dict[str, Tensor], prefix: str, heads: int) -> tuple[Tensor, Tensor]:
    """Multi-head scaled dot-product self-attention over segment tokens.

    Returns the projected output (B, f, D) and the attention weights (B, h, f, f).
    """
    batch, n, D = tokens.shape
    dk = D // heads

    def split(t):
        return nx.transpose(nx.reshape(t, (batch, n, heads, dk)), (0, 2, 1, 3))

    q = split(tokens @ params[f"{prefix}.attn.w_q"])
    k = split(tokens @ params[f"{prefix}.attn.w_k"])
    v = split(tokens @ params[f"{prefix}.attn.w_v"])
    scores = (q @ nx.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))
    attn = nx.softmax(scores, axis=-1)
    ctx = nx.reshape(nx.transpose(attn @ v, (0, 2, 1, 3)), (batch, n, D))
    return ctx @ params[f"{prefix}.attn.w_o"], attn


def scale_broadcast_back(G: Tensor, period: int, length: int) -> Tensor:
    """(B, f, D) -> (B, D, length): each segment's vector held over its timesteps."""
    batch, frequency, D = G.shape
    if period * frequency < length:
        raise AssertionError(f"period grid {period}x{frequency} cannot hold {length} steps")
    cols = nx.reshape(nx.transpose(G, (0, 2, 1)), (batch, D, frequency, 1))
    tiled = nx.expand(cols, (batch, D, frequency, period))
    return nx.narrow(nx.reshape(tiled, (batch, D, frequency * period)), axis=2, start=0, length=length)


def aggregation_weights(amps) -> np.ndarray:
    """Softmax over the k queried amplitudes of each sample, shape (B, k)."""
    amps = np.asarray(amps, dtype=np.float64)
    z = np.exp(amps - amps.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def aggregate(scale_outputs: list[Tensor], amps) -> tuple[Tensor, np.ndarray]:
    """Amplitude-weighted sum of per-scale outputs; returns (Z, alpha)."""
    alpha = aggregation_weights(amps)
    if alpha.shape[-1] != len(scale_outputs):
        raise ShapeError(f"{len(scale_outputs)} scale outputs but {alpha.shape[-1]} amplitudes")
    dtype = scale_outputs[0].dtype
    total = None
    for i, out in enumerate(scale_outputs):
        w = Tensor(alpha[:, i].reshape(-1, 1, 1), dtype=dtype)
        term = out * w
        total = term if total is None else total + term
    return total, alpha


# -------------------------------------------------------------- interpretability


@dataclass
class ScaleAttention:
    frequency: int
    period: int
    alpha: float
    attention: np.ndarray  # (f, f), averaged over heads


@dataclass
class AttentionRecord:
    scales: list[ScaleAttention]
    composite: np.ndarray  # (l,)

    def to_dict(self) -> dict:
        return {
            "scales": [
                {
                    "frequency": s.frequency,
                    "period": s.period,
                    "alpha": float(s.alpha),
                    "attention": s.attention.tolist(),
                }
                for s in self.scales
            ],
            "composite": self.composite.tolist(),
        }


def composite_map(scales: list[ScaleAttention], length: int) -> np.ndarray:
    """Amplitude-weighted sum over scales of the attention each timestep's segment receives."""
    out = np.zeros(length)
    for s in scales:
        received = s.attention.mean(axis=0)
        out += s.alpha * np.repeat(received, s.period)[:length]
    return out


# ---------------------------------------------------------------------- network


@dataclass
class BlockTrace:
    alpha: np.ndarray  # (B, k)
    attention: list[np.ndarray | None] = field(default_factory=list)  # per scale, (B, h, f, f)


def effective_period_set(period_set: PeriodSet, config: ModelConfig) -> PeriodSet:
    if config.variant == "no_mp":
        return spectral.whole_series_period_set(config.series_length)
    return period_set


def periodic_block(
    x: Tensor,
    period_set: PeriodSet,
    amps,
    params: dict[str, Tensor],
    prefix: str,
    config: ModelConfig,
) -> tuple[Tensor, BlockTrace]:
    """One residual block over all scales of ``period_set``; ``x`` is (B, D, l)."""
    length = x.shape[2]
    outputs = []
    trace_attn = []
    for entry in period_set.entries:
        grid = fold(x, entry.frequency, entry.period)
        if config.uses_local:
            grid = local_extract(grid, params, prefix, config)
        if config.uses_global:
            G, attn = global_capture(segment_pool(grid), params, prefix, config.heads)
            outputs.append(scale_broadcast_back(G, entry.period, length))
            trace_attn.append(attn.data)
        else:
            outputs.append(unfold(grid, length))
            trace_attn.append(None)
    Z, alpha = aggregate(outputs, amps)
    return x + Z, BlockTrace(alpha, trace_attn)


def classify(Z: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Global average over time, then the linear head -> logits (B, C)."""
    pooled = nx.mean(Z, axis=2)
    return pooled @ params["head.weight"] + params["head.bias"]


def forward(
    batch,
    period_set: PeriodSet,
    params: dict[str, Tensor],
    config: ModelConfig,
    return_attention: bool = False,
):
    """Logits for ``batch`` (B, d, l); optionally per-sample :class:`AttentionRecord` list."""
    values = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    if values.ndim != 3 or values.shape[1:] != (config.num_variables, config.series_length):
        raise ShapeError(
            f"expected batch of shape (B, {config.num_variables}, {config.series_length}), got {values.shape}"
        )
    ps = effective_period_set(period_set, config)
    if ps.source_length != config.series_length:
        raise ShapeError(f"period set is for length {ps.source_length}, model for {config.series_length}")
    if ps.k != config.k:
        raise ConfigError(f"period set has {ps.k} scales, config expects k={config.k}")
    amps = spectral.query_batch_amplitudes(values, ps)
    x = batch if isinstance(batch, Tensor) else Tensor(values)
    h = embed(x, params)
    trace = None
    for b in range(config.num_blocks):
        h, trace = periodic_block(h, ps, amps, params, f"blocks.{b}", config)
    logits = classify(h, params)
    if not return_attention:
        return logits
    return logits, _records_from_trace(trace, ps, config)


def _records_from_trace(trace: BlockTrace, ps: PeriodSet, config: ModelConfig) -> list[AttentionRecord] | None:
    if not config.uses_global:
        return None
    records = []
    for n in range(trace.alpha.shape[0]):
        scales = [
            ScaleAttention(e.frequency, e.period, float(trace.alpha[n, i]), trace.attention[i][n].mean(axis=0))
            for i, e in enumerate(ps.entries)
        ]
        records.append(AttentionRecord(scales, composite_map(scales, config.series_length)))
    return records


def predict_proba(logits: Tensor) -> np.ndarray:
    with nx.no_grad():
        return nx.softmax(logits, axis=-1).data
