"""
Frequency-domain helpers: amplitude spectra, main-period selection and the
padding/reshaping that lays a series out on a period grid.

A series of length ``l`` has real-FFT bins ``0..l//2``. Bin ``f`` completes
``f`` cycles over the series, so its period is ``ceil(l / f)`` timesteps.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError

log = logging.getLogger(__name__)

# amplitudes at or below this fraction of the spectrum's peak count as zero
_ZERO_RELATIVE = 1e-9


class DegenerateSpectrumWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AmplitudeSpectrum:
    amp: np.ndarray
    series_length: int

    def __post_init__(self):
        if self.amp.shape != (self.series_length // 2 + 1,):
            raise ShapeError(
                f"spectrum of a length-{self.series_length} series needs "
                f"{self.series_length // 2 + 1} bins, got {self.amp.shape}"
            )


@dataclass(frozen=True)
class PeriodEntry:
    frequency: int
    period: int
    amplitude: float


@dataclass(frozen=True)
class PeriodSet:
    entries: tuple[PeriodEntry, ...]
    source_length: int
    fallback: bool = False  # True when zero-amplitude bins had to fill the set

    @property
    def k(self) -> int:
        return len(self.entries)

    @property
    def frequencies(self) -> list[int]:
        return [e.frequency for e in self.entries]

    @property
    def periods(self) -> list[int]:
        return [e.period for e in self.entries]

    @classmethod
    def from_frequencies(cls, frequencies, source_length: int, amplitudes=None) -> "PeriodSet":
        amplitudes = amplitudes if amplitudes is not None else [0.0] * len(frequencies)
        entries = tuple(
            PeriodEntry(int(f), period_for(source_length, int(f)), float(a))
            for f, a in zip(frequencies, amplitudes)
        )
        return cls(entries, source_length)

    def to_dict(self) -> dict:
        return {
            "source_length": self.source_length,
            "fallback": self.fallback,
            "entries": [
                {"frequency": e.frequency, "period": e.period, "amplitude": e.amplitude}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodSet":
        entries = tuple(
            PeriodEntry(int(e["frequency"]), int(e["period"]), float(e["amplitude"]))
            for e in d["entries"]
        )
        return cls(entries, int(d["source_length"]), bool(d.get("fallback", False)))


def period_for(length: int, frequency: int) -> int:
    return -(-length // frequency)


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise DataError("series contains NaN or infinite values")


def _mean_abs_rfft(x: np.ndarray) -> np.ndarray:
    """|rFFT| along the last axis, averaged over the variable axis (-2)."""
    return np.abs(np.fft.rfft(x, axis=-1)).mean(axis=-2)


def compute_amplitude_spectrum(X) -> AmplitudeSpectrum:
    """Amplitude per frequency bin for one sample ``X`` of shape ``(d, l)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected a (variables, length) array, got shape {X.shape}")
    d, length = X.shape
    if d < 1 or length < 4:
        raise ShapeError(f"need at least one variable and length >= 4, got {X.shape}")
    _check_finite(X)
    return AmplitudeSpectrum(_mean_abs_rfft(X), length)


def dataset_spectrum(values) -> AmplitudeSpectrum:
    """Unweighted mean of the per-sample spectra of ``values`` (m, d, l)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[0] < 1:
        raise ShapeError(f"expected a (samples, variables, length) array, got {values.shape}")
    if values.shape[2] < 4:
        raise ShapeError(f"series length must be >= 4, got {values.shape[2]}")
    _check_finite(values)
    return AmplitudeSpectrum(_mean_abs_rfft(values).mean(axis=0), values.shape[2])


def identify_main_periods(spectrum: AmplitudeSpectrum, k: int) -> PeriodSet:
    """Pick the ``k`` strongest non-DC bins.

    Ties go to the lower frequency. If fewer than ``k`` bins carry energy the
    set is completed with the lowest unused frequencies and a
    :class:`DegenerateSpectrumWarning` is issued.
    """
    length = spectrum.series_length
    top = length // 2
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > top:
        raise ConfigError(f"k={k} exceeds the {top} usable frequencies of a length-{length} series")

    amp = spectrum.amp
    candidates = amp[1:top + 1]
    threshold = _ZERO_RELATIVE * float(amp.max()) if amp.size else 0.0
    order = np.argsort(-candidates, kind="stable") + 1
    chosen = [int(f) for f in order[:k] if amp[f] > threshold]

    fallback = len(chosen) < k
    if fallback:
        unused = (f for f in range(1, top + 1) if f not in chosen)
        while len(chosen) < k:
            chosen.append(next(unused))
        msg = f"spectrum has fewer than {k} non-zero bins; padded with lowest frequencies {chosen}"
        log.warning(msg)
        warnings.warn(msg, DegenerateSpectrumWarning, stacklevel=2)

    entries = tuple(PeriodEntry(f, period_for(length, f), float(amp[f])) for f in chosen)
    return PeriodSet(entries, length, fallback)


def pad_and_reshape(X, frequency: int, period: int) -> np.ndarray:
    """Lay ``X`` (d, l) out as (d, period, frequency); column j is segment j."""
    X = np.asarray(X)
    d, length = X.shape
    total = period * frequency
    if total < length:
        raise AssertionError(f"period grid {period}x{frequency} cannot hold {length} steps")
    padded = np.zeros((d, total), dtype=X.dtype)
    padded[:, :length] = X
    return padded.reshape(d, frequency, period).transpose(0, 2, 1)


def unreshape(Xr) -> np.ndarray:
    """Inverse of :func:`pad_and_reshape`; returns the padded (d, period*frequency) series."""
    Xr = np.asarray(Xr)
    d, period, frequency = Xr.shape
    return Xr.transpose(0, 2, 1).reshape(d, period * frequency)


def query_batch_amplitudes(batch, period_set: PeriodSet) -> np.ndarray:
    """Per-sample amplitude at each selected frequency, shape (B, k)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise ShapeError(f"expected a (batch, variables, length) array, got {batch.shape}")
    if batch.shape[2] != period_set.source_length:
        raise ShapeError(
            f"batch length {batch.shape[2]} does not match the period set's "
            f"source length {period_set.source_length}"
        )
    _check_finite(batch)
    spectra = _mean_abs_rfft(batch)
    return spectra[:, period_set.frequencies]


def main_periods_of(values, k: int) -> PeriodSet:
    return identify_main_periods(dataset_spectrum(values), k)


def whole_series_period_set(length: int) -> PeriodSet:
    """One scale covering the entire series (frequency 1, period l)."""
    return PeriodSet((PeriodEntry(1, length, 0.0),), length)


__all__ = [
    "AmplitudeSpectrum",
    "DegenerateSpectrumWarning",
    "PeriodEntry",
    "PeriodSet",
    "compute_amplitude_spectrum",
    "dataset_spectrum",
    "identify_main_periods",
    "main_periods_of",
    "pad_and_reshape",
    "period_for",
    "query_batch_amplitudes",
    "unreshape",
    "whole_series_period_set",
]
