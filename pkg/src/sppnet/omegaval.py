"""Frequency-domain output validation.

Buffers the recent history of predicted vs. training values in a
growable delay line, compares the two sequences through a
Gaussian-windowed Fourier transform, condenses the spectral difference
into a (max, min) deviation pair, and gates stage-2 training on an
axis-aligned acceptance region calibrated from warm-up statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MIN_WINDOW = 4
TRACE_HEADER = "epoch,tau,delta_tau,sigma,M,m,accepted"


class ValidationError(ValueError):
    """Invalid window parameters, segment lengths, or calibration state."""


class NotReady(Exception):
    """Delay line does not yet hold a full window of samples."""


@dataclass(frozen=True)
class ValidationStats:
    """Spectral deviation pair; max >= min >= 0 by construction."""

    max_deviation: float
    min_deviation: float


@dataclass(frozen=True)
class AcceptanceRegion:
    """Origin-anchored rectangle in the (max, min) deviation plane."""

    theta_max: float
    theta_min: float

    def __post_init__(self) -> None:
        if not (self.theta_max >= self.theta_min >= 0.0):
            raise ValidationError(
                f"need theta_max >= theta_min >= 0, got ({self.theta_max}, {self.theta_min})"
            )

    def contains(self, stats: ValidationStats) -> bool:
        return stats.max_deviation <= self.theta_max and stats.min_deviation <= self.theta_min


def gaussian_window(n: int, sigma: float) -> np.ndarray:
    """Symmetric Gaussian taper, peak 1 at the centre; sigma is the width
    as a fraction of the half-window."""
    if n < MIN_WINDOW:
        raise ValidationError(f"window length must be >= {MIN_WINDOW}, got {n}")
    if not 0.0 < sigma <= 1.0:
        raise ValidationError(f"sigma must be in (0, 1], got {sigma}")
    half = (n - 1) / 2.0
    idx = np.arange(n, dtype=float)
    z = (idx - half) / (sigma * half)
    return np.exp(-0.5 * z * z)


def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * math.pi * np.outer(k, k) / n)


def windowed_fft(segment: np.ndarray, sigma: float) -> np.ndarray:
    """DFT of the Gaussian-windowed segment. Power-of-two lengths go through
    the FFT; other lengths use the direct transform."""
    segment = np.asarray(segment, dtype=float)
    n = segment.size
    w = gaussian_window(n, sigma)
    tapered = w * segment
    if n & (n - 1) == 0:
        return np.fft.fft(tapered)
    return _dft_matrix(n) @ tapered.astype(complex)


def compute_deviation(
    predicted: np.ndarray, training: np.ndarray, sigma: float
) -> ValidationStats:
    """Max/min over frequency bins of |F[training] - F[predicted]|, both
    transforms taken on the identical Gaussian window."""
    predicted = np.asarray(predicted, dtype=float)
    training = np.asarray(training, dtype=float)
    if predicted.shape != training.shape:
        raise ValidationError(
            f"segment length mismatch: {predicted.shape} vs {training.shape}"
        )
    diff = np.abs(windowed_fft(training, sigma) - windowed_fft(predicted, sigma))
    return ValidationStats(float(diff.max()), float(diff.min()))


def validate(stats: ValidationStats, region: AcceptanceRegion | None) -> bool:
    if region is None:
        raise ValidationError("acceptance region is not calibrated")
    return region.contains(stats)


def calibrate_region(history, percentile: float) -> AcceptanceRegion:
    """Thresholds at the given quantile of the observed deviation pairs."""
    stats = list(history)
    if not stats:
        raise ValidationError("cannot calibrate from an empty history")
    if not 0.0 < percentile <= 1.0:
        raise ValidationError(f"percentile must be in (0, 1], got {percentile}")
    maxima = np.array([s.max_deviation for s in stats])
    minima = np.array([s.min_deviation for s in stats])
    return AcceptanceRegion(
        float(np.quantile(maxima, percentile)), float(np.quantile(minima, percentile))
    )


class DelayLine:
    """Growable ring buffer of (predicted, training) value pairs.

    Growing preserves every buffered sample; shrinking below the current
    fill level is refused so that unconsumed samples are never dropped.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValidationError(f"capacity must be >= 1, got {capacity}")
        self._buf = np.zeros((capacity, 2), dtype=float)
        self._start = 0
        self._count = 0

    @property
    def capacity(self) -> int:
        return self._buf.shape[0]

    def __len__(self) -> int:
        return self._count

    def append(self, predicted: float, training: float) -> None:
        cap = self.capacity
        idx = (self._start + self._count) % cap
        self._buf[idx, 0] = predicted
        self._buf[idx, 1] = training
        if self._count == cap:
            self._start = (self._start + 1) % cap  # overwrite the oldest
        else:
            self._count += 1

    def _ordered(self) -> np.ndarray:
        idx = (self._start + np.arange(self._count)) % self.capacity
        return self._buf[idx]

    def last(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Newest n pairs in arrival order: (predicted, training) arrays."""
        if n < 1:
            raise ValidationError(f"n must be >= 1, got {n}")
        if n > self._count:
            raise NotReady(f"only {self._count} of {n} samples buffered")
        tail = self._ordered()[self._count - n :]
        return tail[:, 0].copy(), tail[:, 1].copy()

    def resize(self, capacity: int) -> None:
        if capacity < self._count:
            raise ValidationError(
                f"resize to {capacity} would drop {self._count - capacity} buffered samples"
            )
        data = self._ordered()
        self._buf = np.zeros((capacity, 2), dtype=float)
        self._buf[: self._count] = data
        self._start = 0


@dataclass
class VerdictRecord:
    """Outcome of validating one sample."""

    tau: int
    accepted: bool
    stats: ValidationStats | None
    sigma: float
    window: int


@dataclass
class OmegaValidator:
    """Stateful gate used by the training loop.

    Warm-up epochs accept every sample while collecting deviation
    statistics; at the end of the warm-up the acceptance region is frozen
    at the configured quantile. After warm-up, samples without a full
    window (or outside the region) are rejected.
    """

    window: int = 32
    warmup_epochs: int = 1
    percentile: float = 0.9
    region: AcceptanceRegion | None = None
    history: list[ValidationStats] = field(default_factory=list)
    trace: list[tuple] = field(default_factory=list)  # epoch,tau,window,sigma,max,min,accepted

    def __post_init__(self) -> None:
        if self.window < MIN_WINDOW:
            raise ValidationError(f"window must be >= {MIN_WINDOW}, got {self.window}")
        self._line = DelayLine(max(self.window, MIN_WINDOW))

    @property
    def delay_line(self) -> DelayLine:
        return self._line

    def observe(
        self, epoch: int, tau: int, predicted: float, training: float, sigma: float
    ) -> VerdictRecord:
        """Buffer one sample and decide whether stage-2 may train on it."""
        if self._line.capacity < self.window:
            self._line.resize(self.window)
        self._line.append(predicted, training)

        stats: ValidationStats | None = None
        if len(self._line) >= self.window:
            pred_seg, train_seg = self._line.last(self.window)
            stats = compute_deviation(pred_seg, train_seg, sigma)
            self.history.append(stats)

        in_warmup = epoch <= self.warmup_epochs
        if in_warmup:
            accepted = True
        elif stats is None or self.region is None:
            accepted = False  # no window yet / never calibrated: conservative reject
        else:
            accepted = validate(stats, self.region)

        self.trace.append(
            (
                epoch,
                tau,
                self.window,
                sigma,
                stats.max_deviation if stats else math.nan,
                stats.min_deviation if stats else math.nan,
                int(accepted),
            )
        )
        return VerdictRecord(tau, accepted, stats, sigma, self.window)

    def end_epoch(self, epoch: int) -> None:
        if epoch == self.warmup_epochs and self.region is None:
            if not self.history:
                raise ValidationError(
                    "warm-up produced no deviation statistics; "
                    "window longer than an epoch?"
                )
            self.region = calibrate_region(self.history, self.percentile)

    def trace_rows(self) -> list[str]:
        rows = [TRACE_HEADER]
        for epoch, tau, window, sigma, mx, mn, acc in self.trace:
            rows.append(
                "%d,%d,%d,%.17g,%.17g,%.17g,%d" % (epoch, tau, window, sigma, mx, mn, acc)
            )
        return rows


def dominant_peak_width_fraction(signal: np.ndarray) -> float:
    """Half-power width of the dominant spectral peak of the full
    Gaussian-windowed signal, as a fraction of the transform length,
    clipped into (0, 1]. Used as the deterministic regression target for
    the window-width parameter."""
    signal = np.asarray(signal, dtype=float)
    n = signal.size
    if n < MIN_WINDOW:
        raise ValidationError(f"signal too short for spectral analysis ({n})")
    power = np.abs(windowed_fft(signal, 1.0)) ** 2
    peak = int(np.argmax(power))
    threshold = power[peak] / 2.0
    width = 1
    step = 1
    while step < n:  # walk outward (wrap-aware) while above half power
        right = power[(peak + step) % n] >= threshold
        left = power[(peak - step) % n] >= threshold
        if not (right or left):
            break
        width += int(right) + int(left)
        step += 1
    return min(1.0, width / n)
