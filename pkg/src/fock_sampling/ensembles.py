"""Canonical and microcanonical estimates of condensate statistics from chain records."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .sampler import SampleSeries

__all__ = [
    "ESTIMATE_COLUMNS",
    "EnergyWindow",
    "EnsembleEstimate",
    "InsufficientSamplesError",
    "auto_window",
    "blocking_error",
    "blocking_levels",
    "canonical_stats",
    "estimate",
    "geweke_z",
    "integrated_autocorr_time",
    "merge_series",
    "microcanonical_filter",
    "microcanonical_stats",
    "modal_energy",
]

ESTIMATE_COLUMNS = ("N", "dim", "g", "T", "ensemble", "mean_n0", "std_n0", "se_mean", "se_std", "n_samples")

MIN_FILTERED = 100


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyWindow:
    center: float
    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")

    def contains(self, energy):
        return np.abs(np.asarray(energy) - self.center) <= self.half_width


@dataclass(frozen=True)
class EnsembleEstimate:
    mean_n0: float
    std_n0: float
    se_mean: float
    se_std: float
    n_samples: float
    ensemble: str = "canonical"
    window: EnergyWindow | None = None

    @property
    def var_n0(self) -> float:
        return self.std_n0**2


def blocking_levels(x, min_blocks: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Number of blocks and naive standard error of the mean at each pairwise blocking level.

    Block size is doubled while at least ``min_blocks`` blocks remain.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise InsufficientSamplesError("blocking needs at least two samples")
    errs, sizes = [], []
    while x.size >= 2 and (not errs or x.size >= min_blocks):
        errs.append(math.sqrt(x.var(ddof=1) / x.size))
        sizes.append(x.size)
        if x.size % 2:
            x = x[:-1]
        x = 0.5 * (x[0::2] + x[1::2])
    return np.asarray(sizes), np.asarray(errs)


def blocking_error(x, min_blocks: int = 32) -> tuple[float, bool]:
    """Standard error of the mean of a correlated series by repeated pairwise blocking.

    The plateau is the first level whose successor does not exceed it by more
    than the statistical uncertainty of the error estimate itself.

    Returns
    -------
    se : float
    converged : bool
        False if no plateau was reached; ``se`` is then the largest level seen.
    """
    sizes, errs = blocking_levels(x, min_blocks)
    for k in range(len(errs) - 1):
        tol = errs[k] / math.sqrt(2.0 * (sizes[k + 1] - 1))
        if errs[k + 1] - errs[k] <= tol:
            return float(max(errs[k], errs[k + 1])), True
    return float(errs.max()), len(errs) == 1


def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time ``1 + 2 sum_t rho(t)`` with Sokal's automatic window."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise InsufficientSamplesError("need at least two samples")
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, n=size)
    acf = np.fft.irfft(f * np.conj(f), n=size)[:n]
    if acf[0] == 0:
        return 1.0
    rho = acf / acf[0]
    taus = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(n) >= c * taus
    m = int(np.argmax(window)) if window.any() else n - 1
    return float(max(taus[m], 1e-12))


def geweke_z(x, first: float = 0.5, last: float = 0.5) -> float:
    """z-score comparing the mean of the leading and trailing fractions of a series."""
    x = np.asarray(x, dtype=float)
    a = x[: int(first * x.size)]
    b = x[x.size - int(last * x.size):]
    se_a, _ = blocking_error(a)
    se_b, _ = blocking_error(b)
    denom = math.hypot(se_a, se_b)
    diff = a.mean() - b.mean()
    if denom == 0:
        return 0.0 if diff == 0 else math.inf
    return float(diff / denom)


def _segment_errors(x, segments, center):
    """Blocking errors of the mean of ``x`` and of ``(x - center)^2`` per segment."""
    se_m, se_v, weights, means, stds = [], [], [], [], []
    for _, sl in segments:
        seg = x[sl]
        if seg.size < 2:
            continue
        se_m.append(blocking_error(seg)[0])
        se_v.append(blocking_error((seg - center) ** 2)[0])
        weights.append(seg.size)
        means.append(seg.mean())
        stds.append(seg.std())
    w = np.asarray(weights, dtype=float)
    w /= w.sum()
    return (
        float(np.sqrt(np.sum((w * np.asarray(se_m)) ** 2))),
        float(np.sqrt(np.sum((w * np.asarray(se_v)) ** 2))),
        np.asarray(means),
        np.asarray(stds),
    )


def _stats(series: SampleSeries, ensemble: str, window: EnergyWindow | None = None) -> EnsembleEstimate:
    x = np.asarray(series.n0, dtype=float)
    if x.size < 2:
        raise InsufficientSamplesError(f"{x.size} samples; need at least two")
    mean = float(x.mean())
    std = float(x.std())
    se_mean, se_var, rep_means, rep_stds = _segment_errors(x, list(series.replica_segments()), mean)
    se_std = se_var / (2.0 * std) if std > 0 else 0.0
    k = rep_means.size
    if k >= 2:
        se_mean = max(se_mean, float(rep_means.std(ddof=1) / math.sqrt(k)))
        se_std = max(se_std, float(rep_stds.std(ddof=1) / math.sqrt(k)))
    n_eff = std**2 / se_mean**2 if se_mean > 0 else float(x.size)
    return EnsembleEstimate(mean, std, se_mean, se_std, float(n_eff), ensemble, window)


def canonical_stats(series: SampleSeries) -> EnsembleEstimate:
    """Mean and standard deviation of N_0 over all records, with blocking errors.

    For merged series the error bars are the larger of the blocking estimate and
    the between-replica scatter.

    >>> import numpy as np
    >>> from fock_sampling.sampler import ChainConfig, SampleSeries
    >>> s = SampleSeries(np.array([1, 2]), np.array([0, 2]), np.zeros(2), ChainConfig(2, 1.0, steps=2))
    >>> est = canonical_stats(s)
    >>> est.mean_n0, est.std_n0
    (1.0, 1.0)
    """
    return _stats(series, "canonical")


def modal_energy(energy, max_bins: int = 4096) -> float:
    """Most probable energy: the Freedman-Diaconis histogram mode, refined to the
    median of the samples in the modal bin (an attained value for discrete spectra).
    """
    e = np.asarray(energy, dtype=float)
    if e.size == 0:
        raise InsufficientSamplesError("empty energy series")
    lo, hi = float(e.min()), float(e.max())
    if hi == lo:
        return lo
    edges = np.histogram_bin_edges(e, bins="fd")
    if edges.size - 1 > max_bins or edges.size < 2:
        edges = np.linspace(lo, hi, max_bins + 1)
    counts, edges = np.histogram(e, bins=edges)
    b = int(np.argmax(counts))
    inside = e[(e >= edges[b]) & (e <= edges[b + 1])]
    return float(np.quantile(inside, 0.5, method="inverted_cdf"))


def microcanonical_filter(series: SampleSeries, w: EnergyWindow | None = None,
                          min_samples: int = MIN_FILTERED) -> SampleSeries:
    """Records with ``|E - center| <= half_width``; ``w=None`` picks the window automatically."""
    if len(series) == 0:
        raise InsufficientSamplesError("empty series")
    if w is None:
        w = auto_window(series)
    out = series.subset(w.contains(series.energy))
    if len(out) < min_samples:
        raise InsufficientSamplesError(
            f"energy window {w} keeps {len(out)} records, fewer than {min_samples}"
        )
    return out


def auto_window(series: SampleSeries, min_retained: int = 1000, patience: int = 2,
                max_halvings: int = 40) -> EnergyWindow:
    """Shrink an energy window around the modal energy until the N_0 spread settles.

    Starts at half the canonical energy spread and halves the width.  A halving
    is stable when the std of N_0 moves by less than one standard error; the
    widest window of the first run of ``patience`` stable halvings is returned.
    If fewer than ``min_retained`` records would remain, the narrowest window
    still holding that many is used.
    """
    e = np.asarray(series.energy, dtype=float)
    center = modal_energy(e)
    h = 0.5 * float(e.std())
    if h <= 0:
        return EnergyWindow(center, max(abs(center), 1.0))
    need = min(min_retained, max(MIN_FILTERED, len(series) // 2))

    def stats_at(width):
        sub = series.subset(np.abs(e - center) <= width)
        if len(sub) < need:
            return None
        return _stats(sub, "microcanonical"), len(sub)

    prev = stats_at(h)
    if prev is None:
        return EnergyWindow(center, h)
    run_start, stable = h, 0
    for _ in range(max_halvings):
        nxt = stats_at(h / 2)
        if nxt is None:
            return EnergyWindow(center, h)
        (a, n_a), (b, n_b) = prev, nxt
        if n_b == n_a or abs(b.std_n0 - a.std_n0) < b.se_std:
            if stable == 0:
                run_start = h
            stable += 1
            if stable >= patience:
                return EnergyWindow(center, run_start)
        else:
            stable = 0
        h, prev = h / 2, nxt
    return EnergyWindow(center, h)


def microcanonical_stats(series: SampleSeries, window: EnergyWindow | None = None) -> EnsembleEstimate:
    if window is None:
        window = auto_window(series)
    sub = microcanonical_filter(series, window)
    return replace(_stats(sub, "microcanonical"), window=window)


def estimate(series: SampleSeries, ensemble: str = "canonical") -> EnsembleEstimate:
    if ensemble == "canonical":
        return canonical_stats(series)
    if ensemble == "microcanonical":
        return microcanonical_stats(series)
    raise ValueError(f"unknown ensemble {ensemble!r}")


def merge_series(series_list) -> SampleSeries:
    """Concatenate replicas of the same physical chain, labelling each record by replica."""
    series_list = list(series_list)
    if not series_list:
        raise ValueError("nothing to merge")
    first = series_list[0]
    if len(series_list) == 1:
        return first
    seeds = set()
    for s in series_list:
        if s.config.physics_key() != first.config.physics_key():
            raise ValueError(f"cannot merge {s.config.physics_key()} with {first.config.physics_key()}")
        if s.modes_key != first.modes_key:
            raise ValueError("cannot merge series sampled on different mode sets")
        seeds.add(s.config.seed)
    if len(seeds) != len(series_list):
        raise ValueError("merged replicas must have distinct seeds")
    labels, offset = [], 0
    for s in series_list:
        lab = np.asarray(s.replica, dtype=np.int64)
        lab = lab - (lab.min() if lab.size else 0) + offset
        labels.append(lab)
        offset = (lab.max() + 1) if lab.size else offset
    occ = None
    if all(s.occupations is not None for s in series_list):
        occ = np.concatenate([s.occupations for s in series_list])
    n_steps = sum(s.config.steps for s in series_list)
    rate = sum(s.acceptance_rate * s.config.steps for s in series_list) / n_steps
    return SampleSeries(
        steps=np.concatenate([s.steps for s in series_list]),
        n0=np.concatenate([s.n0 for s in series_list]),
        energy=np.concatenate([s.energy for s in series_list]),
        config=first.config,
        modes_key=first.modes_key,
        replica=np.concatenate(labels),
        occupations=occ,
        acceptance_rate=rate,
    )
