"""Scalar test statistics summarizing one edge's connectivity series.

Three statistics are provided, each zero on a constant series and growing
with temporal structure:

* variance: sample variance of the series,
* max_power: largest squared magnitude of the discrete Fourier transform
  after removing the mean (a flag restores the literal transform with the
  zero-frequency bin included),
* median_crossing: a weighted sum, over excursions delimited by median
  crossings, of excursion length to the power gamma times excursion
  height to the power beta.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EdgeSeries",
    "MedianCrossingConfig",
    "STAT_KINDS",
    "variance_stat",
    "max_power_stat",
    "median_crossings",
    "median_crossing_stat",
    "stats_over_trajectory",
]

STAT_KINDS = ("variance", "max_power", "median_crossing")


@dataclass(frozen=True)
class EdgeSeries:
    """The covariance series of one channel pair over the input grid."""

    values: np.ndarray
    x: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("an edge series needs at least 2 values")
        if not np.all(np.isfinite(values)):
            raise ValueError("edge series values must be finite")
        object.__setattr__(self, "values", values)
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            if x.shape != values.shape:
                raise ValueError("x must match values in length")
            object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class MedianCrossingConfig:
    """Weights on excursion lengths (gamma) and heights (beta)."""

    gamma: float = 0.9
    beta: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.gamma) or not np.isfinite(self.beta):
            raise ValueError("gamma and beta must be finite")


def _as_values(e) -> np.ndarray:
    if isinstance(e, EdgeSeries):
        return e.values
    values = np.asarray(e, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise ValueError("expected a one-dimensional series of length >= 2")
    return values


def variance_stat(e) -> float:
    """Sample variance (denominator n - 1) of the series."""
    return float(np.var(_as_values(e), ddof=1))


def max_power_stat(e, include_dc: bool = False) -> float:
    """Largest squared DFT magnitude over nonzero frequencies.

    The series is demeaned first so a static offset cannot dominate;
    ``include_dc=True`` skips the demeaning and takes the maximum over
    all bins including zero frequency.
    """
    values = _as_values(e)
    if include_dc:
        coeffs = np.fft.rfft(values)
        return float(np.max(np.abs(coeffs) ** 2))
    coeffs = np.fft.rfft(values - values.mean())
    return float(np.max(np.abs(coeffs[1:]) ** 2))


def median_crossings(e) -> np.ndarray:
    """Interior indices where the series passes its median.

    A crossing is the first sample on the new side of the median; samples
    exactly on the median count as their own side, so they bound
    crossings on both flanks.
    """
    values = _as_values(e)
    side = np.sign(values - np.median(values))
    return np.flatnonzero(side[1:] != side[:-1]) + 1


def median_crossing_stat(e, cfg: MedianCrossingConfig | None = None) -> float:
    """Weighted excursion statistic zeta.

    The series is split into maximal runs on one side of the median; each
    run that terminates in a crossing contributes length^gamma *
    height^beta, where length is in samples and height is the largest
    absolute deviation from the median over the run including the
    crossing sample that ends it. Returns 0 when the series never crosses
    its median.
    """
    cfg = cfg or MedianCrossingConfig()
    values = _as_values(e)
    if values.size < 3:
        raise ValueError("median_crossing_stat needs at least 3 values")
    crossings = median_crossings(values)
    if crossings.size == 0:
        return 0.0
    bounds = np.concatenate(([0], crossings))
    absdev = np.abs(values - np.median(values))
    lengths = np.diff(bounds).astype(float)
    run_max = np.maximum.reduceat(absdev, bounds)[:-1]
    heights = np.maximum(run_max, absdev[bounds[1:]])
    return float(np.sum(np.abs(lengths**cfg.gamma * heights**cfg.beta)))


def stats_over_trajectory(
    traj,
    cfg: MedianCrossingConfig | None = None,
    include_dc: bool = False,
) -> dict:
    """All three statistics for every off-diagonal edge (j < k)."""
    out = {}
    for j, k in traj.edges():
        series = traj.edge(j, k)
        out[(j, k)] = {
            "variance": variance_stat(series),
            "max_power": max_power_stat(series, include_dc=include_dc),
            "median_crossing": median_crossing_stat(series, cfg),
        }
    return out
