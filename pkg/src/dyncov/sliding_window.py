"""Sliding-window covariance estimation.

The covariance at each output location is the sample covariance of a
window of ``window_points`` consecutive observations. With stride 1 the
window is centered on every time point (clamped inside the series near
the edges) so the estimate lives on the full input grid; larger strides
yield floor((n - window) / stride) + 1 windows located at their centers.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .timeseries import CovarianceTrajectory, TimeSeries

__all__ = ["WindowConfig", "estimate", "group_average"]


@dataclass(frozen=True)
class WindowConfig:
    """Window length as a fraction of n or an explicit point count.

    ``center=False`` drops the per-window mean subtraction and computes
    the plain scaled outer product of the raw window rows.
    """

    window_fraction: float | None = None
    window_points: int | None = None
    stride: int = 1
    center: bool = True

    def __post_init__(self):
        if (self.window_fraction is None) == (self.window_points is None):
            raise ValueError("set exactly one of window_fraction or window_points")
        if self.window_fraction is not None and not 0 < self.window_fraction <= 1:
            raise ValueError("window_fraction must lie in (0, 1]")
        if self.window_points is not None and self.window_points < 2:
            raise ValueError("window_points must be at least 2")
        if self.stride < 1:
            raise ValueError("stride must be a positive integer")

    def resolve_length(self, n: int) -> int:
        """The window length in points for a series of length n."""
        if self.window_points is not None:
            length = self.window_points
        else:
            length = int(round(self.window_fraction * n))
        if length < 2:
            raise ValueError(f"resolved window length {length} is too short (need >= 2)")
        if length > n:
            raise ValueError(f"resolved window length {length} exceeds series length {n}")
        return length


def estimate(ts: TimeSeries, cfg: WindowConfig) -> CovarianceTrajectory:
    """Windowed sample covariance of a multivariate series."""
    n = ts.n
    length = cfg.resolve_length(n)
    view = sliding_window_view(ts.values, length, axis=0)  # (n-length+1, d, length)

    if cfg.stride == 1:
        # Centered window per time point, clamped to stay inside the series.
        starts = np.floor(np.arange(n) - (length - 1) / 2).astype(int)
        starts = np.clip(starts, 0, n - length)
        x_out = ts.x
    else:
        starts = np.arange(0, n - length + 1, cfg.stride)
        x_out = 0.5 * (ts.x[starts] + ts.x[starts + length - 1])

    windows = view[starts].transpose(0, 2, 1)  # (m, length, d)
    if cfg.center:
        windows = windows - windows.mean(axis=1, keepdims=True)
    cov = np.einsum("ilj,ilk->ijk", windows, windows) / (length - 1)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    return CovarianceTrajectory(x_out, cov)


def group_average(estimates) -> CovarianceTrajectory:
    """Pointwise mean of per-subject trajectories on one shared grid."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("need at least one trajectory")
    first = estimates[0]
    for t in estimates[1:]:
        if t.matrices.shape != first.matrices.shape:
            raise ValueError(
                f"shape mismatch: {t.matrices.shape} vs {first.matrices.shape}"
            )
        if not np.array_equal(t.x, first.x):
            raise ValueError("trajectories are not on the same grid")
    mean = np.mean([t.matrices for t in estimates], axis=0)
    return CovarianceTrajectory(first.x, mean)
