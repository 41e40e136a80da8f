"""Data model for multivariate time series and covariance trajectories.

Holds the observation matrix (n time points by d channels), sequences of
per-timepoint covariance matrices, the three simulation scenarios used in
the benchmark suite (periodic, state-switching, static), and CSV ingestion
and export.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import substream

__all__ = [
    "TimeSeries",
    "CovarianceTrajectory",
    "SimSpec",
    "MultiSubjectSeries",
    "CsvParseError",
    "generate",
    "generate_periodic",
    "generate_state_switching",
    "generate_static",
    "resolve_spec",
    "sample_subjects",
    "load_csv",
    "save_csv",
    "save_trajectory_csv",
]

SCENARIOS = ("periodic", "state_switching", "static")

_SYMMETRY_TOL = 1e-10
_EIGENVALUE_TOL = -1e-8


class CsvParseError(ValueError):
    """Malformed CSV input; message carries the offending row/column."""


@dataclass(frozen=True)
class TimeSeries:
    """Observations of d channels at n input locations.

    ``x`` is dimensionless and strictly increasing; simulated data and
    ingested files use (or are rescaled to) the unit interval. ``raw_x``
    keeps the original timestamps when a file carried them.
    """

    x: np.ndarray
    values: np.ndarray
    channel_names: tuple = ()
    raw_x: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if x.ndim != 1:
            raise ValueError("x must be one-dimensional")
        if values.ndim != 2:
            raise ValueError("values must be an n-by-d matrix")
        if values.shape[0] != x.shape[0]:
            raise ValueError(
                f"x has {x.shape[0]} entries but values has {values.shape[0]} rows"
            )
        if x.shape[0] < 2:
            raise ValueError("a time series needs at least 2 observations")
        if values.shape[1] < 1:
            raise ValueError("a time series needs at least 1 channel")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(values)):
            raise ValueError("x and values must be finite")
        if np.any(np.diff(x) <= 0):
            raise ValueError("x must be strictly increasing")
        names = tuple(self.channel_names) or tuple(
            f"ch{j}" for j in range(values.shape[1])
        )
        if len(names) != values.shape[1]:
            raise ValueError("channel_names length must match the number of channels")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", names)
        if self.raw_x is not None:
            object.__setattr__(self, "raw_x", np.asarray(self.raw_x, dtype=float))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CovarianceTrajectory:
    """A length-n sequence of d-by-d symmetric positive-definite matrices."""

    x: np.ndarray
    matrices: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError("matrices must have shape (n, d, d)")
        if x.ndim != 1 or x.shape[0] != mats.shape[0]:
            raise ValueError("x must have one entry per matrix")
        if not np.all(np.isfinite(mats)):
            raise ValueError("covariance matrices must be finite")
        asym = np.max(np.abs(mats - mats.transpose(0, 2, 1)))
        if asym >= _SYMMETRY_TOL:
            raise ValueError(f"matrices are not symmetric (max asymmetry {asym:.2e})")
        sym = 0.5 * (mats + mats.transpose(0, 2, 1))
        min_eig = float(np.min(np.linalg.eigvalsh(sym)))
        if min_eig <= _EIGENVALUE_TOL:
            raise ValueError(
                f"matrices are not positive semi-definite (min eigenvalue {min_eig:.2e})"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "matrices", sym)

    @property
    def n(self) -> int:
        return self.matrices.shape[0]

    @property
    def d(self) -> int:
        return self.matrices.shape[1]

    def edge(self, j: int, k: int) -> np.ndarray:
        """The scalar series of covariance between channels j and k."""
        return self.matrices[:, j, k]

    def edges(self):
        """Yield (j, k) index pairs for all off-diagonal edges, j < k."""
        d = self.d
        for j in range(d):
            for k in range(j + 1, d):
                yield (j, k)


@dataclass(frozen=True)
class SimSpec:
    """Configuration of one simulated dataset.

    Scenario-specific fields must only be set for their scenario:
    ``amplitude``, ``frequency`` and ``phase`` belong to ``periodic``;
    ``static_value`` to ``static``; ``state_values`` and ``duration_pool``
    to ``state_switching``. ``phase`` and ``static_value`` may be left
    None, in which case they are drawn once per replicate (uniformly on
    [0, 2pi) and [-0.4, 0.4] respectively) and can be pinned for replay
    via :func:`resolve_spec`.
    """

    scenario: str
    n: int
    amplitude: float | None = None
    frequency: int | None = None
    phase: float | None = None
    static_value: float | None = None
    state_values: tuple = (0.1, 0.8)
    duration_pool: tuple = (20, 30, 40, 50, 60)
    replicate_seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.scenario == "periodic":
            if self.amplitude is None or self.frequency is None:
                raise ValueError("periodic scenario needs amplitude and frequency")
            if abs(self.amplitude) >= 1:
                raise ValueError(
                    "amplitude must satisfy |A| < 1 to keep correlations positive definite"
                )
            if int(self.frequency) != self.frequency or self.frequency < 1:
                raise ValueError("frequency must be a positive integer")
            if self.static_value is not None:
                raise ValueError("static_value is not a periodic-scenario field")
        else:
            if self.amplitude is not None or self.frequency is not None or self.phase is not None:
                raise ValueError(
                    f"amplitude/frequency/phase are not {self.scenario}-scenario fields"
                )
        if self.scenario == "static":
            if self.static_value is not None and abs(self.static_value) > 0.4:
                raise ValueError("static_value must lie in [-0.4, 0.4]")
        if self.scenario == "state_switching":
            if self.static_value is not None:
                raise ValueError("static_value is not a state-switching field")
            if len(self.state_values) != 2:
                raise ValueError("state_values must be a (low, high) pair")
            if not all(abs(v) < 1 for v in self.state_values):
                raise ValueError("state values must satisfy |value| < 1")
            if len(self.duration_pool) == 0 or any(d < 1 for d in self.duration_pool):
                raise ValueError("duration_pool must hold positive integers")
        object.__setattr__(self, "state_values", tuple(self.state_values))
        object.__setattr__(self, "duration_pool", tuple(int(d) for d in self.duration_pool))


@dataclass(frozen=True)
class MultiSubjectSeries:
    """Several subjects' series sharing one grid and channel layout."""

    subjects: tuple = field(default_factory=tuple)

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if len(subjects) < 1:
            raise ValueError("need at least one subject")
        first = subjects[0]
        for m, ts in enumerate(subjects[1:], start=1):
            if ts.d != first.d:
                raise ValueError(f"subject {m} has {ts.d} channels, expected {first.d}")
            if ts.n != first.n or not np.array_equal(ts.x, first.x):
                raise ValueError(f"subject {m} is not on the shared grid")
        object.__setattr__(self, "subjects", subjects)

    @property
    def s(self) -> int:
        return len(self.subjects)

    @property
    def n(self) -> int:
        return self.subjects[0].n

    @property
    def d(self) -> int:
        return self.subjects[0].d

    @property
    def x(self) -> np.ndarray:
        return self.subjects[0].x

    def stacked_values(self) -> np.ndarray:
        """All observations as an (s, n, d) array."""
        return np.stack([ts.values for ts in self.subjects])


def _split_rng(spec: SimSpec, rng: np.random.Generator | None):
    """Two child streams: one for parameter resolution, one for noise.

    Keeping them separate makes a resolved spec replay to the identical
    dataset: pinning the phase consumes no draws from the noise stream.
    """
    if rng is None:
        rng = substream(spec.replicate_seed, "simulation")
    params_rng, noise_rng = rng.spawn(2)
    return params_rng, noise_rng


def resolve_spec(spec: SimSpec, rng: np.random.Generator | None = None) -> SimSpec:
    """Pin any randomly-drawn scenario parameters so the spec replays exactly."""
    params_rng, _ = _split_rng(spec, rng)
    return _resolve(spec, params_rng)


def _resolve(spec: SimSpec, params_rng: np.random.Generator) -> SimSpec:
    if spec.scenario == "periodic" and spec.phase is None:
        return replace(spec, phase=params_rng.uniform(0.0, 2.0 * np.pi))
    if spec.scenario == "static" and spec.static_value is None:
        return replace(spec, static_value=params_rng.uniform(-0.4, 0.4))
    return spec


def _correlation_trajectory(x: np.ndarray, offdiag: np.ndarray) -> CovarianceTrajectory:
    n = offdiag.shape[0]
    mats = np.empty((n, 2, 2))
    mats[:, 0, 0] = 1.0
    mats[:, 1, 1] = 1.0
    mats[:, 0, 1] = offdiag
    mats[:, 1, 0] = offdiag
    return CovarianceTrajectory(x, mats)


def _sample_observations(
    traj: CovarianceTrajectory, rng: np.random.Generator
) -> np.ndarray:
    """One zero-mean Gaussian draw per grid point with covariance Sigma(x_i)."""
    chols = np.linalg.cholesky(traj.matrices)
    z = rng.standard_normal((traj.n, traj.d))
    return np.einsum("ijk,ik->ij", chols, z)


def generate_periodic(spec: SimSpec, rng: np.random.Generator | None = None):
    """Sinusoidal off-diagonal correlation between two channels.

    The off-diagonal follows ``A * sin(freq * 2 pi * x + phase)`` on a
    uniform grid over [0, 1]; observations are sampled per point from a
    zero-mean bivariate Gaussian with that correlation.
    """
    if spec.scenario != "periodic":
        raise ValueError("spec.scenario must be 'periodic'")
    params_rng, noise_rng = _split_rng(spec, rng)
    spec = _resolve(spec, params_rng)
    x = np.linspace(0.0, 1.0, spec.n)
    offdiag = spec.amplitude * np.sin(spec.frequency * 2.0 * np.pi * x + spec.phase)
    traj = _correlation_trajectory(x, offdiag)
    values = _sample_observations(traj, noise_rng)
    return traj, TimeSeries(x, values)


def generate_state_switching(spec: SimSpec, rng: np.random.Generator | None = None):
    """Piecewise-constant correlation alternating between two states.

    The starting state is drawn at random; each segment's duration is
    drawn uniformly from the duration pool and the final segment is
    truncated at n.
    """
    if spec.scenario != "state_switching":
        raise ValueError("spec.scenario must be 'state_switching'")
    params_rng, noise_rng = _split_rng(spec, rng)
    x = np.linspace(0.0, 1.0, spec.n)
    offdiag = np.empty(spec.n)
    state = int(params_rng.integers(0, 2))
    pool = np.asarray(spec.duration_pool)
    pos = 0
    while pos < spec.n:
        duration = int(params_rng.choice(pool))
        end = min(pos + duration, spec.n)
        offdiag[pos:end] = spec.state_values[state]
        state = 1 - state
        pos = end
    traj = _correlation_trajectory(x, offdiag)
    values = _sample_observations(traj, noise_rng)
    return traj, TimeSeries(x, values)


def generate_static(spec: SimSpec, rng: np.random.Generator | None = None):
    """Constant correlation, drawn uniformly from [-0.4, 0.4] unless pinned."""
    if spec.scenario != "static":
        raise ValueError("spec.scenario must be 'static'")
    params_rng, noise_rng = _split_rng(spec, rng)
    spec = _resolve(spec, params_rng)
    x = np.linspace(0.0, 1.0, spec.n)
    offdiag = np.full(spec.n, spec.static_value)
    traj = _correlation_trajectory(x, offdiag)
    values = _sample_observations(traj, noise_rng)
    return traj, TimeSeries(x, values)


_GENERATORS = {
    "periodic": generate_periodic,
    "state_switching": generate_state_switching,
    "static": generate_static,
}


def generate(spec: SimSpec, rng: np.random.Generator | None = None):
    """Dispatch to the scenario's generator; returns (trajectory, series)."""
    return _GENERATORS[spec.scenario](spec, rng)


def sample_subjects(
    traj: CovarianceTrajectory, s: int, rng: np.random.Generator
) -> MultiSubjectSeries:
    """Draw s independent subjects that share one covariance trajectory."""
    if s < 1:
        raise ValueError("need at least one subject")
    subjects = tuple(
        TimeSeries(traj.x, _sample_observations(traj, rng)) for _ in range(s)
    )
    return MultiSubjectSeries(subjects)


def load_csv(path, has_header: bool = True) -> TimeSeries:
    """Read a time series from CSV: one row per time point, one column per channel.

    With a header whose first column is named ``x`` (case-insensitive),
    that column supplies the input locations, which are rescaled to
    [0, 1]; the raw values are kept in ``raw_x``. Otherwise x defaults to
    a uniform grid on [0, 1].
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise CsvParseError(f"{path}: file is empty")

    header = None
    if has_header:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]

    width = len(rows[0]) if rows else 0
    data = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise CsvParseError(
                f"{path}: row {i + 1} has {len(row)} cells, expected {width}"
            )
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise CsvParseError(
                    f"{path}: non-numeric cell {cell!r} at row {i + 1}, column {j + 1}"
                ) from None

    if data.shape[0] < 2:
        raise ValueError(f"{path}: need at least 2 rows, got {data.shape[0]}")

    raw_x = None
    if header is not None and header and header[0].lower() == "x":
        raw_x = data[:, 0]
        values = data[:, 1:]
        names = tuple(header[1:])
        span = raw_x[-1] - raw_x[0]
        if span <= 0:
            raise ValueError(f"{path}: x column must be strictly increasing")
        x = (raw_x - raw_x[0]) / span
    else:
        values = data
        names = tuple(header) if header is not None else ()
        x = np.linspace(0.0, 1.0, data.shape[0])

    if values.shape[1] < 1:
        raise ValueError(f"{path}: no channel columns found")
    return TimeSeries(x, values, names, raw_x=raw_x)


def save_csv(ts: TimeSeries, path) -> None:
    """Write a time series as ``x`` plus one column per channel."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", *ts.channel_names])
        for i in range(ts.n):
            writer.writerow([repr(float(ts.x[i])), *(repr(float(v)) for v in ts.values[i])])


def save_trajectory_csv(traj: CovarianceTrajectory, path) -> None:
    """Write a trajectory as ``x`` plus row-major upper-triangle ``cov_j_k`` columns."""
    pairs = [(j, k) for j in range(traj.d) for k in range(j, traj.d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", *(f"cov_{j}_{k}" for j, k in pairs)])
        for i in range(traj.n):
            writer.writerow(
                [repr(float(traj.x[i])), *(repr(float(traj.matrices[i, j, k])) for j, k in pairs)]
            )
