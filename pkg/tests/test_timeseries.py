import numpy as np
import pytest

from dyncov.rng import substream
from dyncov.statistics import variance_stat
from dyncov.timeseries import (
    CovarianceTrajectory,
    CsvParseError,
    MultiSubjectSeries,
    SimSpec,
    TimeSeries,
    generate,
    generate_periodic,
    generate_state_switching,
    generate_static,
    load_csv,
    resolve_spec,
    sample_subjects,
    save_csv,
    save_trajectory_csv,
)


def test_timeseries_validation():
    with pytest.raises(ValueError):
        TimeSeries(x=[0.0], values=[[1.0]])  # n < 2
    with pytest.raises(ValueError):
        TimeSeries(x=[0.0, 0.0], values=[[1.0], [2.0]])  # not strictly increasing
    with pytest.raises(ValueError):
        TimeSeries(x=[0.0, 1.0], values=[[np.nan], [2.0]])
    with pytest.raises(ValueError):
        TimeSeries(x=[0.0, 1.0], values=[[1.0], [2.0]], channel_names=("a", "b"))
    ts = TimeSeries(x=[0.0, 1.0], values=[[1.0, 2.0], [3.0, 4.0]])
    assert ts.n == 2 and ts.d == 2
    assert ts.channel_names == ("ch0", "ch1")


def test_trajectory_validation():
    mats = np.stack([np.eye(2)] * 3)
    traj = CovarianceTrajectory(np.array([0.0, 0.5, 1.0]), mats)
    assert traj.n == 3 and traj.d == 2
    assert list(traj.edges()) == [(0, 1)]
    bad = mats.copy()
    bad[1, 0, 1] = 0.5  # asymmetric
    with pytest.raises(ValueError, match="symmetric"):
        CovarianceTrajectory(np.array([0.0, 0.5, 1.0]), bad)
    neg = np.stack([np.diag([1.0, -0.5])] * 3)
    with pytest.raises(ValueError, match="positive"):
        CovarianceTrajectory(np.array([0.0, 0.5, 1.0]), neg)


def test_simspec_scenario_fields():
    with pytest.raises(ValueError):
        SimSpec(scenario="periodic", n=10)  # missing amplitude/frequency
    with pytest.raises(ValueError, match="amplitude"):
        SimSpec(scenario="periodic", n=10, amplitude=1.0, frequency=1)
    with pytest.raises(ValueError):
        SimSpec(scenario="static", n=10, amplitude=0.5)
    with pytest.raises(ValueError):
        SimSpec(scenario="static", n=10, static_value=0.7)
    with pytest.raises(ValueError):
        SimSpec(scenario="nope", n=10)


def test_periodic_sine_values_on_coarse_grid():
    # A=0.8, one cycle, phase 0 on x={0,1/3,2/3,1}: direct evaluation of the sine
    spec = SimSpec(scenario="periodic", n=4, amplitude=0.8, frequency=1, phase=0.0)
    traj, ts = generate_periodic(spec)
    expected = np.array([0.0, 0.6928203230275509, -0.6928203230275509, 0.0])
    np.testing.assert_allclose(traj.matrices[:, 0, 1], expected, atol=1e-12)
    np.testing.assert_allclose(traj.matrices[:, 0, 0], 1.0)
    np.testing.assert_allclose(ts.x, [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])


def test_periodic_zero_amplitude_is_static_identity():
    spec = SimSpec(scenario="periodic", n=50, amplitude=0.0, frequency=4, phase=1.0)
    traj, _ = generate_periodic(spec)
    np.testing.assert_array_equal(traj.matrices, np.stack([np.eye(2)] * 50))


def test_periodic_requires_matching_scenario():
    spec = SimSpec(scenario="static", n=10)
    with pytest.raises(ValueError):
        generate_periodic(spec)


def test_generation_is_pure_function_of_spec_and_seed():
    spec = SimSpec(scenario="periodic", n=80, amplitude=0.5, frequency=2, replicate_seed=42)
    t1, s1 = generate(spec)
    t2, s2 = generate(spec)
    np.testing.assert_array_equal(t1.matrices, t2.matrices)
    np.testing.assert_array_equal(s1.values, s2.values)


def test_resolved_spec_replays_identically():
    spec = SimSpec(scenario="periodic", n=40, amplitude=0.5, frequency=2, replicate_seed=9)
    resolved = resolve_spec(spec)
    assert resolved.phase is not None and 0 <= resolved.phase < 2 * np.pi
    t1, s1 = generate(spec)
    t2, s2 = generate(resolved)
    np.testing.assert_array_equal(t1.matrices, t2.matrices)
    np.testing.assert_array_equal(s1.values, s2.values)

    static = SimSpec(scenario="static", n=20, replicate_seed=3)
    pinned = resolve_spec(static)
    assert pinned.static_value is not None
    t3, s3 = generate(static)
    t4, s4 = generate(pinned)
    np.testing.assert_array_equal(t3.matrices, t4.matrices)
    np.testing.assert_array_equal(s3.values, s4.values)


def test_state_switching_replays_seeded_duration_draws():
    spec = SimSpec(scenario="state_switching", n=70, replicate_seed=11)
    traj, _ = generate_state_switching(spec)
    # replay the parameter stream: start state, then durations
    params = substream(11, "simulation").spawn(2)[0]
    state = int(params.integers(0, 2))
    offdiag = traj.matrices[:, 0, 1]
    pos = 0
    while pos < 70:
        duration = int(params.choice(np.asarray(spec.duration_pool)))
        end = min(pos + duration, 70)
        np.testing.assert_array_equal(offdiag[pos:end], spec.state_values[state])
        state = 1 - state
        pos = end


def test_state_switching_single_segment_when_n_small():
    spec = SimSpec(scenario="state_switching", n=15, replicate_seed=0)
    traj, _ = generate_state_switching(spec)  # smallest pool duration is 20 > n
    offdiag = traj.matrices[:, 0, 1]
    assert np.all(offdiag == offdiag[0])
    assert offdiag[0] in spec.state_values


def test_state_switching_equal_states_is_static():
    spec = SimSpec(scenario="state_switching", n=100, state_values=(0.5, 0.5), replicate_seed=1)
    traj, _ = generate_state_switching(spec)
    np.testing.assert_array_equal(traj.matrices[:, 0, 1], 0.5)


def test_static_truth_has_zero_variance_statistic():
    spec = SimSpec(scenario="static", n=120, replicate_seed=5)
    traj, _ = generate_static(spec)
    assert variance_stat(traj.matrices[:, 0, 1]) == 0.0


def test_static_zero_value_gives_identity():
    spec = SimSpec(scenario="static", n=30, static_value=0.0)
    traj, _ = generate_static(spec)
    np.testing.assert_array_equal(traj.matrices, np.stack([np.eye(2)] * 30))


def test_static_replicates_draw_distinct_values():
    values = set()
    for seed in range(40):
        spec = SimSpec(scenario="static", n=10, replicate_seed=seed)
        traj, _ = generate_static(spec)
        values.add(float(traj.matrices[0, 0, 1]))
    assert len(values) == 40
    assert all(-0.4 <= v <= 0.4 for v in values)


def test_generated_slices_have_unit_diagonal_and_positive_min_eigenvalue():
    for spec in (
        SimSpec(scenario="periodic", n=64, amplitude=0.9, frequency=3, replicate_seed=2),
        SimSpec(scenario="state_switching", n=64, replicate_seed=2),
        SimSpec(scenario="static", n=64, replicate_seed=2),
    ):
        traj, _ = generate(spec)
        offdiag = traj.matrices[:, 0, 1]
        np.testing.assert_array_equal(traj.matrices[:, 0, 0], 1.0)
        eigs = np.linalg.eigvalsh(traj.matrices)
        np.testing.assert_allclose(eigs.min(axis=1), 1.0 - np.abs(offdiag), atol=1e-12)
        assert eigs.min() > 0


def test_observation_sampling_matches_target_covariance():
    # static scenario: every grid point shares one matrix, so all rows are
    # i.i.d. draws from it and their sample covariance is the oracle
    spec = SimSpec(scenario="static", n=100_000, static_value=0.3, replicate_seed=17)
    traj, ts = generate_static(spec)
    sample_cov = np.cov(ts.values.T)
    np.testing.assert_allclose(sample_cov, traj.matrices[0], atol=0.02)


def test_multisubject_pooled_covariance_converges():
    spec = SimSpec(scenario="periodic", n=40, amplitude=0.8, frequency=1, phase=0.0)
    traj, _ = generate_periodic(spec)
    subjects = sample_subjects(traj, 5000, substream(23, "subjects"))
    assert subjects.s == 5000 and subjects.n == 40 and subjects.d == 2
    stacked = subjects.stacked_values()
    for i in (0, 10, 25):
        pooled = np.cov(stacked[:, i, :].T)
        np.testing.assert_allclose(pooled, traj.matrices[i], atol=0.06)


def test_multisubject_requires_shared_grid():
    a = TimeSeries([0.0, 0.5, 1.0], np.zeros((3, 2)) + [[1, 2], [3, 4], [5, 6]])
    b = TimeSeries([0.0, 0.4, 1.0], [[1, 2], [3, 4], [5, 6]])
    with pytest.raises(ValueError, match="shared grid"):
        MultiSubjectSeries((a, b))
    with pytest.raises(ValueError):
        MultiSubjectSeries(())


def test_load_csv_default_grid(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("1.0,2.0\n3.0,4.0\n5.0,6.0\n")
    ts = load_csv(path, has_header=False)
    np.testing.assert_allclose(ts.x, [0.0, 0.5, 1.0])
    assert ts.d == 2
    assert ts.raw_x is None


def test_load_csv_header_names_and_x_column(tmp_path):
    path = tmp_path / "named.csv"
    path.write_text("x,a,b\n10.0,1.0,2.0\n11.0,3.0,4.0\n14.0,5.0,6.0\n")
    ts = load_csv(path)
    assert ts.channel_names == ("a", "b")
    np.testing.assert_allclose(ts.x, [0.0, 0.25, 1.0])  # rescaled to unit range
    np.testing.assert_allclose(ts.raw_x, [10.0, 11.0, 14.0])


def test_load_csv_errors(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("a,b\n1.0,2.0\n3.0\n")
    with pytest.raises(CsvParseError, match="row 2"):
        load_csv(ragged)

    alpha = tmp_path / "alpha.csv"
    alpha.write_text("a,b\n1.0,2.0\n3.0,oops\n")
    with pytest.raises(CsvParseError, match="row 2, column 2"):
        load_csv(alpha)

    short = tmp_path / "short.csv"
    short.write_text("a,b\n1.0,2.0\n")
    with pytest.raises(ValueError, match="at least 2 rows"):
        load_csv(short)


def test_csv_roundtrip(tmp_path):
    spec = SimSpec(scenario="periodic", n=20, amplitude=0.5, frequency=1, replicate_seed=4)
    _, ts = generate_periodic(spec)
    path = tmp_path / "series.csv"
    save_csv(ts, path)
    loaded = load_csv(path)
    np.testing.assert_allclose(loaded.values, ts.values, rtol=0, atol=0)
    np.testing.assert_allclose(loaded.x, ts.x)


def test_trajectory_csv_schema(tmp_path):
    spec = SimSpec(scenario="periodic", n=5, amplitude=0.5, frequency=1, phase=0.0)
    traj, _ = generate_periodic(spec)
    path = tmp_path / "traj.csv"
    save_trajectory_csv(traj, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "x,cov_0_0,cov_0_1,cov_1_1"
    assert len(lines) == 6
    first = [float(v) for v in lines[1].split(",")]
    assert first == [0.0, 1.0, 0.0, 1.0]
