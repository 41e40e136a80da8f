import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyncov.kernels import (
    FAMILY_PARAMS,
    KernelNumericalError,
    KernelSpec,
    LogNormalPrior,
    build_matrix,
    evaluate,
    kernel_values,
    kernel_values_stack,
    log_params,
    preset,
    prior_arrays,
    sample_hyperparams,
    spec_from_json,
    spec_to_json,
    with_log_params,
)

FAMILIES = tuple(FAMILY_PARAMS)


def _spec(family, **params):
    base = preset({"rational_quadratic": "rq1"}.get(family, family))
    return KernelSpec(family, {**base.params, **params}, base.priors)


def test_exponential_closed_form():
    spec = _spec("exponential", lengthscale=1.0)
    assert evaluate(spec, 0.0, 2.0) == pytest.approx(np.exp(-1.0), rel=1e-12)
    assert evaluate(spec, 0.3, 0.3) == 1.0


def test_periodic_full_period_returns_one():
    spec = _spec("periodic", period=0.5, period_lengthscale=1.3)
    assert evaluate(spec, 0.1, 0.6) == pytest.approx(1.0, abs=1e-12)


def test_all_families_unit_at_zero_distance():
    for family in FAMILIES:
        spec = _spec(family)
        assert evaluate(spec, 0.7, 0.7) == 1.0


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError, match="strictly positive"):
        _spec("exponential", lengthscale=0.0)
    with pytest.raises(ValueError, match="strictly positive"):
        _spec("exponential", lengthscale=-1.0)
    with pytest.raises(ValueError, match="exactly the parameters"):
        KernelSpec("exponential", {"period": 1.0}, {"period": LogNormalPrior()})
    with pytest.raises(ValueError, match="unknown kernel family"):
        KernelSpec("squared_exp", {"lengthscale": 1.0}, {"lengthscale": LogNormalPrior()})


def test_single_point_matrix():
    km = build_matrix(_spec("periodic"), np.array([0.3]))
    assert km.values.shape == (1, 1)
    assert km.values[0, 0] == 1.0
    assert km.cholesky[0, 0] == pytest.approx(np.sqrt(1.0 + km.jitter))


def test_unit_diagonal_before_jitter():
    x = np.linspace(0.0, 1.0, 40)
    for family in FAMILIES:
        km = build_matrix(_spec(family), x)
        np.testing.assert_array_equal(np.diag(km.values), 1.0)
        assert km.jitter >= 1e-8


def test_periodic_matrix_repeats_across_periods():
    # 9 points over [0,1] span two periods of p=0.5; shifting by one period
    # (4 grid steps) leaves kernel values unchanged
    x = np.linspace(0.0, 1.0, 9)
    km = build_matrix(_spec("periodic", period=0.5, period_lengthscale=0.8), x)
    np.testing.assert_allclose(km.values[0, :5], km.values[0, 4:], atol=1e-12)
    np.testing.assert_allclose(km.values[:5, :5], km.values[4:, 4:], atol=1e-12)


def test_rational_quadratic_limit_is_exponential():
    x = np.linspace(0.0, 1.0, 50)
    rq = build_matrix(_spec("rational_quadratic", alpha=1e6, lengthscale=0.7), x)
    expo = build_matrix(_spec("exponential", lengthscale=0.7), x)
    assert np.max(np.abs(rq.values - expo.values)) < 1e-4


def test_sample_hyperparams_medians():
    rng = np.random.default_rng(123)
    draws = np.array(
        [sample_hyperparams(preset("exponential"), rng).params["lengthscale"] for _ in range(100_000)]
    )
    assert abs(np.median(draws) - 1.0) < 0.02  # median of log-normal(0,1) is 1

    rng = np.random.default_rng(7)
    alphas = np.array(
        [sample_hyperparams(preset("rq2"), rng).params["alpha"] for _ in range(20_000)]
    )
    assert np.median(alphas) == pytest.approx(np.exp(-3.0), rel=0.05)


def test_rq2_preset_prior():
    spec = preset("rq2")
    assert spec.priors["alpha"] == LogNormalPrior(-3.0, 1.0)
    assert spec.priors["lengthscale"] == LogNormalPrior(0.0, 1.0)
    assert spec.params["alpha"] == pytest.approx(np.exp(-3.0))
    with pytest.raises(ValueError, match="unknown kernel preset"):
        preset("matern")


def test_sampling_is_deterministic_under_fixed_seed():
    a = sample_hyperparams(preset("periodic_exponential"), np.random.default_rng(5))
    b = sample_hyperparams(preset("periodic_exponential"), np.random.default_rng(5))
    assert a.params == b.params


@settings(deadline=None, max_examples=40)
@given(
    family=st.sampled_from(FAMILIES),
    logs=st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3),
)
def test_random_parameters_give_psd_unit_diagonal_matrices(family, logs):
    names = FAMILY_PARAMS[family]
    params = {name: float(np.exp(v)) for name, v in zip(names, logs)}
    spec = _spec(family, **params)
    x = np.linspace(0.0, 1.0, 30)
    km = build_matrix(spec, x)
    np.testing.assert_array_equal(km.values, km.values.T)
    np.testing.assert_array_equal(np.diag(km.values), 1.0)
    assert np.linalg.eigvalsh(km.values).min() > -1e-8


@settings(deadline=None, max_examples=40)
@given(
    family=st.sampled_from(FAMILIES),
    a=st.floats(-5.0, 5.0),
    b=st.floats(-5.0, 5.0),
    shift=st.floats(-3.0, 3.0),
)
def test_stationarity(family, a, b, shift):
    spec = _spec(family)
    lhs = evaluate(spec, a, b)
    rhs = evaluate(spec, a + shift, b + shift)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_periodic_gp_samples_repeat_across_periods():
    # draws from the periodic kernel repeat after one period up to the
    # jitter scale: sd of f(x) - f(x + p) is sqrt(2 * jitter)
    x = np.linspace(0.0, 1.0, 11)
    km = build_matrix(_spec("periodic", period=0.5, period_lengthscale=0.9), x)
    assert km.jitter == 1e-8
    rng = np.random.default_rng(21)
    bound = 6.0 * np.sqrt(2.0 * km.jitter)
    for _ in range(20):
        f = km.cholesky @ rng.standard_normal(11)
        assert np.max(np.abs(f[:6] - f[5:])) < bound


def test_kernel_values_stack_matches_scalar_path():
    x = np.linspace(0.0, 1.0, 25)
    dist = np.abs(x[:, None] - x[None, :])
    rng = np.random.default_rng(3)
    for family in FAMILIES:
        template = _spec(family)
        names = FAMILY_PARAMS[family]
        theta = np.exp(rng.normal(size=(4, len(names))))
        stacked = kernel_values_stack(family, theta, dist)
        for i in range(4):
            spec = KernelSpec(family, dict(zip(names, theta[i])), template.priors)
            np.testing.assert_array_equal(stacked[i], kernel_values(spec, dist))


def test_log_space_roundtrip_and_priors():
    spec = preset("periodic_exponential")
    w = log_params(spec)
    assert w.shape == (3,)
    back = with_log_params(spec, w)
    for name in spec.param_names:
        assert back.params[name] == pytest.approx(spec.params[name])
    means, sds = prior_arrays(spec)
    np.testing.assert_array_equal(means, 0.0)
    np.testing.assert_array_equal(sds, 1.0)


def test_spec_json_roundtrip():
    spec = preset("rq2")
    again = spec_from_json(spec_to_json(spec))
    assert again == spec


def test_jitter_escalation_failure_reports_params():
    # duplicated grid points make the matrix exactly singular; a ceiling
    # below any useful jitter forces the escalation to give up
    x = np.array([0.0, 0.5, 0.5, 1.0])
    spec = _spec("exponential", lengthscale=1.0)
    with pytest.raises(KernelNumericalError, match="exponential"):
        build_matrix(spec, x, jitter_start=1e-30, jitter_max=1e-29)
    # with the normal ladder the duplicate is rescued by jitter
    km = build_matrix(spec, x)
    assert km.jitter <= 1e-4
