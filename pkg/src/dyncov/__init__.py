"""dyncov: time-varying covariance estimation and dynamics testing.

Estimate how the covariance between channels of a multivariate time
series changes over time (sliding windows or a latent-GP covariance
process with SMC inference) and test whether that variation is real:
either against phase-randomized surrogates with p-values, or with
Bayes factors from prior/posterior density ratios.
"""

from .bayes import (
    BayesResult,
    BayesTestConfig,
    EdgeEvidence,
    StatDistribution,
    bayesian_test,
    density_at_zero,
    savage_dickey,
)
from .experiments import (
    Cell,
    ExperimentPlan,
    MetricTable,
    classification_metrics,
    mse,
    report,
    run_plan,
)
from .kernels import KernelMatrix, KernelSpec, LogNormalPrior, build_matrix, preset
from .rng import substream
from .sliding_window import WindowConfig, estimate, group_average
from .statistics import (
    EdgeSeries,
    MedianCrossingConfig,
    max_power_stat,
    median_crossing_stat,
    stats_over_trajectory,
    variance_stat,
)
from .surrogate import (
    FrequentistResult,
    SurrogateConfig,
    frequentist_test,
    phase_randomize,
)
from .timeseries import (
    CovarianceTrajectory,
    MultiSubjectSeries,
    SimSpec,
    TimeSeries,
    generate,
    generate_periodic,
    generate_state_switching,
    generate_static,
    load_csv,
    sample_subjects,
)
from .wishart import (
    ParticleState,
    PosteriorEnsemble,
    SmcConfig,
    WishartModel,
    log_likelihood,
    posterior_trajectories,
    rhat,
    sample_prior,
    smc_infer,
)

__version__ = "0.1.0"
