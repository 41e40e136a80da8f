"""Stationary Gaussian-process covariance functions and their priors.

Four families are supported, all normalized so that kappa(x, x) = 1,
which is what lets the latent-process covariance construction separate
correlation structure from the scale matrix:

exponential            exp(-|dx| / (2 l^2))
periodic               exp(-2 sin^2(pi |dx| / p) / lp^2)
periodic_exponential   periodic * exponential (locally periodic)
rational_quadratic     (1 + |dx| / (2 a l^2))^(-a)

Note the exponential family divides the *absolute* distance, not its
square, by 2 l^2; the rational quadratic likewise uses |dx| and converges
to the exponential family as a -> infinity. Hyperparameters carry
independent log-normal priors and are manipulated in log-space so that
positivity holds by construction.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "LogNormalPrior",
    "KernelSpec",
    "KernelMatrix",
    "KernelNumericalError",
    "FAMILY_PARAMS",
    "PRESETS",
    "preset",
    "evaluate",
    "build_matrix",
    "sample_hyperparams",
    "kernel_values",
    "kernel_values_stack",
    "log_params",
    "with_log_params",
    "prior_arrays",
    "spec_to_json",
    "spec_from_json",
]

FAMILY_PARAMS = {
    "exponential": ("lengthscale",),
    "periodic": ("period", "period_lengthscale"),
    "periodic_exponential": ("period", "period_lengthscale", "lengthscale"),
    "rational_quadratic": ("alpha", "lengthscale"),
}

JITTER_START = 1e-8
JITTER_MAX = 1e-4


class KernelNumericalError(RuntimeError):
    """Kernel matrix could not be factorized even at maximum jitter."""


@dataclass(frozen=True)
class LogNormalPrior:
    """log theta ~ Normal(mean, sd); the median of theta is exp(mean)."""

    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if self.sd <= 0:
            raise ValueError("prior sd must be positive")


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family with concrete positive parameters and their priors."""

    family: str
    params: dict
    priors: dict

    def __post_init__(self):
        if self.family not in FAMILY_PARAMS:
            raise ValueError(f"unknown kernel family {self.family!r}")
        expected = FAMILY_PARAMS[self.family]
        if set(self.params) != set(expected):
            raise ValueError(
                f"{self.family} kernel takes exactly the parameters {expected}, "
                f"got {tuple(self.params)}"
            )
        for name, value in self.params.items():
            if not (value > 0) or not math.isfinite(value):
                raise ValueError(f"kernel parameter {name} must be strictly positive")
        if set(self.priors) != set(expected):
            raise ValueError("each kernel parameter needs exactly one prior")
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "priors", dict(self.priors))

    @property
    def param_names(self) -> tuple:
        """Parameter names in the family's canonical order."""
        return FAMILY_PARAMS[self.family]


@dataclass(frozen=True)
class KernelMatrix:
    """A kernel Gram matrix with the jitter that made it factorizable.

    ``values`` has unit diagonal (no jitter applied); ``cholesky`` is the
    lower factor of ``values + jitter * I``.
    """

    values: np.ndarray
    jitter: float
    cholesky: np.ndarray


def _make_spec(family: str, **overrides) -> KernelSpec:
    names = FAMILY_PARAMS[family]
    priors = {name: LogNormalPrior(0.0, 1.0) for name in names}
    priors.update({k: v for k, v in overrides.items() if isinstance(v, LogNormalPrior)})
    params = {name: math.exp(priors[name].mean) for name in names}
    return KernelSpec(family, params, priors)


PRESETS = {
    "exponential": lambda: _make_spec("exponential"),
    "periodic": lambda: _make_spec("periodic"),
    "periodic_exponential": lambda: _make_spec("periodic_exponential"),
    "rq1": lambda: _make_spec("rational_quadratic"),
    "rq2": lambda: _make_spec("rational_quadratic", alpha=LogNormalPrior(-3.0, 1.0)),
}


def preset(name: str) -> KernelSpec:
    """A named kernel configuration with its standard priors.

    ``rq1`` puts log-normal(0, 1) priors on every rational-quadratic
    parameter; ``rq2`` sharpens the alpha prior to log-normal(-3, 1).
    Parameters default to their prior medians.
    """
    key = name.lower().replace("-", "_")
    if key not in PRESETS:
        raise ValueError(f"unknown kernel preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[key]()


def _kappa(family: str, dist, params: dict):
    # params entries may be scalars or arrays broadcastable against dist
    if family == "exponential":
        return np.exp(-dist / (2.0 * params["lengthscale"] ** 2))
    if family == "periodic":
        s = np.sin(np.pi * dist / params["period"])
        return np.exp(-2.0 * s * s / params["period_lengthscale"] ** 2)
    if family == "periodic_exponential":
        s = np.sin(np.pi * dist / params["period"])
        periodic = np.exp(-2.0 * s * s / params["period_lengthscale"] ** 2)
        return periodic * np.exp(-dist / (2.0 * params["lengthscale"] ** 2))
    if family == "rational_quadratic":
        a = params["alpha"]
        return np.power(1.0 + dist / (2.0 * a * params["lengthscale"] ** 2), -a)
    raise AssertionError(family)


def kernel_values(spec: KernelSpec, dist: np.ndarray) -> np.ndarray:
    """Evaluate the kernel on an array of absolute distances."""
    return _kappa(spec.family, dist, spec.params)


def kernel_values_stack(family: str, theta: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Evaluate one kernel family for a stack of parameter vectors.

    ``theta`` holds natural-scale parameters, one row per draw, columns in
    the family's canonical order; returns a (draws,) + dist.shape stack.
    Shares the closed forms with :func:`kernel_values` exactly.
    """
    names = FAMILY_PARAMS[family]
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[1] != len(names):
        raise ValueError(f"theta must have shape (draws, {len(names)})")
    shape = (theta.shape[0],) + (1,) * np.ndim(dist)
    params = {name: theta[:, i].reshape(shape) for i, name in enumerate(names)}
    return _kappa(family, dist[None, ...], params)


def evaluate(spec: KernelSpec, xi: float, xj: float) -> float:
    """Kernel value kappa(xi, xj); equals 1 at xi == xj for every family."""
    return float(kernel_values(spec, np.abs(np.asarray(xi - xj, dtype=float))))


def build_matrix(
    spec: KernelSpec,
    x: np.ndarray,
    jitter_start: float = JITTER_START,
    jitter_max: float = JITTER_MAX,
) -> KernelMatrix:
    """Build the Gram matrix on grid x and find a Cholesky-stable jitter.

    Jitter starts at ``jitter_start`` and escalates tenfold until the
    factorization succeeds; past ``jitter_max`` the matrix is declared
    numerically unusable and a :class:`KernelNumericalError` is raised
    with the offending parameters.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("x must be a nonempty vector")
    if not np.all(np.isfinite(x)) or np.any(np.diff(x) < 0):
        raise ValueError("x must be finite and sorted")
    dist = np.abs(x[:, None] - x[None, :])
    values = kernel_values(spec, dist)
    values = 0.5 * (values + values.T)
    eye = np.eye(x.size)
    jitter = jitter_start
    while True:
        try:
            chol = np.linalg.cholesky(values + jitter * eye)
            return KernelMatrix(values, jitter, chol)
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > jitter_max * (1.0 + 1e-12):
                raise KernelNumericalError(
                    f"kernel matrix not factorizable at jitter {jitter_max:g} "
                    f"(family={spec.family}, params={spec.params})"
                ) from None


def sample_hyperparams(template: KernelSpec, rng: np.random.Generator) -> KernelSpec:
    """Draw each parameter independently from its log-normal prior."""
    params = {
        name: float(np.exp(rng.normal(template.priors[name].mean, template.priors[name].sd)))
        for name in template.param_names
    }
    return replace(template, params=params)


def log_params(spec: KernelSpec) -> np.ndarray:
    """Parameters in log-space, canonical order."""
    return np.log([spec.params[name] for name in spec.param_names])


def with_log_params(spec: KernelSpec, w: np.ndarray) -> KernelSpec:
    """Rebuild the spec from log-space parameters."""
    w = np.asarray(w, dtype=float)
    names = spec.param_names
    if w.shape != (len(names),):
        raise ValueError(f"expected {len(names)} log-parameters, got shape {w.shape}")
    return replace(spec, params={name: float(np.exp(v)) for name, v in zip(names, w)})


def prior_arrays(spec: KernelSpec):
    """(means, sds) of the log-space Gaussian priors, canonical order."""
    means = np.array([spec.priors[name].mean for name in spec.param_names])
    sds = np.array([spec.priors[name].sd for name in spec.param_names])
    return means, sds


def spec_to_json(spec: KernelSpec) -> dict:
    return {
        "family": spec.family,
        "params": dict(spec.params),
        "priors": {
            name: {"mean": prior.mean, "sd": prior.sd}
            for name, prior in spec.priors.items()
        },
    }


def spec_from_json(payload: dict) -> KernelSpec:
    priors = {
        name: LogNormalPrior(entry["mean"], entry["sd"])
        for name, entry in payload["priors"].items()
    }
    return KernelSpec(payload["family"], dict(payload["params"]), priors)
