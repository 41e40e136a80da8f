"""Latent-GP covariance process: generative model and SMC inference.

The covariance trajectory is built as a sum of outer products of latent
Gaussian-process draws,

    Sigma(x_i) = sum_k L f_k(x_i) f_k(x_i)^T L^T,   k = 1..dof,

where each latent series f_kj follows a zero-mean GP whose kernel has
unit diagonal, so the marginal law of Sigma(x_i) is Wishart with scale
V = L L^T and E[Sigma(x_i)] = dof * V at every input. Observations are
zero-mean Gaussian with covariance Sigma(x_i); several subjects may share
one trajectory, in which case their likelihoods multiply.

Posterior inference runs likelihood-tempered Sequential Monte Carlo:
particles start at the prior, an adaptive temperature ladder keeps the
relative effective sample size near a target, systematic resampling
fights weight degeneracy, and particles move under Metropolis mutations
in the unconstrained space (log kernel parameters, unconstrained scale
Cholesky, whitened latents with a prior-preserving autoregressive
proposal). Independent chains are run and merged once the potential scale
reduction factor of every covariance element falls below the target.
"""

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import (
    JITTER_MAX,
    JITTER_START,
    KernelNumericalError,
    KernelSpec,
    build_matrix,
    kernel_values_stack,
    log_params,
    prior_arrays,
    sample_hyperparams,
    spec_from_json,
    spec_to_json,
    with_log_params,
)
from .timeseries import CovarianceTrajectory, MultiSubjectSeries, TimeSeries

__all__ = [
    "WishartModel",
    "ParticleState",
    "PosteriorEnsemble",
    "SmcConfig",
    "WishartNumericalError",
    "sample_prior",
    "sample_prior_trajectories",
    "reconstruct_trajectory",
    "log_likelihood",
    "smc_infer",
    "posterior_trajectories",
    "posterior_trajectory_stack",
    "ensemble_mean_trajectory",
    "rhat",
    "save_ensemble",
    "load_ensemble",
]

_LOG_2PI = np.log(2.0 * np.pi)


class WishartNumericalError(RuntimeError):
    """A covariance slice could not be factorized even after jitter escalation."""


@dataclass(frozen=True)
class WishartModel:
    """Model dimensions, kernel template and priors.

    ``dof`` defaults to d + 1, the smallest degree-of-freedom count that
    keeps every constructed matrix almost surely positive definite while
    leaving meaningful prior spread. ``scale_prior_sd`` is the standard
    deviation of the zero-mean Gaussian prior on each unconstrained
    scale-Cholesky parameter (off-diagonal entries directly; diagonal
    entries through their logarithm, so the diagonal stays positive).
    """

    d: int
    kernel: KernelSpec
    dof: int | None = None
    scale_prior_sd: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be at least 1")
        dof = self.d + 1 if self.dof is None else self.dof
        if dof < self.d:
            raise ValueError("dof must be at least d for positive definiteness")
        if self.scale_prior_sd <= 0:
            raise ValueError("scale_prior_sd must be positive")
        object.__setattr__(self, "dof", dof)

    @property
    def num_scale_params(self) -> int:
        return self.d * (self.d + 1) // 2


@dataclass(frozen=True)
class ParticleState:
    """One draw of all model parameters.

    ``latents`` holds whitened GP coordinates with shape (dof, d, n);
    multiplying by the Cholesky factor of the kernel matrix gives the
    latent series f. ``scale_params`` is the unconstrained parameter
    vector behind ``scale_chol``.
    """

    kernel: KernelSpec
    scale_chol: np.ndarray
    latents: np.ndarray
    theta_log: np.ndarray
    scale_params: np.ndarray
    log_weight: float = 0.0


@dataclass
class PosteriorEnsemble:
    """Weighted particles approximating the prior or posterior.

    ``sigma`` caches each particle's covariance trajectory with shape
    (particles, n, d, d). ``provenance`` records chain ids, temperature
    ladders, mutation acceptance rates and convergence diagnostics.
    """

    model: WishartModel
    x: np.ndarray
    theta_log: np.ndarray
    scale_params: np.ndarray
    latents: np.ndarray
    sigma: np.ndarray
    weights: np.ndarray
    provenance: dict = field(default_factory=dict)
    converged: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size != self.sigma.shape[0]:
            raise ValueError("one weight per particle required")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("weights must have a positive finite sum")
        w = w / total
        if abs(w.sum() - 1.0) > 1e-12:
            w = w / w.sum()
        self.weights = w

    @property
    def size(self) -> int:
        return self.weights.size

    def particle(self, i: int) -> ParticleState:
        kernel = with_log_params(self.model.kernel, self.theta_log[i])
        return ParticleState(
            kernel=kernel,
            scale_chol=_scale_chol_stack(self.scale_params[i : i + 1], self.model.d)[0],
            latents=self.latents[i],
            theta_log=self.theta_log[i].copy(),
            scale_params=self.scale_params[i].copy(),
            log_weight=float(np.log(self.weights[i])),
        )

    def particles(self) -> list:
        return [self.particle(i) for i in range(self.size)]


@dataclass(frozen=True)
class SmcConfig:
    """Sampler settings; defaults are desk scale (fast, reduced particles).

    ``paper_scale`` restores the published particle count. The mutation
    budget caps the extra rounds spent chasing the convergence target
    after the final temperature is reached; exhausting it flags the
    result instead of failing.
    """

    particles: int = 200
    chains: int = 3
    ess_threshold: float = 0.5
    mutation_steps_per_round: int = 2
    rhat_target: float = 1.1
    max_extra_rounds: int = 30
    latent_batches: int = 2
    light_sweeps: int = 2
    final_temperature: float = 1.0
    max_stages: int = 80
    accept_low: float = 0.2
    accept_high: float = 0.4

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("need at least 2 particles")
        if self.chains < 1:
            raise ValueError("need at least 1 chain")
        if not 0 < self.ess_threshold < 1:
            raise ValueError("ess_threshold must lie in (0, 1)")
        if not 0 <= self.final_temperature <= 1:
            raise ValueError("final_temperature must lie in [0, 1]")
        if self.mutation_steps_per_round < 1 or self.latent_batches < 1:
            raise ValueError("mutation_steps_per_round and latent_batches must be >= 1")
        if self.light_sweeps < 1:
            raise ValueError("light_sweeps must be >= 1")

    @staticmethod
    def paper_scale() -> "SmcConfig":
        return SmcConfig(particles=1000)


# ---------------------------------------------------------------------------
# parameter transforms and batched linear algebra


def _scale_chol_stack(u: np.ndarray, d: int) -> np.ndarray:
    """Unconstrained vectors (stack, d(d+1)/2) -> lower Cholesky stack."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    rows, cols = np.tril_indices(d)
    vals = u.copy()
    vals[:, rows == cols] = np.exp(u[:, rows == cols])
    L = np.zeros((u.shape[0], d, d))
    L[:, rows, cols] = vals
    return L


def _data_arrays(data):
    if isinstance(data, TimeSeries):
        return data.x, data.values[None, :, :]
    if isinstance(data, MultiSubjectSeries):
        return data.x, data.stacked_values()
    raise TypeError("data must be a TimeSeries or MultiSubjectSeries")


def _chunk_size(n: int, budget_doubles: float = 2.5e7) -> int:
    return max(1, int(budget_doubles // max(n * n, 1)))


class _DistanceBasis:
    """Distinct pairwise distances of a grid plus a fast expansion.

    Kernel matrices are functions of |x_i - x_j| only, so transcendentals
    are evaluated once per distinct distance and scattered back into the
    full matrix. Uniform grids get a Toeplitz expansion (strided windows
    over a mirrored row, no index gather); arbitrary grids fall back to a
    gather over the unique distances.
    """

    def __init__(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        self.n = x.size
        steps = np.diff(x)
        self.uniform = self.n > 1 and np.allclose(steps, steps[0], rtol=1e-9, atol=0.0)
        if self.uniform:
            self.unique = np.abs(x - x[0])
            self.inverse = None
        else:
            dist = np.abs(x[:, None] - x[None, :])
            self.unique, inverse = np.unique(dist, return_inverse=True)
            self.inverse = inverse.reshape(-1).astype(np.intp)

    def expand(self, values_on_unique: np.ndarray) -> np.ndarray:
        """(draws, distinct) kernel values -> contiguous (draws, n, n) matrices."""
        m = values_on_unique.shape[0]
        n = self.n
        if not self.uniform:
            return values_on_unique[:, self.inverse].reshape(m, n, n)
        mirrored = np.empty((m, 2 * n - 1))
        mirrored[:, : n - 1] = values_on_unique[:, :0:-1]
        mirrored[:, n - 1 :] = values_on_unique
        windows = np.lib.stride_tricks.sliding_window_view(mirrored, n, axis=1)
        return np.ascontiguousarray(windows[:, ::-1, :])


def _batched_cholesky(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky of each matrix; raises LinAlgError if any fails.

    Beyond a few hundred rows per matrix a python loop over LAPACK calls
    beats the numpy gufunc because each factorization can use threads.
    """
    if K.shape[-1] < 256:
        return np.linalg.cholesky(K)
    import scipy.linalg as sla

    out = np.empty_like(K)
    for i in range(K.shape[0]):
        out[i] = sla.cholesky(K[i], lower=True, check_finite=False)
    return out


def _chol_escalate(Ki: np.ndarray) -> tuple:
    """Per-matrix jitter escalation; Ki already carries the base jitter."""
    n = Ki.shape[0]
    jitter = JITTER_START
    extra = 0.0
    while jitter <= JITTER_MAX * (1.0 + 1e-12):
        try:
            return np.linalg.cholesky(Ki + extra * np.eye(n)), True
        except np.linalg.LinAlgError:
            extra += 9.0 * jitter
            jitter *= 10.0
    return np.eye(n), False


def _kernel_chol_stack(family: str, theta_nat: np.ndarray, basis: _DistanceBasis,
                       raise_on_fail: bool):
    """Kernel Gram matrices and their jittered Cholesky factors per draw.

    Returns (chols, ok). Draws whose matrix stays unfactorizable at the
    jitter ceiling either raise (prior sampling) or come back with
    ok=False (SMC proposals, where the proposal is simply rejected).
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ku = kernel_values_stack(family, theta_nat, basis.unique)
    finite = np.isfinite(ku).all(axis=1)
    ku = np.where(np.isfinite(ku), ku, 0.0)
    K = basis.expand(ku)
    n = basis.n
    didx = np.arange(n)
    K[:, didx, didx] += JITTER_START
    ok = np.zeros(K.shape[0], dtype=bool)
    retry = None
    if finite.all():
        try:
            chols = _batched_cholesky(K)
            ok[:] = True
            return chols, ok
        except np.linalg.LinAlgError:
            retry = np.arange(K.shape[0])
    else:
        retry = np.flatnonzero(finite)
    chols = np.empty_like(K)
    for i in retry:
        chols[i], ok[i] = _chol_escalate(K[i])
    if raise_on_fail and not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise KernelNumericalError(
            f"kernel matrix {bad} not factorizable at jitter {JITTER_MAX:g}"
        )
    return chols, ok


def _latents_to_f(Z: np.ndarray, cholK: np.ndarray) -> np.ndarray:
    """Whitened latents (stack, dof, d, n) times per-stack Cholesky factors."""
    m, dof, d, n = Z.shape
    flat = Z.reshape(m, dof * d, n)
    out = np.matmul(flat, cholK.transpose(0, 2, 1))
    return out.reshape(m, dof, d, n)


def _gram(F: np.ndarray) -> np.ndarray:
    """(stack, dof, d, n) -> per-point latent Gram matrices (stack, n, d, d)."""
    return np.einsum("pkjn,pkln->pnjl", F, F)


def _assemble_sigma(L: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Sigma = L G L^T for a stack of scale factors and Gram stacks."""
    if L.shape[-1] == 2:
        # explicit arithmetic is much faster than tiny batched matmuls
        a = L[:, 0, 0][:, None]
        b = L[:, 1, 0][:, None]
        c = L[:, 1, 1][:, None]
        g00 = G[..., 0, 0]
        g01 = 0.5 * (G[..., 0, 1] + G[..., 1, 0])
        g11 = G[..., 1, 1]
        sig = np.empty_like(G)
        sig[..., 0, 0] = a * a * g00
        sig[..., 0, 1] = a * (b * g00 + c * g01)
        sig[..., 1, 0] = sig[..., 0, 1]
        sig[..., 1, 1] = b * b * g00 + 2.0 * b * c * g01 + c * c * g11
        return sig
    sig = np.matmul(L[:, None, :, :], np.matmul(G, L.transpose(0, 2, 1)[:, None, :, :]))
    return 0.5 * (sig + sig.transpose(0, 1, 3, 2))


def _mvn_loglik_stack(sigma: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Log-likelihood of Y (subjects, n, d) under each trajectory in the stack.

    Trajectories with any numerically non-positive-definite slice get
    -inf, which rejects them as SMC proposals.
    """
    P, n, d, _ = sigma.shape
    s = Y.shape[0]
    if d == 2:
        a = sigma[..., 0, 0]
        b = sigma[..., 0, 1]
        c = sigma[..., 1, 1]
        det = a * c - b * b
        ok = np.all((det > 0) & (a > 0), axis=1)
        y0 = Y[..., 0]
        y1 = Y[..., 1]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            quad = (
                c[:, None, :] * y0**2
                - 2.0 * b[:, None, :] * y0 * y1
                + a[:, None, :] * y1**2
            ) / det[:, None, :]
            logdet = np.where(det > 0, np.log(np.where(det > 0, det, 1.0)), np.inf)
        ll = -0.5 * (
            s * n * d * _LOG_2PI + s * logdet.sum(axis=1) + quad.sum(axis=(1, 2))
        )
        return np.where(ok & np.isfinite(ll), ll, -np.inf)

    try:
        chols = np.linalg.cholesky(sigma)
        ok = np.ones(P, dtype=bool)
    except np.linalg.LinAlgError:
        chols = np.empty_like(sigma)
        ok = np.zeros(P, dtype=bool)
        for p in range(P):
            try:
                chols[p] = np.linalg.cholesky(sigma[p])
                ok[p] = True
            except np.linalg.LinAlgError:
                chols[p] = np.eye(d)
    diag = np.diagonal(chols, axis1=-2, axis2=-1)
    logdet = 2.0 * np.log(diag).sum(axis=(1, 2))
    z = np.linalg.solve(chols[:, None], Y[None, :, :, :, None])
    quad = (z**2).sum(axis=(1, 2, 3, 4))
    ll = -0.5 * (s * n * d * _LOG_2PI + s * logdet + quad)
    return np.where(ok & np.isfinite(ll), ll, -np.inf)


def _mvn_loglik_single(sigma: np.ndarray, Y: np.ndarray) -> float:
    """Per-slice Cholesky likelihood with jitter escalation and slice-indexed errors."""
    n, d, _ = sigma.shape
    s = Y.shape[0]
    total = -0.5 * s * n * d * _LOG_2PI
    for i in range(n):
        mat = sigma[i]
        scale = float(np.mean(np.diag(mat)))
        jitter = 0.0
        while True:
            try:
                chol = np.linalg.cholesky(mat + jitter * np.eye(d))
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10.0, 1e-12 * max(scale, 1e-30))
                if jitter > 1e-6 * max(scale, 1e-30):
                    raise WishartNumericalError(
                        f"covariance slice {i} is not positive definite"
                    ) from None
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        z = np.linalg.solve(chol, Y[:, i, :].T)
        total += -0.5 * (s * logdet + float(np.sum(z * z)))
    return float(total)


# ---------------------------------------------------------------------------
# prior sampling and reconstruction


def reconstruct_trajectory(state: ParticleState, x: np.ndarray) -> CovarianceTrajectory:
    """Assemble the covariance trajectory a particle encodes on grid x."""
    km = build_matrix(state.kernel, x)
    F = state.latents @ km.cholesky.T
    G = np.einsum("kjn,kln->njl", F, F)
    sigma = state.scale_chol @ G @ state.scale_chol.T
    return CovarianceTrajectory(x, 0.5 * (sigma + sigma.transpose(0, 2, 1)))


def sample_prior(model: WishartModel, x: np.ndarray, rng: np.random.Generator):
    """One prior draw: (particle state, its covariance trajectory)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("grid x must be a nonempty vector")
    kernel = sample_hyperparams(model.kernel, rng)
    u = model.scale_prior_sd * rng.standard_normal(model.num_scale_params)
    Z = rng.standard_normal((model.dof, model.d, x.size))
    state = ParticleState(
        kernel=kernel,
        scale_chol=_scale_chol_stack(u[None], model.d)[0],
        latents=Z,
        theta_log=log_params(kernel),
        scale_params=u,
    )
    return state, reconstruct_trajectory(state, x)


def _sample_prior_arrays(model: WishartModel, n: int, num: int, rng: np.random.Generator):
    means, sds = prior_arrays(model.kernel)
    theta_log = means + sds * rng.standard_normal((num, means.size))
    u = model.scale_prior_sd * rng.standard_normal((num, model.num_scale_params))
    Z = rng.standard_normal((num, model.dof, model.d, n))
    return theta_log, u, Z


def _build_sigma_stack(model, theta_log, u, Z, basis, raise_on_fail):
    """(sigma, cholK, F, ok) caches for a stack of parameter draws."""
    num, _, _, n = Z.shape
    L = _scale_chol_stack(u, model.d)
    sigma = np.empty((num, n, model.d, model.d))
    cholK = np.empty((num, n, n))
    F = np.empty_like(Z)
    ok = np.zeros(num, dtype=bool)
    chunk = _chunk_size(n)
    for lo in range(0, num, chunk):
        sel = slice(lo, min(lo + chunk, num))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            theta_nat = np.exp(theta_log[sel])
        chols, good = _kernel_chol_stack(model.kernel.family, theta_nat, basis, raise_on_fail)
        cholK[sel] = chols
        F[sel] = _latents_to_f(Z[sel], chols)
        G = _gram(F[sel])
        sigma[sel] = _assemble_sigma(L[sel], G)
        ok[sel] = good
    return sigma, cholK, F, ok


def sample_prior_trajectories(
    model: WishartModel, x: np.ndarray, num_draws: int, rng: np.random.Generator
) -> np.ndarray:
    """Stack of prior covariance trajectories, shape (num_draws, n, d, d)."""
    x = np.asarray(x, dtype=float)
    basis = _DistanceBasis(x)
    theta_log, u, Z = _sample_prior_arrays(model, x.size, num_draws, rng)
    sigma, _, _, _ = _build_sigma_stack(model, theta_log, u, Z, basis, raise_on_fail=True)
    return sigma


def log_likelihood(state: ParticleState, data) -> float:
    """Sum of zero-mean Gaussian log-densities along the trajectory.

    Multi-subject data contributes one term per subject per time point;
    all subjects share the particle's covariance trajectory.
    """
    x, Y = _data_arrays(data)
    traj = reconstruct_trajectory(state, x)
    if traj.d != Y.shape[2]:
        raise ValueError(f"state has d={traj.d} but data has d={Y.shape[2]}")
    return _mvn_loglik_single(traj.matrices, Y)


# ---------------------------------------------------------------------------
# SMC internals


class _Chain:
    def __init__(self, model, config, x, basis, loglik_fn, rng):
        self.model = model
        self.config = config
        self.x = x
        self.basis = basis
        self.loglik_fn = loglik_fn
        self.rng = rng
        P = config.particles
        self.theta_log, self.u, self.Z = _sample_prior_arrays(model, x.size, P, rng)
        self.sigma, self.cholK, self.F, ok = _build_sigma_stack(
            model, self.theta_log, self.u, self.Z, basis, raise_on_fail=True
        )
        self.L = _scale_chol_stack(self.u, model.d)
        self.G = _gram(self.F)
        self.loglik = loglik_fn(self.sigma, self.theta_log, self.u, self.Z)
        self.logw = np.zeros(P)
        self.prior_means, self.prior_sds = prior_arrays(model.kernel)
        self.step_theta = 0.25
        self.step_scale = 0.25
        self.beta = 0.3
        self.temperatures = [0.0]
        self.acceptance = {"theta": [], "scale": [], "latents": []}
        self.reached_final = config.final_temperature == 0.0

    # -- weights ------------------------------------------------------

    def weights(self) -> np.ndarray:
        w = np.exp(self.logw - self.logw.max())
        return w / w.sum()

    def relative_ess(self, logw=None) -> float:
        lw = self.logw if logw is None else logw
        m = lw.max()
        if not np.isfinite(m):
            return 0.0
        w = np.exp(lw - m)
        s = w.sum()
        return float(s * s / (w.size * np.sum(w * w)))

    def resample(self):
        P = self.logw.size
        w = self.weights()
        positions = (self.rng.uniform() + np.arange(P)) / P
        idx = np.minimum(np.searchsorted(np.cumsum(w), positions), P - 1)
        for name in ("theta_log", "u", "Z", "sigma", "cholK", "F", "L", "G", "loglik"):
            setattr(self, name, getattr(self, name)[idx])
        self.logw = np.zeros(P)

    # -- prior densities ----------------------------------------------

    def _theta_logprior(self, theta_log) -> np.ndarray:
        z = (theta_log - self.prior_means) / self.prior_sds
        return -0.5 * np.sum(z * z, axis=1)

    def _scale_logprior(self, u) -> np.ndarray:
        z = u / self.model.scale_prior_sd
        return -0.5 * np.sum(z * z, axis=1)

    # -- mutation blocks ----------------------------------------------

    def _accept_fraction(self, accepted: np.ndarray) -> float:
        return float(np.mean(accepted))

    def _update_theta(self, t: float):
        P = self.theta_log.shape[0]
        prop = self.theta_log + self.step_theta * self.rng.standard_normal(
            self.theta_log.shape
        )
        log_u = np.log(self.rng.uniform(size=P))
        accepted = np.zeros(P, dtype=bool)
        chunk = _chunk_size(self.x.size)
        for lo in range(0, P, chunk):
            sel = slice(lo, min(lo + chunk, P))
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                theta_nat = np.exp(prop[sel])
            chols, ok = _kernel_chol_stack(
                self.model.kernel.family, theta_nat, self.basis, raise_on_fail=False
            )
            F_new = _latents_to_f(self.Z[sel], chols)
            G_new = _gram(F_new)
            sigma_new = _assemble_sigma(self.L[sel], G_new)
            ll_new = self.loglik_fn(sigma_new, prop[sel], self.u[sel], self.Z[sel])
            logr = (
                t * (ll_new - self.loglik[sel])
                + self._theta_logprior(prop[sel])
                - self._theta_logprior(self.theta_log[sel])
            )
            logr = np.where(ok, logr, -np.inf)
            acc = log_u[sel] < logr
            accepted[sel] = acc
            if np.any(acc):
                rows = np.flatnonzero(acc) + lo
                self.theta_log[rows] = prop[rows]
                self.cholK[rows] = chols[acc]
                self.F[rows] = F_new[acc]
                self.G[rows] = G_new[acc]
                self.sigma[rows] = sigma_new[acc]
                self.loglik[rows] = ll_new[acc]
        self.acceptance["theta"].append(self._accept_fraction(accepted))
        self.step_theta = _adapt(self.step_theta, accepted.mean(), self.config)

    def _update_scale(self, t: float):
        P = self.u.shape[0]
        prop = self.u + self.step_scale * self.rng.standard_normal(self.u.shape)
        L_new = _scale_chol_stack(prop, self.model.d)
        sigma_new = _assemble_sigma(L_new, self.G)
        ll_new = self.loglik_fn(sigma_new, self.theta_log, prop, self.Z)
        logr = (
            t * (ll_new - self.loglik)
            + self._scale_logprior(prop)
            - self._scale_logprior(self.u)
        )
        acc = np.log(self.rng.uniform(size=P)) < logr
        if np.any(acc):
            self.u[acc] = prop[acc]
            self.L[acc] = L_new[acc]
            self.sigma[acc] = sigma_new[acc]
            self.loglik[acc] = ll_new[acc]
        self.acceptance["scale"].append(self._accept_fraction(acc))
        self.step_scale = _adapt(self.step_scale, acc.mean(), self.config)

    def _update_latents(self, t: float):
        P, dof, d, n = self.Z.shape
        batches = [b for b in np.array_split(np.arange(dof), self.config.latent_batches) if b.size]
        fractions = []
        for kidx in batches:
            keep = np.sqrt(1.0 - self.beta**2)
            noise = self.rng.standard_normal((P, kidx.size, d, n))
            Zb = keep * self.Z[:, kidx] + self.beta * noise
            flat = Zb.reshape(P, kidx.size * d, n)
            Fb = np.matmul(flat, self.cholK.transpose(0, 2, 1)).reshape(P, kidx.size, d, n)
            F_new = self.F.copy()
            F_new[:, kidx] = Fb
            G_new = _gram(F_new)
            sigma_new = _assemble_sigma(self.L, G_new)
            Z_new = self.Z.copy()
            Z_new[:, kidx] = Zb
            ll_new = self.loglik_fn(sigma_new, self.theta_log, self.u, Z_new)
            # prior-preserving proposal: the acceptance ratio is tempered likelihood only
            acc = np.log(self.rng.uniform(size=P)) < t * (ll_new - self.loglik)
            if np.any(acc):
                rows = np.flatnonzero(acc)
                self.Z[np.ix_(rows, kidx)] = Zb[acc]
                self.F[np.ix_(rows, kidx)] = Fb[acc]
                self.G[rows] = G_new[acc]
                self.sigma[rows] = sigma_new[acc]
                self.loglik[rows] = ll_new[acc]
            fractions.append(self._accept_fraction(acc))
        mean_acc = float(np.mean(fractions))
        self.acceptance["latents"].append(mean_acc)
        self.beta = min(_adapt(self.beta, mean_acc, self.config), 0.999)

    def mutation_step(self, t: float):
        # one kernel-hyperparameter update (the expensive block: a fresh
        # Cholesky per particle) buys several cheap scale/latent sweeps
        if t <= 0.0:
            return
        self._update_theta(t)
        for _ in range(self.config.light_sweeps):
            self._update_scale(t)
            self._update_latents(t)

    # -- tempering ----------------------------------------------------

    def run_tempering(self):
        cfg = self.config
        t = 0.0
        stage = 0
        while t < cfg.final_temperature - 1e-12 and stage < cfg.max_stages:
            t_new = self._next_temperature(t)
            self.logw = self.logw + (t_new - t) * np.where(
                np.isfinite(self.loglik), self.loglik, -np.inf
            )
            t = t_new
            stage += 1
            self.temperatures.append(t)
            ress = self.relative_ess()
            if ress * self.logw.size < 2.0:
                warnings.warn(
                    f"particle weights nearly degenerate (ESS {ress * self.logw.size:.2f}); "
                    "resampling and continuing",
                    RuntimeWarning,
                )
            if ress <= cfg.ess_threshold * 1.001:
                self.resample()
            for _ in range(cfg.mutation_steps_per_round):
                self.mutation_step(t)
        self.reached_final = t >= cfg.final_temperature - 1e-12
        if not self.reached_final:
            warnings.warn(
                f"temperature ladder stopped at {t:.6f} after {stage} stages",
                RuntimeWarning,
            )

    def _next_temperature(self, t: float) -> float:
        cfg = self.config
        top = cfg.final_temperature
        ll = np.where(np.isfinite(self.loglik), self.loglik, -np.inf)
        if self.relative_ess(self.logw + (top - t) * ll) >= cfg.ess_threshold:
            return top
        lo, hi = t, top
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.relative_ess(self.logw + (mid - t) * ll) >= cfg.ess_threshold:
                lo = mid
            else:
                hi = mid
        return min(max(lo, t + 1e-9), top)


def _adapt(step: float, acceptance: float, config: SmcConfig) -> float:
    if acceptance < config.accept_low:
        return max(step * 0.7, 1e-4)
    if acceptance > config.accept_high:
        return min(step * 1.4, 10.0)
    return step


def _rhat_matrix(values: np.ndarray) -> np.ndarray:
    """Potential scale reduction for each column of (chains, draws, m) values."""
    C, P, _ = values.shape
    means = values.mean(axis=1)
    within = values.var(axis=1, ddof=1).mean(axis=0)
    between = P * means.var(axis=0, ddof=1)
    var_hat = (P - 1) / P * within + between / P
    out = np.empty(within.shape)
    zero_w = within == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(var_hat / within)
    out[zero_w & (between == 0)] = 1.0
    out[zero_w & (between > 0)] = np.inf
    return out


def rhat(chains) -> float:
    """Gelman-Rubin potential scale reduction factor for scalar chains."""
    arrays = [np.asarray(c, dtype=float) for c in chains]
    if len(arrays) < 2:
        raise ValueError("rhat needs at least 2 chains")
    length = arrays[0].size
    if length < 2 or any(a.ndim != 1 or a.size != length for a in arrays):
        raise ValueError("chains must be equal-length 1-D arrays with >= 2 entries")
    stacked = np.stack(arrays)[:, :, None]
    return float(_rhat_matrix(stacked)[0])


def _sigma_rhat_max(chains: list) -> float:
    d = chains[0].model.d
    ju, ku = np.triu_indices(d)
    values = np.stack([ch.sigma[:, :, ju, ku] for ch in chains])  # (C, P, n, e)
    C, P = values.shape[:2]
    return float(np.max(_rhat_matrix(values.reshape(C, P, -1))))


def _hyper_rhat_max(chains: list) -> float:
    values = np.stack(
        [np.concatenate([ch.theta_log, ch.u], axis=1) for ch in chains]
    )
    return float(np.max(_rhat_matrix(values)))


def smc_infer(
    model: WishartModel,
    data,
    config: SmcConfig | None = None,
    rng: np.random.Generator | None = None,
    *,
    loglik_override=None,
) -> PosteriorEnsemble:
    """Posterior over model parameters by likelihood-tempered SMC.

    Runs ``config.chains`` independent chains, each moving a particle
    ensemble from the prior to the (tempered) posterior, then keeps
    mutating until the potential scale reduction factor of every
    covariance element across chains drops below ``config.rhat_target``.
    If the mutation budget runs out first, the merged ensemble is
    returned with ``converged=False`` rather than raising.

    ``loglik_override`` replaces the data likelihood with a callable
    ``f(sigma, theta_log, u, Z) -> per-particle log-likelihood``; used for
    sampler validation against tractable targets.
    """
    config = config or SmcConfig()
    rng = rng or np.random.default_rng()
    x, Y = _data_arrays(data)
    if Y.shape[2] != model.d:
        raise ValueError(f"model has d={model.d} but data has d={Y.shape[2]}")
    basis = _DistanceBasis(x)
    if loglik_override is None:
        def loglik_fn(sigma, theta_log, u, Z):
            return _mvn_loglik_stack(sigma, Y)
    else:
        loglik_fn = loglik_override

    chain_rngs = rng.spawn(config.chains)
    chains = []
    for chain_rng in chain_rngs:
        chain = _Chain(model, config, x, basis, loglik_fn, chain_rng)
        chain.run_tempering()
        chains.append(chain)

    # equalize weights so cross-chain diagnostics see plain draws
    for chain, chain_rng in zip(chains, chain_rngs):
        if np.ptp(chain.logw) > 1e-12:
            chain.resample()

    extra_rounds = 0
    if len(chains) >= 2:
        rhat_sigma = _sigma_rhat_max(chains)
        while rhat_sigma >= config.rhat_target and extra_rounds < config.max_extra_rounds:
            for chain in chains:
                for _ in range(config.mutation_steps_per_round):
                    chain.mutation_step(config.final_temperature)
            extra_rounds += 1
            rhat_sigma = _sigma_rhat_max(chains)
        rhat_hyper = _hyper_rhat_max(chains)
    else:
        rhat_sigma = None
        rhat_hyper = None

    reached = all(ch.reached_final for ch in chains)
    converged = reached and (rhat_sigma is None or rhat_sigma < config.rhat_target)
    if not converged:
        warnings.warn(
            f"SMC flagged as not converged (rhat_sigma={rhat_sigma}, "
            f"reached_final={reached})",
            RuntimeWarning,
        )

    P = config.particles
    weights = np.concatenate([chain.weights() / len(chains) for chain in chains])
    provenance = {
        "chain_id": np.repeat(np.arange(len(chains)), P),
        "temperatures": [list(chain.temperatures) for chain in chains],
        "acceptance_rates": [
            {k: list(v) for k, v in chain.acceptance.items()} for chain in chains
        ],
        "rhat_sigma_max": rhat_sigma,
        "rhat_hyperparams_max": rhat_hyper,
        "extra_mutation_rounds": extra_rounds,
        "reached_final_temperature": reached,
    }
    return PosteriorEnsemble(
        model=model,
        x=x,
        theta_log=np.concatenate([chain.theta_log for chain in chains]),
        scale_params=np.concatenate([chain.u for chain in chains]),
        latents=np.concatenate([chain.Z for chain in chains]),
        sigma=np.concatenate([chain.sigma for chain in chains]),
        weights=weights,
        provenance=provenance,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# posterior summaries and checkpointing


def posterior_trajectory_stack(
    ens: PosteriorEnsemble, num_draws: int, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Weight-proportional trajectory draws as a raw (num_draws, n, d, d) stack."""
    if num_draws < 1:
        raise ValueError("num_draws must be positive")
    rng = rng or np.random.default_rng(0)
    idx = rng.choice(ens.size, size=num_draws, p=ens.weights)
    return ens.sigma[idx]


def posterior_trajectories(
    ens: PosteriorEnsemble, num_draws: int, rng: np.random.Generator | None = None
) -> list:
    """Weight-proportional draws wrapped as validated trajectories."""
    stack = posterior_trajectory_stack(ens, num_draws, rng)
    return [CovarianceTrajectory(ens.x, mats) for mats in stack]


def ensemble_mean_trajectory(ens: PosteriorEnsemble) -> CovarianceTrajectory:
    """Weighted posterior-mean trajectory."""
    mean = np.einsum("p,pijk->ijk", ens.weights, ens.sigma)
    return CovarianceTrajectory(ens.x, 0.5 * (mean + mean.transpose(0, 2, 1)))


_CHECKPOINT_SCHEMA = 1


def save_ensemble(path, ens: PosteriorEnsemble, rng: np.random.Generator | None = None):
    """Write the ensemble (and optionally an RNG cursor) to a versioned .npz blob."""
    provenance = dict(ens.provenance)
    chain_id = provenance.pop("chain_id", None)
    meta = {
        "schema": _CHECKPOINT_SCHEMA,
        "model": {
            "d": ens.model.d,
            "dof": ens.model.dof,
            "scale_prior_sd": ens.model.scale_prior_sd,
            "kernel": spec_to_json(ens.model.kernel),
        },
        "provenance": provenance,
        "converged": ens.converged,
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    np.savez_compressed(
        path,
        meta=json.dumps(meta),
        x=ens.x,
        theta_log=ens.theta_log,
        scale_params=ens.scale_params,
        latents=ens.latents,
        sigma=ens.sigma,
        weights=ens.weights,
        chain_id=chain_id if chain_id is not None else np.array([]),
    )


def load_ensemble(path):
    """Read an ensemble written by :func:`save_ensemble`; returns (ensemble, rng).

    The returned rng is a Generator restored from the stored cursor, or
    None if no cursor was saved.
    """
    with np.load(path, allow_pickle=False) as blob:
        meta = json.loads(blob["meta"].item())
        if meta["schema"] != _CHECKPOINT_SCHEMA:
            raise ValueError(f"unsupported checkpoint schema {meta['schema']}")
        model = WishartModel(
            d=int(meta["model"]["d"]),
            kernel=spec_from_json(meta["model"]["kernel"]),
            dof=int(meta["model"]["dof"]),
            scale_prior_sd=float(meta["model"]["scale_prior_sd"]),
        )
        provenance = dict(meta["provenance"])
        if blob["chain_id"].size:
            provenance["chain_id"] = blob["chain_id"]
        ens = PosteriorEnsemble(
            model=model,
            x=blob["x"],
            theta_log=blob["theta_log"],
            scale_params=blob["scale_params"],
            latents=blob["latents"],
            sigma=blob["sigma"],
            weights=blob["weights"],
            provenance=provenance,
            converged=bool(meta["converged"]),
        )
    restored = None
    if meta["rng_state"] is not None:
        restored = np.random.default_rng()
        restored.bit_generator.state = meta["rng_state"]
    return ens, restored
