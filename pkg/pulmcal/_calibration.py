"""
Bayesian calibration of the microvascular parameters.

Priors, the Gaussian likelihood of the 107 observed values, delayed-rejection
adaptive Metropolis sampling with conjugate inverse-gamma updates of the
measurement-error variances, convergence diagnostics and forward propagation
of the posterior into credible and prediction bands.
"""
import io
import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import linalg, stats
from sklearn.utils import check_random_state

from ._exceptions import (
    DataValidationError,
    DegenerateChainError,
    NumericalError,
)
from ._solver import (
    N_SAMPLES,
    PARAMETER_BOUNDS,
    PARAMETER_NAMES,
    model_vector_to_observables,
    simulate,
)

logger = logging.getLogger(__name__)

SOURCES = ("pressure", "lpa_flow", "rpa_flow", "strain")
SOURCE_SIZES = (2, N_SAMPLES, N_SAMPLES, N_SAMPLES)
N_OBSERVATIONS = sum(SOURCE_SIZES)
NOISE_NAMES = ("sigma2_pressure", "sigma2_lpa", "sigma2_rpa", "sigma2_strain")
PERCENTILES = (2.5, 50.0, 97.5)


def source_slices(sizes=SOURCE_SIZES):
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [slice(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True)
class ObservationVector:
    """Measured data: systolic and diastolic pressure (mmHg), LPA and RPA
    flows (mL/s) and MPA strain (percent) on the 35-point grid."""

    p_sys: float
    p_dia: float
    q_lpa: np.ndarray
    q_rpa: np.ndarray
    strain: np.ndarray

    def __post_init__(self):
        for name in ("q_lpa", "q_rpa", "strain"):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != (N_SAMPLES,):
                raise DataValidationError(f"{name} must have {N_SAMPLES} samples")
            if not np.all(np.isfinite(values)):
                raise DataValidationError(f"{name} must be finite")
            object.__setattr__(self, name, values)
        if not self.p_sys > self.p_dia:
            raise DataValidationError("systolic pressure must exceed diastolic pressure")

    def to_vector(self):
        return np.concatenate([[self.p_sys, self.p_dia], self.q_lpa, self.q_rpa, self.strain])

    @classmethod
    def from_vector(cls, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (N_OBSERVATIONS,):
            raise DataValidationError(f"an observation vector has {N_OBSERVATIONS} entries")
        _, lpa, rpa, strain = (values[s] for s in source_slices())
        return cls(float(values[0]), float(values[1]), lpa, rpa, strain)

    @classmethod
    def from_csv(cls, path):
        """Read two scalar lines (``p_sys_mmHg``, ``p_dia_mmHg``) followed by a
        ``t, q_lpa, q_rpa, strain_pct`` table of 35 rows."""
        with open(path) as stream:
            lines = [line for line in stream if line.strip() and not line.startswith("#")]
        scalars = {}
        for line in lines[:2]:
            key, _, value = line.partition(",")
            try:
                scalars[key.strip()] = float(value)
            except ValueError:
                raise DataValidationError(f"invalid scalar line {line.strip()!r}") from None
        if set(scalars) != {"p_sys_mmHg", "p_dia_mmHg"}:
            raise DataValidationError("observation CSV must start with p_sys_mmHg and p_dia_mmHg lines")
        table = pd.read_csv(io.StringIO("".join(lines[2:])))
        missing = {"t", "q_lpa", "q_rpa", "strain_pct"} - set(table.columns)
        if missing:
            raise DataValidationError(f"observation CSV is missing columns {sorted(missing)}")
        return cls(
            scalars["p_sys_mmHg"],
            scalars["p_dia_mmHg"],
            table["q_lpa"].to_numpy(),
            table["q_rpa"].to_numpy(),
            table["strain_pct"].to_numpy(),
        )

    def to_csv(self, path, period, header=None):
        times = np.arange(N_SAMPLES) * period / N_SAMPLES
        with open(path, "w") as stream:
            for key, value in (header or {}).items():
                stream.write(f"# {key}: {value}\n")
            stream.write(f"p_sys_mmHg,{self.p_sys!r}\n")
            stream.write(f"p_dia_mmHg,{self.p_dia!r}\n")
            pd.DataFrame(
                {"t": times, "q_lpa": self.q_lpa, "q_rpa": self.q_rpa, "strain_pct": self.strain}
            ).to_csv(stream, index=False)


@dataclass(frozen=True)
class TruncatedGaussianPrior:
    mean: float
    sd: float
    lower: float
    upper: float

    def __post_init__(self):
        if not self.sd > 0:
            raise DataValidationError("prior standard deviation must be positive")
        if not self.lower < self.upper:
            raise DataValidationError("prior bounds must satisfy lower < upper")

    def logpdf(self, x):
        if not self.lower <= x <= self.upper:
            return -np.inf
        return float(stats.norm.logpdf(x, self.mean, self.sd))

    @property
    def initial_value(self):
        return float(np.clip(self.mean, self.lower, self.upper))


@dataclass(frozen=True)
class UniformPrior:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DataValidationError("prior bounds must satisfy lower < upper")

    def logpdf(self, x):
        if not self.lower <= x <= self.upper:
            return -np.inf
        return -float(np.log(self.upper - self.lower))

    @property
    def initial_value(self):
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class PriorSpec:
    """One prior per parameter, in ``PARAMETER_NAMES`` order."""

    components: Tuple
    kind: str = "custom"

    @property
    def bounds(self):
        return np.array([[p.lower, p.upper] for p in self.components])

    def initial_point(self):
        return np.array([p.initial_value for p in self.components])

    def in_support(self, theta):
        b = self.bounds
        return bool(np.all((b[:, 0] <= theta) & (theta <= b[:, 1])))


def gaussian_prior(bounds=PARAMETER_BOUNDS):
    """Truncated Gaussian priors: ``eta ~ N(2.13, 0.37)``, ``lrr ~ N(10.7, 8)``."""
    (el, eh), (ll, lh) = bounds[0], bounds[1]
    eta = TruncatedGaussianPrior(2.13, 0.37, el, eh)
    lrr = TruncatedGaussianPrior(10.7, 8.0, ll, lh)
    (el, eh), (ll, lh) = bounds[2], bounds[3]
    return PriorSpec(
        (eta, lrr, TruncatedGaussianPrior(2.13, 0.37, el, eh), TruncatedGaussianPrior(10.7, 8.0, ll, lh)),
        kind="gaussian",
    )


def uniform_prior(bounds=PARAMETER_BOUNDS):
    return PriorSpec(tuple(UniformPrior(lo, hi) for lo, hi in bounds), kind="uniform")


PRIORS = {"gaussian": gaussian_prior, "uniform": uniform_prior}


def log_prior(theta, prior):
    """Sum of per-parameter log densities, ``-inf`` outside the support."""
    return float(sum(p.logpdf(x) for p, x in zip(prior.components, np.asarray(theta, dtype=float))))


@dataclass
class NoiseModel:
    """Measurement-error variances per data source with inverse-gamma hyperparameters.

    Parameters
    ----------
    variances : ndarray, shape (n_sources,)

    shape : ndarray, shape (n_sources,)
        Inverse-gamma shape ``a_s``.

    scale : ndarray, shape (n_sources,)
        Inverse-gamma scale ``b_s``.

    sizes : tuple of int
        Number of observations of each source.
    """

    variances: np.ndarray
    shape: np.ndarray = field(default_factory=lambda: np.ones(len(SOURCES)))
    scale: np.ndarray = field(default_factory=lambda: np.full(len(SOURCES), 1e-2))
    sizes: Tuple[int, ...] = SOURCE_SIZES

    def __post_init__(self):
        self.variances = np.asarray(self.variances, dtype=float)
        self.shape = np.asarray(self.shape, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)

    def diagonal(self):
        return np.repeat(self.variances, self.sizes)

    @classmethod
    def from_data(cls, observations, residuals, shape=1.0, scale_fraction=0.01, floor=1e-10):
        """Hyperparameters ``a = shape``, ``b = scale_fraction * var(data_s)`` and
        initial variances equal to the mean squared residual of each source."""
        y = observations.to_vector() if isinstance(observations, ObservationVector) else np.asarray(observations)
        residuals = np.asarray(residuals, dtype=float)
        slices = source_slices()
        data_var = np.array([np.var(y[s]) for s in slices])
        scale = np.maximum(scale_fraction * data_var, floor)
        variances = np.array([np.mean(residuals[s] ** 2) for s in slices])
        variances = np.maximum(variances, np.maximum(1e-6 * data_var, floor))
        return cls(variances, np.full(len(SOURCES), float(shape)), scale)


def log_likelihood(y, model, noise):
    """Gaussian log likelihood with diagonal covariance given by ``noise``."""
    if isinstance(y, ObservationVector):
        y = y.to_vector()
    y = np.asarray(y, dtype=float)
    model = np.asarray(model, dtype=float)
    if np.any(noise.variances <= 0):
        raise DataValidationError("error variances must be positive")
    diag = noise.diagonal()
    if diag.shape != y.shape or model.shape != y.shape:
        raise DataValidationError("observation, model and noise sizes do not match")
    r = y - model
    return float(-0.5 * (len(y) * np.log(2 * np.pi) + np.sum(np.log(diag)) + np.sum(r * r / diag)))


def update_noise(residuals, shape, scale, sizes=SOURCE_SIZES, random_state=None):
    """Draw ``sigma2_s ~ InvGamma(a_s + n_s / 2, b_s + SS_s / 2)`` for every source.

    ``residuals`` is either the full residual vector or a list of per-source arrays.
    """
    rng = check_random_state(random_state)
    if isinstance(residuals, (list, tuple)):
        parts = [np.asarray(r, dtype=float) for r in residuals]
    else:
        residuals = np.asarray(residuals, dtype=float)
        parts = [residuals[s] for s in source_slices(sizes)]
    shape = np.broadcast_to(np.asarray(shape, dtype=float), (len(parts),))
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (len(parts),))
    return np.array(
        [
            stats.invgamma.rvs(a + len(r) / 2.0, scale=b + 0.5 * np.dot(r, r), random_state=rng)
            for r, a, b in zip(parts, shape, scale)
        ]
    )


@dataclass(frozen=True)
class DramOptions:
    """Settings of :func:`dram_sample`.

    Parameters
    ----------
    n_iter : int, default=10000

    burn_in : int, default=2000

    adapt_start : int, default=100
        Draws needed before the proposal covariance is first adapted.

    adapt_interval : int, default=100
        The covariance is re-estimated every ``adapt_interval`` iterations
        from the newer half of the history.

    dr_scale : float, default=0.2
        Scale of the second-stage proposal relative to the first.

    regularization : float, default=1e-10
    """

    n_iter: int = 10000
    burn_in: int = 2000
    adapt_start: int = 100
    adapt_interval: int = 100
    dr_scale: float = 0.2
    regularization: float = 1e-10

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise DataValidationError("burn_in must be in [0, n_iter)")


@dataclass
class PosteriorChain:
    """Markov chain of parameter draws and error variances.

    Attributes
    ----------
    samples : ndarray, shape (n_iter, n_params)

    noise : ndarray, shape (n_iter, n_sources)
        Error variances in force at each iteration; zero columns when the
        variances were fixed.

    logpost : ndarray, shape (n_iter,)

    accepted : ndarray of bool, shape (n_iter,)

    burn_in : int
    """

    samples: np.ndarray
    noise: np.ndarray
    logpost: np.ndarray
    accepted: np.ndarray
    burn_in: int
    parameter_names: Tuple[str, ...] = PARAMETER_NAMES

    @property
    def n_iter(self):
        return self.samples.shape[0]

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted))

    @property
    def post_burn_in(self):
        return self.samples[self.burn_in :]

    def tail(self, n_tail):
        """Last ``n_tail`` draws of parameters and error variances."""
        available = self.n_iter - self.burn_in
        if n_tail > available:
            raise DataValidationError(
                f"n_tail={n_tail} exceeds the {available} post-burn-in draws"
            )
        return self.samples[-n_tail:], self.noise[-n_tail:]

    def posterior_mean(self):
        return self.post_burn_in.mean(axis=0)


def dram_sample(log_posterior, init, proposal_cov, options=None, random_state=None, gibbs_step=None):
    """Delayed-rejection adaptive Metropolis.

    Parameters
    ----------
    log_posterior : callable
        ``theta -> log density``; ``-inf`` outside the support.

    init : array-like, shape (n_params,)

    proposal_cov : array-like, shape (n_params, n_params)
        Initial proposal covariance.

    options : DramOptions, default=None

    random_state : int, RandomState instance or None

    gibbs_step : callable, default=None
        ``(theta, rng) -> variances``; called once per iteration after the
        Metropolis move. It must update whatever ``log_posterior`` reads, since
        the current log density is re-evaluated afterwards.

    Returns
    -------
    chain : PosteriorChain
    """
    options = options or DramOptions()
    rng = check_random_state(random_state)
    x = np.array(init, dtype=float)
    d = x.size
    lp = log_posterior(x)
    if not np.isfinite(lp):
        raise DataValidationError("log posterior is not finite at the initial point")

    cov = np.atleast_2d(np.asarray(proposal_cov, dtype=float))
    chol = linalg.cholesky(cov, lower=True)
    adapt_scale = 2.38**2 / d

    samples = np.empty((options.n_iter, d))
    logpost = np.empty(options.n_iter)
    accepted = np.zeros(options.n_iter, dtype=bool)
    noise = []

    for i in range(options.n_iter):
        z1 = rng.standard_normal(d)
        y1 = x + chol @ z1
        lp1 = log_posterior(y1)
        alpha1 = _acceptance(lp1 - lp)
        if rng.uniform() < alpha1:
            x, lp, accepted[i] = y1, lp1, True
        else:
            y2 = x + options.dr_scale * (chol @ rng.standard_normal(d))
            lp2 = log_posterior(y2)
            if np.isfinite(lp2):
                alpha_back = _acceptance(lp1 - lp2)
                if alpha_back < 1:
                    # first-stage proposal densities of y1 seen from y2 and from x
                    w_back = linalg.solve_triangular(chol, y1 - y2, lower=True)
                    log_q = -0.5 * (w_back @ w_back) + 0.5 * (z1 @ z1)
                    log_alpha2 = lp2 - lp + log_q + np.log1p(-alpha_back) - np.log1p(-alpha1)
                    if np.log(rng.uniform()) < log_alpha2:
                        x, lp, accepted[i] = y2, lp2, True

        if gibbs_step is not None:
            noise.append(gibbs_step(x, rng))
            lp = log_posterior(x)
        samples[i] = x
        logpost[i] = lp

        n_seen = i + 1
        if n_seen >= options.adapt_start and n_seen % options.adapt_interval == 0:
            emp = np.atleast_2d(np.cov(samples[n_seen // 2 : n_seen].T))
            candidate = adapt_scale * (emp + options.regularization * np.eye(d))
            try:
                chol = linalg.cholesky(candidate, lower=True)
            except linalg.LinAlgError:
                logger.debug("covariance adaptation skipped at iteration %d", n_seen)

    chain = PosteriorChain(
        samples=samples,
        noise=np.array(noise) if noise else np.empty((options.n_iter, 0)),
        logpost=logpost,
        accepted=accepted,
        burn_in=options.burn_in,
    )
    logger.info("DRAM finished: %d iterations, acceptance rate %.3f", options.n_iter, chain.acceptance_rate)
    return chain


def _acceptance(log_ratio):
    if np.isnan(log_ratio):
        return 0.0
    return float(np.exp(min(0.0, log_ratio)))


@dataclass(frozen=True)
class GewekeResult:
    z: np.ndarray
    p: np.ndarray


def _variance_of_mean(x):
    """Variance of the mean of ``x`` from its autocovariances.

    Spectral density at zero frequency, with the autocovariance sum cut off
    by the initial monotone sequence rule (pairs of lags summed while
    positive and non-increasing).
    """
    n = len(x)
    f = np.fft.rfft(x - x.mean(), 2 * n)
    acov = np.fft.irfft(np.abs(f) ** 2, 2 * n)[:n] / n
    n_pairs = n // 2
    pairs = acov[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    negative = np.flatnonzero(pairs <= 0)
    pairs = pairs[: negative[0] if len(negative) else n_pairs]
    if len(pairs) == 0:
        return acov[0] / n
    spectrum = 2.0 * np.minimum.accumulate(pairs).sum() - acov[0]
    return max(spectrum, acov[0] / n) / n


def geweke_test(chain, first=0.1, last=0.5):
    """Compare the means of the first 10% and last 50% of each column.

    Parameters
    ----------
    chain : array-like, shape (n,) or (n, n_params)
        Post-burn-in draws.

    Returns
    -------
    result : GewekeResult
        ``z`` scores and two-sided normal ``p`` values per column.
    """
    x = np.asarray(chain, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 100:
        raise ValueError("the Geweke test needs at least 100 draws")
    a = x[: int(first * n)]
    b = x[n - int(last * n) :]
    z = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        if np.ptp(a[:, j]) == 0 or np.ptp(b[:, j]) == 0:
            raise DegenerateChainError(f"degenerate chain: column {j} has a constant segment")
        z[j] = (a[:, j].mean() - b[:, j].mean()) / np.sqrt(
            _variance_of_mean(a[:, j]) + _variance_of_mean(b[:, j])
        )
    return GewekeResult(z, 2.0 * stats.norm.sf(np.abs(z)))


class EmulatorForwardModel:
    """Forward model backed by a fitted :class:`PcaGpEmulator`."""

    def __init__(self, emulator):
        self.emulator = emulator

    def __call__(self, theta):
        return self.emulator.predict(np.asarray(theta, dtype=float).reshape(1, -1))[0]

    def predict_many(self, thetas, n_jobs=None):
        return self.emulator.predict(np.atleast_2d(thetas))


class PdeForwardModel:
    """Forward model running the pulse-wave solver for every query."""

    def __init__(self, network, inlet, options=None):
        self.network = network
        self.inlet = inlet
        self.options = options

    def __call__(self, theta):
        sim = simulate(self.network, theta, self.inlet, self.options)
        if not sim.converged:
            raise NumericalError("simulation did not converge")
        return sim.model_vector

    def predict_many(self, thetas, n_jobs=None):
        return np.array(Parallel(n_jobs=n_jobs)(delayed(self)(theta) for theta in np.atleast_2d(thetas)))


class CalibrationTarget:
    """Log posterior of the parameters given observations and current error variances.

    The last forward evaluation is cached, so re-evaluating the same point
    after a variance update costs no model run.
    """

    def __init__(self, observations, forward, prior, a_dia, noise):
        self.observations = observations
        self.y = observations.to_vector()
        self.forward = forward
        self.prior = prior
        self.a_dia = a_dia
        self.noise = noise
        self._cache_key = None
        self._cache_value = None

    def predict_observables(self, theta):
        key = np.asarray(theta, dtype=float).tobytes()
        if key != self._cache_key:
            try:
                value = model_vector_to_observables(self.forward(theta), self.a_dia)
            except NumericalError as exc:
                logger.debug("forward model failed at %s: %s", theta, exc)
                value = None
            self._cache_key, self._cache_value = key, value
        return self._cache_value

    def residuals(self, theta):
        m = self.predict_observables(theta)
        return None if m is None else self.y - m

    def log_posterior(self, theta):
        lp = log_prior(theta, self.prior)
        if not np.isfinite(lp):
            return -np.inf
        m = self.predict_observables(theta)
        if m is None or not np.all(np.isfinite(m)):
            return -np.inf
        return lp + log_likelihood(self.y, m, self.noise)

    def gibbs_step(self, theta, rng):
        self.noise.variances = update_noise(
            self.residuals(theta), self.noise.shape, self.noise.scale, self.noise.sizes, rng
        )
        return self.noise.variances.copy()


def calibrate(observations, forward, prior, a_dia, options=None, random_state=None, noise_shape=1.0, noise_scale_fraction=0.01):
    """Sample the posterior of the parameters and error variances.

    Starts at the prior mean (truncated Gaussian) or box centre (uniform),
    with error variances set to the mean squared residuals there.

    Returns
    -------
    chain : PosteriorChain
    """
    init = prior.initial_point()
    at_start = CalibrationTarget(observations, forward, prior, a_dia, None)
    residuals = at_start.residuals(init)
    if residuals is None:
        raise NumericalError("forward model fails at the initial parameters")
    noise = NoiseModel.from_data(observations, residuals, noise_shape, noise_scale_fraction)
    target = CalibrationTarget(observations, forward, prior, a_dia, noise)
    span = prior.bounds[:, 1] - prior.bounds[:, 0]
    logger.info("calibrating with %s prior from %s", prior.kind, np.round(init, 4).tolist())
    return dram_sample(
        target.log_posterior,
        init,
        np.diag((0.05 * span) ** 2),
        options,
        random_state,
        gibbs_step=target.gibbs_step,
    )


def summarize_chain(chain):
    """Posterior summary: means, medians, 95% intervals, Geweke diagnostics, acceptance."""
    post = chain.post_burn_in
    try:
        geweke = geweke_test(post)
        z, p = geweke.z, geweke.p
    except DegenerateChainError as exc:
        logger.warning("Geweke test not available: %s", exc)
        z = p = np.full(post.shape[1], np.nan)
    parameters = {}
    for j, name in enumerate(chain.parameter_names):
        lo, med, hi = np.percentile(post[:, j], PERCENTILES)
        parameters[name] = {
            "mean": float(post[:, j].mean()),
            "median": float(med),
            "ci95": [float(lo), float(hi)],
            "geweke_z": float(z[j]),
            "geweke_p": float(p[j]),
        }
        logger.info("%s: mean %.4g, 95%% CI [%.4g, %.4g], Geweke p %.3f", name, post[:, j].mean(), lo, hi, p[j])
    summary = {
        "n_iter": int(chain.n_iter),
        "burn_in": int(chain.burn_in),
        "acceptance_rate": chain.acceptance_rate,
        "parameters": parameters,
    }
    if chain.noise.shape[1]:
        summary["noise_variance_mean"] = {
            name: float(v) for name, v in zip(NOISE_NAMES, chain.noise[chain.burn_in :].mean(axis=0))
        }
    return summary


def write_chain_csv(chain, path, header=None):
    frame = pd.DataFrame(chain.samples, columns=list(chain.parameter_names))
    frame.insert(0, "iteration", np.arange(chain.n_iter))
    noise = chain.noise if chain.noise.shape[1] else np.full((chain.n_iter, len(NOISE_NAMES)), np.nan)
    for name, column in zip(NOISE_NAMES, noise.T):
        frame[name] = column
    frame["logpost"] = chain.logpost
    frame["accepted"] = chain.accepted.astype(int)
    with open(path, "w") as stream:
        for key, value in (header or {}).items():
            stream.write(f"# {key}: {value}\n")
        frame.to_csv(stream, index=False)


def read_chain_csv(path, burn_in):
    frame = pd.read_csv(path, comment="#")
    noise = frame[list(NOISE_NAMES)].to_numpy()
    if np.all(np.isnan(noise)):
        noise = np.empty((len(frame), 0))
    return PosteriorChain(
        samples=frame[list(PARAMETER_NAMES)].to_numpy(),
        noise=noise,
        logpost=frame["logpost"].to_numpy(),
        accepted=frame["accepted"].to_numpy().astype(bool),
        burn_in=burn_in,
    )


@dataclass(frozen=True)
class UncertaintyBands:
    """2.5/50/97.5 percentile bands; each array has shape (3, n_coordinates)."""

    credible: np.ndarray
    prediction: np.ndarray
    observable_credible: np.ndarray
    observable_prediction: np.ndarray


def _model_noise_sd(variances, a_dia, n_samples=N_SAMPLES):
    """Per-coordinate noise standard deviation of the 140-entry model vector."""
    sd = np.sqrt(np.asarray(variances, dtype=float))
    sd_area = sd[..., 3:4] * a_dia / 100.0
    return np.concatenate(
        [np.repeat(sd[..., k : k + 1], n_samples, axis=-1) for k in range(3)]
        + [np.repeat(sd_area, n_samples, axis=-1)],
        axis=-1,
    )


def propagate_uncertainty(chain, forward, a_dia, n_tail=2000, noise=None, random_state=None, n_jobs=None):
    """Credible and prediction bands from the last ``n_tail`` draws.

    Parameters
    ----------
    chain : PosteriorChain

    forward : EmulatorForwardModel or PdeForwardModel

    a_dia : float
        MPA diastolic area; converts strain noise into area noise.

    n_tail : int, default=2000

    noise : NoiseModel, default=None
        Fixed variances used when the chain carries no variance draws.

    Returns
    -------
    bands : UncertaintyBands
    """
    rng = check_random_state(random_state)
    thetas, variances = chain.tail(n_tail)
    if variances.shape[1] == 0:
        if noise is None:
            raise DataValidationError("chain has no error variances; pass a NoiseModel")
        variances = np.tile(noise.variances, (n_tail, 1))

    model = np.asarray(forward.predict_many(thetas, n_jobs=n_jobs))
    noisy_model = model + rng.standard_normal(model.shape) * _model_noise_sd(variances, a_dia)

    observables = model_vector_to_observables(model, a_dia)
    obs_sd = np.sqrt(np.repeat(variances, SOURCE_SIZES, axis=1))
    noisy_observables = observables + rng.standard_normal(observables.shape) * obs_sd

    return UncertaintyBands(
        credible=np.percentile(model, PERCENTILES, axis=0),
        prediction=np.percentile(noisy_model, PERCENTILES, axis=0),
        observable_credible=np.percentile(observables, PERCENTILES, axis=0),
        observable_prediction=np.percentile(noisy_observables, PERCENTILES, axis=0),
    )


def make_synthetic_observations(model_vector, a_dia, noise_fraction=0.02, random_state=None):
    """Observations from a clean model vector plus Gaussian noise with standard
    deviation ``noise_fraction`` times each source's range."""
    rng = check_random_state(random_state)
    clean = model_vector_to_observables(model_vector, a_dia)
    pressure = np.asarray(model_vector)[:N_SAMPLES]
    ranges = [np.ptp(pressure)] + [np.ptp(clean[s]) for s in source_slices()[1:]]
    sd = noise_fraction * np.repeat(ranges, SOURCE_SIZES)
    noisy = clean + rng.standard_normal(clean.shape) * sd
    if noisy[0] <= noisy[1]:
        noisy[:2] = clean[:2]
    return ObservationVector.from_vector(noisy)


def posterior_mean_prediction(chain, forward):
    """Model vector at the posterior mean of the parameters."""
    return np.asarray(forward(chain.posterior_mean()), dtype=float)


def prediction_coverage(bands, observations):
    """Fraction of observed values inside the 95% prediction band."""
    y = observations.to_vector()
    lo, _, hi = bands.observable_prediction
    return float(np.mean((y >= lo) & (y <= hi)))
