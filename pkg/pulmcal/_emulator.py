"""
Gaussian-process emulator of the pulse-wave solver.

Outputs are min-max scaled, projected on a truncated PCA basis and each
principal-component score is emulated by an independent zero-mean Gaussian
process with a Matern 5/2 kernel.
"""
import logging
from dataclasses import dataclass

import joblib
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import qmc
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.decomposition import PCA
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel
from sklearn.preprocessing import MinMaxScaler
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._exceptions import DataValidationError, TrainingError
from ._solver import N_SAMPLES, PARAMETER_BOUNDS, SIGNALS
from ._version import __version__

logger = logging.getLogger(__name__)

EMULATOR_FORMAT_VERSION = 1
NONPHYSIOLOGICAL_PRESSURE = 120.0


@dataclass(frozen=True)
class DesignMatrix:
    theta: np.ndarray
    bounds: np.ndarray


@dataclass(frozen=True)
class PcaReduction:
    """Truncated principal-component basis of the scaled outputs.

    Attributes
    ----------
    mean : ndarray, shape (n_outputs,)

    basis : ndarray, shape (n_components, n_outputs)
        Orthonormal rows, by decreasing variance.

    scores : ndarray, shape (n_samples, n_components)
        Scores of the training outputs.

    explained_variance_ratio : ndarray, shape (n_components,)
    """

    mean: np.ndarray
    basis: np.ndarray
    scores: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self):
        return self.basis.shape[0]

    def transform(self, Y):
        return (np.asarray(Y) - self.mean) @ self.basis.T

    def inverse_transform(self, scores):
        return np.asarray(scores) @ self.basis + self.mean


@dataclass(frozen=True)
class EmulatorPrediction:
    """Emulator output for one parameter vector.

    ``output_std`` propagates the score variances through the PCA basis and
    the output scaling, ignoring truncated components.
    """

    mean: np.ndarray
    score_variances: np.ndarray
    output_std: np.ndarray
    extrapolated: bool


def lhs_design(bounds=PARAMETER_BOUNDS, n=500, seed=None):
    """Latin hypercube sample of ``n`` points inside ``bounds``.

    Parameters
    ----------
    bounds : array-like, shape (n_params, 2)

    n : int

    seed : int, default=None

    Returns
    -------
    design : DesignMatrix
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise DataValidationError("bounds must have shape (n_params, 2)")
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise DataValidationError("every lower bound must be below its upper bound")
    if n < 2:
        raise DataValidationError("a design needs at least 2 points")
    sampler = qmc.LatinHypercube(d=bounds.shape[0], seed=np.random.default_rng(seed))
    theta = qmc.scale(sampler.random(n), bounds[:, 0], bounds[:, 1])
    return DesignMatrix(theta, bounds)


def fit_pca(Y, variance_target=0.999, n_fixed=None):
    """Principal components of ``Y``.

    ``n_fixed`` components when given, otherwise the smallest count whose
    cumulative explained variance reaches ``variance_target``.
    """
    Y = check_array(Y)
    n_samples = Y.shape[0]
    pca = PCA(svd_solver="full").fit(Y)
    ratio = pca.explained_variance_ratio_
    variance = pca.explained_variance_
    rank = int(np.sum(variance > variance[0] * 1e-12)) if variance[0] > 0 else 0

    if n_fixed is not None:
        n_components = int(n_fixed)
        if n_components > rank:
            raise DataValidationError(
                f"cannot keep {n_components} components of rank-{rank} data"
            )
    else:
        if not 0 < variance_target <= 1:
            raise DataValidationError("variance_target must be in (0, 1]")
        cumulative = np.cumsum(ratio)
        n_components = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
        n_components = min(n_components, len(ratio))
    if n_samples <= n_components:
        raise DataValidationError("need more samples than principal components")

    basis = pca.components_[:n_components]
    reduction = PcaReduction(
        mean=pca.mean_,
        basis=basis,
        scores=(Y - pca.mean_) @ basis.T,
        explained_variance_ratio=ratio[:n_components],
    )
    logger.info(
        "PCA keeps %d components explaining %.5f of the variance",
        n_components,
        ratio[:n_components].sum(),
    )
    return reduction


def matern52(x, x_prime, variance, lengthscales):
    """Matern 5/2 covariance of two points."""
    d = np.sqrt(np.sum(((np.asarray(x) - np.asarray(x_prime)) / np.asarray(lengthscales)) ** 2))
    s5d = np.sqrt(5.0) * d
    return variance * (1.0 + s5d + 5.0 * d**2 / 3.0) * np.exp(-s5d)


class AdamOptimizer:
    """Adam descent in log-hyperparameter space, usable as a
    ``GaussianProcessRegressor`` optimizer.

    Parameters
    ----------
    n_iter : int, default=1000

    learning_rate : float, default=0.1

    Attributes
    ----------
    initial_loss_ : float
        Negative log marginal likelihood at the initial hyperparameters.

    final_loss_ : float
        Lowest negative log marginal likelihood reached.
    """

    def __init__(self, n_iter=1000, learning_rate=0.1, beta1=0.9, beta2=0.999, eps=1e-8):
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def __call__(self, obj_func, initial_theta, bounds):
        theta = np.array(initial_theta, dtype=float)
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        best_theta, best_loss = theta.copy(), np.inf
        for t in range(1, self.n_iter + 1):
            loss, grad = obj_func(theta, eval_gradient=True)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingError(f"non-finite loss at iteration {t}")
            if t == 1:
                self.initial_loss_ = float(loss)
            if loss < best_loss:
                best_theta, best_loss = theta.copy(), float(loss)
            m = self.beta1 * m + (1 - self.beta1) * grad
            v = self.beta2 * v + (1 - self.beta2) * grad**2
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            theta = np.clip(
                theta - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps),
                bounds[:, 0],
                bounds[:, 1],
            )
        loss = obj_func(theta, eval_gradient=False)
        if np.isfinite(loss) and loss < best_loss:
            best_theta, best_loss = theta, float(loss)
        self.final_loss_ = best_loss
        return best_theta, best_loss


class MaternGaussianProcess(RegressorMixin, BaseEstimator):
    """Zero-mean Gaussian process with a Matern 5/2 kernel and Adam-trained
    hyperparameters.

    Parameters
    ----------
    lengthscale : float, default=0.5
        Initial lengthscale of every input dimension.

    signal_variance : float, default=1.0
        Initial signal variance.

    noise_variance : float, default=1e-2
        Initial noise variance; floored at ``noise_floor``.

    noise_floor : float, default=1e-8

    jitter : float, default=1e-6
        Added to the kernel diagonal.

    n_iter : int, default=1000

    learning_rate : float, default=0.1

    Attributes
    ----------
    gp_ : GaussianProcessRegressor
        The fitted regressor; holds the Cholesky factor of the training kernel.

    optimizer_ : AdamOptimizer
        Holds ``initial_loss_`` and ``final_loss_``.

    n_features_in_ : int
    """

    def __init__(
        self,
        lengthscale=0.5,
        signal_variance=1.0,
        noise_variance=1e-2,
        noise_floor=1e-8,
        jitter=1e-6,
        n_iter=1000,
        learning_rate=0.1,
    ):
        self.lengthscale = lengthscale
        self.signal_variance = signal_variance
        self.noise_variance = noise_variance
        self.noise_floor = noise_floor
        self.jitter = jitter
        self.n_iter = n_iter
        self.learning_rate = learning_rate

    def _kernel(self, n_features):
        return ConstantKernel(self.signal_variance, (1e-6, 1e6)) * Matern(
            length_scale=np.full(n_features, self.lengthscale),
            length_scale_bounds=(1e-3, 1e3),
            nu=2.5,
        ) + WhiteKernel(self.noise_variance, (self.noise_floor, 1e2))

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[0] < 2:
            raise DataValidationError("a Gaussian process needs at least 2 training points")
        self.n_features_in_ = X.shape[1]
        self.optimizer_ = AdamOptimizer(self.n_iter, self.learning_rate)
        self.gp_ = GaussianProcessRegressor(
            kernel=self._kernel(X.shape[1]),
            alpha=self.jitter,
            optimizer=self.optimizer_,
            normalize_y=False,
            random_state=0,
        ).fit(X, y)
        return self

    @property
    def kernel_(self):
        return self.gp_.kernel_

    @property
    def hyperparameters_(self):
        """``(signal variance, lengthscales, noise variance)`` of the fitted kernel."""
        params = self.gp_.kernel_.get_params()
        return (
            float(params["k1__k1__constant_value"]),
            np.atleast_1d(params["k1__k2__length_scale"]).astype(float),
            float(params["k2__noise_level"]),
        )

    def predict(self, X, return_std=False):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                "The number of features in predict is different from the number of features in fit."
            )
        return self.gp_.predict(X, return_std=return_std)


def train_gp(inputs, targets, n_iter=1000, learning_rate=0.1, **kwargs):
    """Fit one :class:`MaternGaussianProcess` and log its likelihood progress."""
    gp = MaternGaussianProcess(n_iter=n_iter, learning_rate=learning_rate, **kwargs)
    gp.fit(inputs, targets)
    variance, lengthscales, noise = gp.hyperparameters_
    logger.info(
        "GP trained: NLL %.4g -> %.4g, variance %.3g, lengthscales %s, noise %.3g",
        gp.optimizer_.initial_loss_,
        gp.optimizer_.final_loss_,
        variance,
        np.array2string(lengthscales, precision=3),
        noise,
    )
    return gp


class PcaGpEmulator(RegressorMixin, BaseEstimator):
    """Emulator mapping parameter vectors to the 140-entry model vector.

    Parameters
    ----------
    n_components : int, default=20
        Number of principal components. ``None`` selects the count from
        ``variance_target``.

    variance_target : float, default=0.999

    n_iter : int, default=1000
        Adam iterations per Gaussian process.

    learning_rate : float, default=0.1

    bounds : array-like of shape (n_params, 2), default=None
        Training box used for the extrapolation flag. ``None`` uses the range
        of the training inputs.

    n_jobs : int, default=None
        The number of Gaussian processes trained in parallel. ``None`` means 1
        unless in a :obj:`joblib.parallel_backend` context.

    Attributes
    ----------
    input_scaler_ : MinMaxScaler

    output_scaler_ : MinMaxScaler

    pca_ : PcaReduction

    gps_ : list of MaternGaussianProcess
        One per principal component.

    bounds_ : ndarray, shape (n_params, 2)

    n_features_in_ : int

    n_outputs_ : int
    """

    def __init__(
        self,
        n_components=20,
        variance_target=0.999,
        n_iter=1000,
        learning_rate=0.1,
        bounds=None,
        n_jobs=None,
    ):
        self.n_components = n_components
        self.variance_target = variance_target
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.bounds = bounds
        self.n_jobs = n_jobs

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y, multi_output=True)
        if Y.ndim == 1:
            Y = Y[:, None]
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        if self.bounds is None:
            self.bounds_ = np.column_stack([X.min(axis=0), X.max(axis=0)])
        else:
            self.bounds_ = np.asarray(self.bounds, dtype=float)

        self.input_scaler_ = MinMaxScaler().fit(self.bounds_.T)
        self.output_scaler_ = MinMaxScaler().fit(Y)
        Xs = self.input_scaler_.transform(X)
        Ys = self.output_scaler_.transform(Y)

        self.pca_ = fit_pca(Ys, self.variance_target, self.n_components)
        self.gps_ = Parallel(n_jobs=self.n_jobs)(
            delayed(train_gp)(Xs, self.pca_.scores[:, i], self.n_iter, self.learning_rate)
            for i in range(self.pca_.n_components)
        )
        return self

    def _predict_scores(self, X):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                "The number of features in predict is different from the number of features in fit."
            )
        Xs = self.input_scaler_.transform(X)
        means, stds = zip(*(gp.predict(Xs, return_std=True) for gp in self.gps_))
        return X, np.column_stack(means), np.column_stack(stds) ** 2

    def predict(self, X):
        """Mean model vectors, shape (n_samples, n_outputs)."""
        _, scores, _ = self._predict_scores(X)
        return self.output_scaler_.inverse_transform(self.pca_.inverse_transform(scores))

    def predict_with_uncertainty(self, X):
        """Means, score variances, output standard deviations and extrapolation flags."""
        X, scores, variances = self._predict_scores(X)
        mean = self.output_scaler_.inverse_transform(self.pca_.inverse_transform(scores))
        scale = self.output_scaler_.data_range_
        scale = np.where(scale == 0, 1.0, scale)
        output_std = np.sqrt(variances @ self.pca_.basis**2) * scale
        extrapolated = np.any((X < self.bounds_[:, 0]) | (X > self.bounds_[:, 1]), axis=1)
        return mean, variances, output_std, extrapolated


def predict(model, theta):
    """Emulate one parameter vector.

    Returns
    -------
    prediction : EmulatorPrediction
    """
    theta = np.asarray(theta, dtype=float).reshape(1, -1)
    if not np.all(np.isfinite(theta)):
        raise DataValidationError("parameter vector must be finite")
    mean, variances, output_std, extrapolated = model.predict_with_uncertainty(theta)
    if extrapolated[0]:
        logger.warning("emulator queried outside its training box at %s", theta[0].tolist())
    return EmulatorPrediction(mean[0], variances[0], output_std[0], bool(extrapolated[0]))


def flag_nonphysiological(Y, converged=None, max_pressure=NONPHYSIOLOGICAL_PRESSURE):
    """Rows with pressure above ``max_pressure`` mmHg, non-finite values or no convergence."""
    Y = np.asarray(Y, dtype=float)
    flags = ~np.all(np.isfinite(Y), axis=1)
    with np.errstate(invalid="ignore"):
        flags |= np.any(Y[:, :N_SAMPLES] > max_pressure, axis=1)
    if converged is not None:
        flags |= ~np.asarray(converged, dtype=bool)
    return flags


def emulator_validation(model, theta_test, Y_test, n_samples=N_SAMPLES):
    """Per-signal relative RMSE and log10 MSE on held-out simulations."""
    Y_test = check_array(Y_test)
    Y_pred = model.predict(theta_test)
    rows = []
    for i, signal in enumerate(SIGNALS):
        cols = slice(i * n_samples, (i + 1) * n_samples)
        error = Y_pred[:, cols] - Y_test[:, cols]
        mse = float(np.mean(error**2))
        rows.append(
            {
                "signal": signal,
                "relative_rmse": float(np.linalg.norm(error) / np.linalg.norm(Y_test[:, cols])),
                "log10_mse": float(np.log10(mse)) if mse > 0 else -np.inf,
            }
        )
    return pd.DataFrame(rows)


def save_emulator(model, path):
    check_is_fitted(model)
    joblib.dump(
        {"format_version": EMULATOR_FORMAT_VERSION, "pulmcal_version": __version__, "model": model},
        path,
    )


def load_emulator(path):
    bundle = joblib.load(path)
    if not isinstance(bundle, dict) or bundle.get("format_version") != EMULATOR_FORMAT_VERSION:
        raise DataValidationError(f"{path} is not a pulmcal emulator bundle of format {EMULATOR_FORMAT_VERSION}")
    return bundle["model"]

