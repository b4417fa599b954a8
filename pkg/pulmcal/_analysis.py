"""
Post-hoc statistics: flow split, two-sample tests on posteriors, correlation
of parameter changes with disease severity, and plot-ready data files.
"""
import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from ._exceptions import DataValidationError
from ._solver import PARAMETER_NAMES, SIGNALS

logger = logging.getLogger(__name__)

STRONG_CORRELATION = 0.8


@dataclass(frozen=True)
class TestResult:
    statistic: float
    pvalue: float


@dataclass(frozen=True)
class SeverityMetrics:
    """Flow split ``q_r`` (fraction of mean flow to the left lung) and mean
    pulmonary arterial pressure in mmHg."""

    flow_split: float
    mpap: float

    def as_dict(self):
        return {"flow_split": self.flow_split, "mpap": self.mpap}


def flow_split(q_lpa, q_rpa):
    """``mean(q_lpa) / (mean(q_lpa) + mean(q_rpa))``."""
    q_lpa = np.asarray(q_lpa, dtype=float)
    q_rpa = np.asarray(q_rpa, dtype=float)
    if q_lpa.shape != q_rpa.shape:
        raise DataValidationError("flow series must have the same length")
    total = q_lpa.mean() + q_rpa.mean()
    if not total > 0:
        raise DataValidationError("total mean flow must be positive")
    return float(q_lpa.mean() / total)


def _check_samples(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DataValidationError("empty sample")
    if a.size < 2 or b.size < 2:
        raise DataValidationError("samples need at least 2 values")
    return a, b


def ks_test(a, b):
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    a, b = _check_samples(a, b)
    result = stats.ks_2samp(a, b, method="asymp")
    return TestResult(float(result.statistic), float(result.pvalue))


def mannwhitney_u(a, b):
    """Two-sided Mann-Whitney U test, normal approximation with tie and
    continuity corrections.

    ``U`` counts pairs with ``a_i > b_j`` (ties count one half), so ``U = 0``
    when every value of ``a`` lies below every value of ``b``.
    """
    a, b = _check_samples(a, b)
    result = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    return TestResult(float(result.statistic), float(result.pvalue))


def pearson(x, y):
    """Sample correlation coefficient."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DataValidationError("series must have equal lengths")
    if x.size < 3:
        raise DataValidationError("correlation needs at least 3 pairs")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DataValidationError("zero variance")
    return float(np.clip(stats.pearsonr(x, y)[0], -1.0, 1.0))


def relative_change(baseline, disease):
    """``(disease - baseline) / |baseline|``."""
    baseline = np.asarray(baseline, dtype=float)
    if np.any(baseline == 0):
        raise DataValidationError("relative change from a zero baseline")
    return (np.asarray(disease, dtype=float) - baseline) / np.abs(baseline)


def severity_metrics(pressure, q_lpa, q_rpa):
    return SeverityMetrics(flow_split(q_lpa, q_rpa), float(np.mean(pressure)))


def compare_posteriors(samples_a, samples_b, names=PARAMETER_NAMES):
    """KS and Mann-Whitney comparison of two posteriors, one row per parameter."""
    samples_a = np.atleast_2d(samples_a)
    samples_b = np.atleast_2d(samples_b)
    rows = []
    for j, name in enumerate(names):
        ks = ks_test(samples_a[:, j], samples_b[:, j])
        mw = mannwhitney_u(samples_a[:, j], samples_b[:, j])
        rows.append(
            {
                "parameter": name,
                "ks_statistic": ks.statistic,
                "ks_pvalue": ks.pvalue,
                "mwu_statistic": mw.statistic,
                "mwu_pvalue": mw.pvalue,
            }
        )
    return pd.DataFrame(rows)


def correlation_report(parameter_changes, severity_changes):
    """Pearson correlation of every parameter change with every severity change.

    Parameters
    ----------
    parameter_changes : DataFrame
        One row per subject, one column per parameter.

    severity_changes : DataFrame
        Same rows, one column per severity metric.

    Returns
    -------
    report : DataFrame
        Columns ``parameter, metric, rho, strong``; ``strong`` marks ``|rho| > 0.8``.
    """
    if len(parameter_changes) != len(severity_changes):
        raise DataValidationError("parameter and severity tables must have the same rows")
    rows = []
    for parameter in parameter_changes.columns:
        for metric in severity_changes.columns:
            try:
                rho = pearson(parameter_changes[parameter], severity_changes[metric])
            except DataValidationError as exc:
                logger.warning("no correlation for %s vs %s: %s", parameter, metric, exc)
                rho = np.nan
            rows.append(
                {
                    "parameter": parameter,
                    "metric": metric,
                    "rho": rho,
                    "strong": bool(abs(rho) > STRONG_CORRELATION) if np.isfinite(rho) else False,
                }
            )
    return pd.DataFrame(rows)


def band_frame(bands, times, n_samples):
    """Long-format waveform bands of the 140-entry model vector."""
    rows = []
    for k, signal in enumerate(SIGNALS):
        cols = slice(k * n_samples, (k + 1) * n_samples)
        rows.append(
            pd.DataFrame(
                {
                    "signal": signal,
                    "t": times,
                    "credible_lo": bands.credible[0, cols],
                    "credible_mid": bands.credible[1, cols],
                    "credible_hi": bands.credible[2, cols],
                    "prediction_lo": bands.prediction[0, cols],
                    "prediction_mid": bands.prediction[1, cols],
                    "prediction_hi": bands.prediction[2, cols],
                }
            )
        )
    return pd.concat(rows, ignore_index=True)


def histogram_frame(samples, names=PARAMETER_NAMES, bins=30):
    rows = []
    for j, name in enumerate(names):
        counts, edges = np.histogram(samples[:, j], bins=bins, density=True)
        rows.append(
            pd.DataFrame(
                {"parameter": name, "bin_lo": edges[:-1], "bin_hi": edges[1:], "density": counts}
            )
        )
    return pd.concat(rows, ignore_index=True)


def write_plot_data(directory, histograms=None, bands=None, correlation=None, header=None):
    """Write plot-ready CSVs into ``directory``.

    Parameters
    ----------
    histograms, bands : dict of str to DataFrame, default=None
        Keyed by a label such as the prior kind.

    correlation : DataFrame, default=None
        Output of :func:`correlation_report`; written as a parameter-by-metric matrix.

    Returns
    -------
    paths : list of str
    """
    os.makedirs(directory, exist_ok=True)
    frames = {}
    for label, frame in (histograms or {}).items():
        frames[f"histogram_{label}.csv"] = frame
    for label, frame in (bands or {}).items():
        frames[f"waveform_bands_{label}.csv"] = frame
    if correlation is not None and len(correlation):
        frames["correlation_matrix.csv"] = correlation.pivot(
            index="parameter", columns="metric", values="rho"
        ).reset_index()
    paths = []
    for name, frame in frames.items():
        path = os.path.join(directory, name)
        with open(path, "w") as stream:
            for key, value in (header or {}).items():
                stream.write(f"# {key}: {value}\n")
            frame.to_csv(stream, index=False)
        paths.append(path)
    return paths
