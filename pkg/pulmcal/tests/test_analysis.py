import logging
import os

import pytest
import numpy as np
import pandas as pd
from numpy.testing import assert_allclose

from pulmcal import (
    DataValidationError,
    compare_posteriors,
    correlation_report,
    flow_split,
    ks_test,
    mannwhitney_u,
    pearson,
    relative_change,
    severity_metrics,
    write_plot_data,
)
from pulmcal._analysis import band_frame, histogram_frame
from pulmcal._calibration import UncertaintyBands


def test_flow_split():
    assert flow_split([40.0, 40.0], [60.0, 60.0]) == pytest.approx(0.4)
    assert flow_split(np.full(35, 1.0), np.full(35, 1.0)) == 0.5
    with pytest.raises(DataValidationError):
        flow_split([1.0, 2.0], [1.0])
    with pytest.raises(DataValidationError):
        flow_split([0.0], [0.0])


def test_severity_metrics():
    metrics = severity_metrics(np.array([10.0, 20.0, 30.0]), [3.0, 3.0, 3.0], [1.0, 1.0, 1.0])
    assert metrics.as_dict() == {"flow_split": 0.75, "mpap": 20.0}


def test_ks_test():
    a = np.arange(10.0)
    same = ks_test(a, a)
    assert same.statistic == 0.0
    assert same.pvalue == pytest.approx(1.0)

    apart = ks_test(a, a + 100)
    assert apart.statistic == 1.0
    assert apart.pvalue < 1e-3

    with pytest.raises(DataValidationError, match="empty"):
        ks_test([], a)
    with pytest.raises(DataValidationError):
        ks_test([1.0], a)


def test_mannwhitney_u():
    low = mannwhitney_u([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    assert low.statistic == 0.0
    high = mannwhitney_u([4.0, 5.0, 6.0], [1.0, 2.0, 3.0])
    assert high.statistic == 9.0
    assert low.pvalue == pytest.approx(high.pvalue)
    assert 0.0 < low.pvalue < 0.1

    tied = mannwhitney_u([1.0, 1.0, 2.0], [1.0, 2.0, 2.0])
    assert tied.statistic == pytest.approx(3.0)


def test_pearson():
    x = np.arange(5.0)
    assert pearson(x, 2 * x + 1) == pytest.approx(1.0)
    assert pearson(x, -x) == pytest.approx(-1.0)
    assert -1.0 <= pearson(x, np.array([1.0, 0.0, 3.0, 2.0, 5.0])) <= 1.0

    with pytest.raises(DataValidationError, match="equal lengths"):
        pearson(x, x[:-1])
    with pytest.raises(DataValidationError, match="at least 3"):
        pearson(x[:2], x[:2])
    with pytest.raises(DataValidationError, match="zero variance"):
        pearson(x, np.ones(5))


def test_relative_change():
    assert relative_change(2.0, 3.0) == pytest.approx(0.5)
    assert relative_change(-2.0, -1.0) == pytest.approx(0.5)
    assert_allclose(relative_change([1.0, 4.0], [2.0, 2.0]), [1.0, -0.5])
    with pytest.raises(DataValidationError, match="zero baseline"):
        relative_change([1.0, 0.0], [1.0, 1.0])


def test_compare_posteriors():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(500, 4))
    b = a.copy()
    b[:, 3] += 3.0
    report = compare_posteriors(a, b)
    assert report.columns.tolist() == ["parameter", "ks_statistic", "ks_pvalue", "mwu_statistic", "mwu_pvalue"]
    assert report["parameter"].tolist() == ["eta_left", "lrr_left", "eta_right", "lrr_right"]
    assert_allclose(report["ks_statistic"][:3], 0.0)
    assert report["ks_pvalue"][3] < 1e-10
    assert report["mwu_pvalue"][3] < 1e-10


def test_correlation_report(caplog):
    changes = pd.DataFrame({"lrr_left": [0.1, 0.2, 0.3, 0.4, 0.5], "eta_left": [1.0, -1.0, 1.0, -1.0, 1.0]})
    severity = pd.DataFrame({"mpap": [0.2, 0.4, 0.6, 0.8, 1.0], "flow_split": [0.0] * 5})
    with caplog.at_level(logging.WARNING, logger="pulmcal._analysis"):
        report = correlation_report(changes, severity)
    assert report.columns.tolist() == ["parameter", "metric", "rho", "strong"]
    assert len(report) == 4

    row = report[(report.parameter == "lrr_left") & (report.metric == "mpap")].iloc[0]
    assert row.rho == pytest.approx(1.0)
    assert row.strong
    row = report[(report.parameter == "eta_left") & (report.metric == "mpap")].iloc[0]
    assert abs(row.rho) < 0.8
    assert not row.strong

    flat = report[report.metric == "flow_split"]
    assert flat.rho.isna().all()
    assert not flat.strong.any()
    assert "zero variance" in caplog.text

    with pytest.raises(DataValidationError):
        correlation_report(changes, severity.iloc[:3])


def test_plot_frames():
    samples = np.random.default_rng(1).uniform(size=(1000, 4))
    hist = histogram_frame(samples, bins=10)
    assert len(hist) == 40
    for _, group in hist.groupby("parameter"):
        widths = group.bin_hi - group.bin_lo
        assert (group.density * widths).sum() == pytest.approx(1.0)

    base = np.linspace(0.0, 1.0, 140)
    bands = UncertaintyBands(
        credible=np.vstack([base - 0.1, base, base + 0.1]),
        prediction=np.vstack([base - 0.2, base, base + 0.2]),
        observable_credible=np.zeros((3, 107)),
        observable_prediction=np.zeros((3, 107)),
    )
    frame = band_frame(bands, np.arange(35) * 0.01, 35)
    assert len(frame) == 140
    assert frame.signal.unique().tolist() == ["pressure", "lpa_flow", "rpa_flow", "area"]
    assert np.all(frame.prediction_lo <= frame.credible_lo)


def test_write_plot_data(tmp_path):
    hist = histogram_frame(np.random.default_rng(2).normal(size=(200, 4)), bins=5)
    correlation = pd.DataFrame(
        {
            "parameter": ["eta_left", "eta_left", "lrr_left", "lrr_left"],
            "metric": ["mpap", "flow_split", "mpap", "flow_split"],
            "rho": [0.9, -0.1, 0.3, np.nan],
            "strong": [True, False, False, False],
        }
    )
    directory = tmp_path / "plots"
    paths = write_plot_data(directory, histograms={"gaussian": hist}, correlation=correlation, header={"seed": 7})
    assert sorted(os.path.basename(p) for p in paths) == ["correlation_matrix.csv", "histogram_gaussian.csv"]
    for path in paths:
        with open(path) as stream:
            assert stream.readline() == "# seed: 7\n"

    matrix = pd.read_csv(directory / "correlation_matrix.csv", comment="#")
    assert matrix.columns.tolist() == ["parameter", "flow_split", "mpap"]
    assert matrix.set_index("parameter").loc["eta_left", "mpap"] == 0.9

    assert write_plot_data(tmp_path / "empty") == []
