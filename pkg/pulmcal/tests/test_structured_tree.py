import pytest
import numpy as np
from numpy.testing import assert_allclose

from pulmcal import (
    DataValidationError,
    FluidConstants,
    StructuredTree,
    StructuredTreeSpec,
    alpha_beta,
    impedance_kernel_time,
    root_impedance_spectrum,
    tree_depth_stats,
    write_spectrum_csv,
)
from pulmcal._structured_tree import (
    ImpedanceSpectrum,
    ScalingPair,
    segment_input_impedance,
    vessel_length,
    vessel_radius,
)
from _tree_pure import poiseuille_impedance, pure_impedance

K = 170 * 1333.22


@pytest.fixture
def spec():
    return StructuredTreeSpec(eta=2.13, area_ratio=0.6, lrr=10.7, r_term=0.05, stiffness=K, period=1.0)


def test_alpha_beta():
    pair = alpha_beta(2.0, 1.0)
    assert_allclose([pair.alpha, pair.beta], [2**-0.5, 2**-0.5], rtol=1e-14)

    pair = alpha_beta(2.13, 0.6)
    assert pair.alpha == pytest.approx(0.8066, abs=5e-4)
    assert pair.beta == pytest.approx(0.6248, abs=5e-4)
    assert pair.beta == pytest.approx(pair.alpha * np.sqrt(0.6), rel=1e-15)
    assert 0 < pair.beta < pair.alpha < 1

    with pytest.raises(ValueError):
        alpha_beta(0.0, 0.6)
    with pytest.raises(ValueError):
        alpha_beta(2.0, 1.5)


def test_murray_law_at_every_bifurcation():
    rng = np.random.default_rng(0)
    for _ in range(100):
        eta = rng.uniform(1.5, 3.0)
        zeta = rng.uniform(0.05, 1.0)
        pair = alpha_beta(eta, zeta)
        g, h = rng.integers(0, 6, size=2)
        r_p = vessel_radius(1.0, pair, g, h)
        r_1 = vessel_radius(1.0, pair, g + 1, h)
        r_2 = vessel_radius(1.0, pair, g, h + 1)
        assert r_p**eta == pytest.approx(r_1**eta + r_2**eta, rel=1e-12)


def test_radius_and_length():
    pair = ScalingPair(0.8, 0.6)
    assert vessel_radius(0.05, pair, 0, 0) == 0.05
    assert vessel_radius(0.05, pair, 1, 1) == pytest.approx(0.024)
    assert vessel_radius(0.05, pair, 2, 0) == pytest.approx(0.032)
    assert vessel_length(0.01, 10) == pytest.approx(0.1)
    assert vessel_length(0.005, 70) == pytest.approx(0.35)
    assert vessel_length(0.02, 2) == pytest.approx(0.04)
    with pytest.raises(ValueError):
        vessel_radius(0.05, pair, -1, 0)


def test_depth_stats_symmetric_tree():
    # zeta = 1 makes alpha = beta = 0.8
    eta = np.log(2.0) / np.log(1.25)
    spec = StructuredTreeSpec(eta=eta, area_ratio=1.0, lrr=10, r_term=0.05, stiffness=K, period=1.0)
    stats = tree_depth_stats(spec)
    assert stats.max_alpha_depth == 11
    assert stats.n_classes == 66
    assert stats.vessel_count_bound == sum(2**d for d in range(11))

    tree = StructuredTree(spec)
    for g in range(12):
        for h in range(12):
            assert tree.exists(g, h) == (g + h <= 10)


def test_tree_below_truncation_radius():
    spec = StructuredTreeSpec(eta=2.13, area_ratio=0.6, lrr=10, r_term=0.004, stiffness=K, period=1.0)
    with pytest.raises(DataValidationError, match="tree vanishes"):
        StructuredTree(spec)


def test_invalid_spec():
    with pytest.raises(DataValidationError):
        StructuredTreeSpec(eta=2.13, area_ratio=0.0, lrr=10, r_term=0.05, stiffness=K, period=1.0)
    with pytest.raises(DataValidationError):
        StructuredTreeSpec(eta=2.13, area_ratio=0.6, lrr=-1, r_term=0.05, stiffness=K, period=1.0)


def test_single_vessel_steady_impedance():
    # both offspring fall below r_min, so the tree is one vessel with zero load
    spec = StructuredTreeSpec(
        eta=2.13, area_ratio=0.6, lrr=10, r_term=0.1, stiffness=K, period=1.0, r_min=0.09
    )
    assert tree_depth_stats(spec).n_classes == 1
    spectrum = root_impedance_spectrum(spec, 4)
    assert spectrum.values[0].imag == 0
    assert spectrum.values[0].real == pytest.approx(8 * 0.03 * 10 / (np.pi * 0.1**3), rel=1e-12)
    assert spectrum.values[0].real == pytest.approx(763.94, rel=1e-5)


def test_steady_impedance_matches_resistance_network():
    rng = np.random.default_rng(1)
    for _ in range(20):
        spec = StructuredTreeSpec(
            eta=rng.uniform(1.5, 3.0),
            area_ratio=0.6,
            lrr=rng.uniform(2.0, 70.0),
            r_term=0.05,
            stiffness=K,
            period=1.0,
        )
        z0 = root_impedance_spectrum(spec, 1).values[0].real
        assert z0 == pytest.approx(poiseuille_impedance(spec), rel=1e-8)


def test_memoized_tree_matches_vessel_recursion(spec):
    omega = 2 * np.pi * np.arange(6) / spec.period
    memo = StructuredTree(spec).input_impedance(omega)
    pure = np.array([pure_impedance(spec, w) for w in omega])
    assert_allclose(memo, pure, rtol=1e-10)


def test_viscosity_law_reaches_every_vessel(spec):
    law = lambda r: 0.03 * (1 + 0.01 / r)  # noqa: E731
    thick = StructuredTreeSpec(**{**spec.__dict__, "viscosity_law": law})
    omega = np.array([0.0, 2 * np.pi])
    memo = StructuredTree(thick).input_impedance(omega)
    pure = np.array([pure_impedance(thick, w) for w in omega])
    assert_allclose(memo, pure, rtol=1e-10)
    assert memo[0].real > StructuredTree(spec).input_impedance(omega)[0].real


def test_identical_offspring_load_is_half():
    spec = StructuredTreeSpec(eta=2.0, area_ratio=1.0, lrr=10, r_term=0.05, stiffness=K, period=1.0)
    tree = StructuredTree(spec)
    omega = 2 * np.pi * np.arange(4)
    child = StructuredTreeSpec(**{**spec.__dict__, "r_term": spec.r_term * tree.pair.alpha})
    z_child = StructuredTree(child).input_impedance(omega)
    expected = segment_input_impedance(spec, spec.r_term, omega, z_child / 2)
    assert_allclose(tree.input_impedance(omega), expected, rtol=1e-12)


def test_kernel_is_real_and_preserves_mean(spec):
    n_time = 256
    spectrum = root_impedance_spectrum(spec, n_time // 2)
    z = impedance_kernel_time(spectrum, n_time)
    assert z.dtype == float
    dt = spec.period / n_time
    assert dt * z.sum() == pytest.approx(spectrum.values[0].real, rel=1e-10)

    t = np.arange(n_time) * dt
    q = 10 + 5 * np.sin(2 * np.pi * t / spec.period)
    p = dt * np.real(np.fft.ifft(np.fft.fft(z) * np.fft.fft(q)))
    assert p.mean() == pytest.approx(spectrum.values[0].real * q.mean(), rel=1e-10)

    # first harmonic of the pressure is Z(omega_1) times the flow harmonic
    p_hat = np.fft.fft(p)[1]
    q_hat = np.fft.fft(q)[1]
    assert_allclose(p_hat / q_hat, spectrum.values[1], rtol=1e-8)


def test_kernel_errors(spec):
    spectrum = root_impedance_spectrum(spec, 8)
    with pytest.raises(ValueError):
        impedance_kernel_time(spectrum, 7)
    with pytest.raises(DataValidationError, match="missing frequencies"):
        impedance_kernel_time(spectrum, 32)


def test_spectrum_csv(spec, tmp_path):
    spectrum = root_impedance_spectrum(spec, 4)
    path = tmp_path / "spectrum.csv"
    write_spectrum_csv(spectrum, path)
    text = path.read_text().splitlines()
    assert text[0] == "j,omega,re_z,im_z"
    assert len(text) == 6


def test_spectrum_frame():
    spectrum = ImpedanceSpectrum(np.array([0.0, 1.0]), np.array([2.0 + 0j, 1.0 - 1j]), 1.0)
    frame = spectrum.to_frame()
    assert spectrum.n_freq == 1
    assert frame["im_z"].tolist() == [0.0, -1.0]


def test_fluid_density_enters_inertance(spec):
    heavy = StructuredTreeSpec(**{**spec.__dict__, "fluid": FluidConstants(density=2.06)})
    omega = np.array([0.0, 2 * np.pi])
    light_z = StructuredTree(spec).input_impedance(omega)
    heavy_z = StructuredTree(heavy).input_impedance(omega)
    assert heavy_z[0] == pytest.approx(light_z[0], rel=1e-12)
    assert heavy_z[1] != pytest.approx(light_z[1], rel=1e-6)
