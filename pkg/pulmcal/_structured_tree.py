"""
Asymmetric structured-tree outflow model.

A vessel in the tree is identified by the pair ``(g, h)``: the number of
alpha-scaled and beta-scaled bifurcations between it and the tree root. Its
radius, length and subtree impedance depend only on that pair, so the root
impedance is computed once per pair instead of once per vessel.
"""
import logging
from dataclasses import dataclass
from math import comb
from typing import Callable, Optional

import numpy as np
import pandas as pd

from ._exceptions import DataValidationError, NumericalError
from ._network import DEFAULT_MIN_RADIUS, FluidConstants

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScalingPair:
    alpha: float
    beta: float


@dataclass(frozen=True)
class StructuredTreeSpec:
    """Parameters of one outflow tree.

    Parameters
    ----------
    eta : float
        Murray exponent.

    area_ratio : float
        Offspring area ratio ``zeta`` in ``(0, 1]``.

    lrr : float
        Length-to-radius ratio.

    r_term : float
        Radius of the large vessel feeding the tree, in cm.

    stiffness : float
        Wall stiffness ``K`` in g/(cm s^2), shared with the large vessels.

    period : float
        Cardiac period in seconds.

    fluid : FluidConstants, default=FluidConstants()

    r_min : float, default=0.005
        Truncation radius in cm.

    viscosity_law : callable, default=None
        Maps a radius (cm) to a dynamic viscosity. ``None`` uses the constant
        ``fluid.viscosity``.
    """

    eta: float
    area_ratio: float
    lrr: float
    r_term: float
    stiffness: float
    period: float
    fluid: FluidConstants = FluidConstants()
    r_min: float = DEFAULT_MIN_RADIUS
    viscosity_law: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if not self.eta > 0:
            raise DataValidationError("eta must be positive")
        if not 0 < self.area_ratio <= 1:
            raise DataValidationError("area ratio must be in (0, 1]")
        if not self.lrr > 0:
            raise DataValidationError("lrr must be positive")
        if not (self.r_min > 0 and self.r_term > 0):
            raise DataValidationError("radii must be positive")
        if not (self.stiffness > 0 and self.period > 0):
            raise DataValidationError("stiffness and period must be positive")

    def viscosity(self, radius):
        if self.viscosity_law is None:
            return self.fluid.viscosity
        return self.viscosity_law(radius)


@dataclass(frozen=True)
class ImpedanceSpectrum:
    """Root impedance at ``omega_j = 2 pi j / T`` for ``j = 0..n_freq``."""

    omega: np.ndarray
    values: np.ndarray
    period: float

    @property
    def n_freq(self):
        return len(self.omega) - 1

    def to_frame(self):
        return pd.DataFrame(
            {
                "j": np.arange(len(self.omega)),
                "omega": self.omega,
                "re_z": self.values.real,
                "im_z": self.values.imag,
            }
        )


@dataclass(frozen=True)
class TreeDepthStats:
    max_alpha_depth: int
    vessel_count_bound: int
    n_classes: int


def alpha_beta(eta, area_ratio):
    """Offspring radius scaling factors for a Murray exponent and area ratio."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if not 0 < area_ratio <= 1:
        raise ValueError("area ratio must be in (0, 1]")
    alpha = (1.0 + area_ratio ** (eta / 2.0)) ** (-1.0 / eta)
    return ScalingPair(alpha, alpha * np.sqrt(area_ratio))


def vessel_radius(r_term, pair, g, h):
    if g < 0 or h < 0:
        raise ValueError("generation counts must be nonnegative")
    return r_term * pair.alpha**g * pair.beta**h


def vessel_length(radius, lrr):
    if not radius > 0:
        raise ValueError("radius must be positive")
    return radius * lrr


def _class_table(spec, pair):
    """``{g: largest h}`` for every alpha depth ``g`` holding at least one vessel."""
    table = {}
    g = 0
    while vessel_radius(spec.r_term, pair, g, 0) >= spec.r_min:
        h = 0
        while vessel_radius(spec.r_term, pair, g, h + 1) >= spec.r_min:
            h += 1
        table[g] = h
        g += 1
    return table


def tree_depth_stats(spec):
    """Depth and size of the truncated tree.

    ``max_alpha_depth`` is the smallest ``g`` with ``r_term * alpha**g < r_min``;
    ``vessel_count_bound`` counts individual vessels, ``n_classes`` the distinct
    ``(g, h)`` pairs.
    """
    pair = alpha_beta(spec.eta, spec.area_ratio)
    table = _class_table(spec, pair)
    return TreeDepthStats(
        max_alpha_depth=len(table),
        vessel_count_bound=sum(comb(g + h, g) for g, hmax in table.items() for h in range(hmax + 1)),
        n_classes=sum(hmax + 1 for hmax in table.values()),
    )


def _stable_tanh(x):
    # Re(x) >= 0 for the principal square root used below
    e = np.exp(-2.0 * x)
    return (1.0 - e) / (1.0 + e)


def segment_input_impedance(spec, radius, omega, z_load):
    """Input impedance of one tree vessel terminated by ``z_load``.

    Lossy transmission line with series impedance ``i w rho / A + 8 mu / (pi r^4)``
    and shunt admittance ``i w 2 A / K`` per unit length. At ``w = 0`` this is
    the Poiseuille resistance added to the load.
    """
    omega = np.asarray(omega, dtype=float)
    z_load = np.broadcast_to(np.asarray(z_load, dtype=complex), omega.shape)
    length = vessel_length(radius, spec.lrr)
    area = np.pi * radius**2
    resistance = 8.0 * spec.viscosity(radius) / (np.pi * radius**4)

    out = np.empty(omega.shape, dtype=complex)
    steady = omega == 0
    out[steady] = z_load[steady] + resistance * length

    w = omega[~steady]
    z_series = 1j * w * spec.fluid.density / area + resistance
    y_shunt = 1j * w * 2.0 * area / spec.stiffness
    z_char = np.sqrt(z_series / y_shunt)
    t = _stable_tanh(np.sqrt(z_series * y_shunt) * length)
    zl = z_load[~steady]
    out[~steady] = z_char * (zl + z_char * t) / (z_char + zl * t)
    return out


def _parallel(z1, z2):
    return z1 * z2 / (z1 + z2)


class StructuredTree:
    """Structured tree built from a :class:`StructuredTreeSpec`.

    Parameters
    ----------
    spec : StructuredTreeSpec

    Attributes
    ----------
    pair : ScalingPair

    classes : dict
        ``{g: largest h}`` of the vessel classes present.
    """

    def __init__(self, spec):
        if spec.r_term < spec.r_min:
            raise DataValidationError("tree vanishes below truncation radius")
        self.spec = spec
        self.pair = alpha_beta(spec.eta, spec.area_ratio)
        self.classes = _class_table(spec, self.pair)
        logger.debug(
            "structured tree: %d classes, alpha %.4f, beta %.4f",
            sum(h + 1 for h in self.classes.values()),
            self.pair.alpha,
            self.pair.beta,
        )

    def exists(self, g, h):
        return g in self.classes and h <= self.classes[g]

    def input_impedance(self, omega):
        """Root impedance at the angular frequencies ``omega``, one class at a time."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        memo = {}
        zero = np.zeros(omega.shape, dtype=complex)
        for g in sorted(self.classes, reverse=True):
            for h in range(self.classes[g], -1, -1):
                if self.exists(g + 1, h) and self.exists(g, h + 1):
                    load = _parallel(memo[g + 1, h], memo[g, h + 1])
                else:
                    load = zero
                radius = vessel_radius(self.spec.r_term, self.pair, g, h)
                memo[g, h] = segment_input_impedance(self.spec, radius, omega, load)
            memo = {key: value for key, value in memo.items() if key[0] == g}
        return memo[0, 0]


def root_impedance_spectrum(spec, n_freq):
    """Root impedance at ``omega_j = 2 pi j / T``, ``j = 0..n_freq``."""
    if n_freq < 1:
        raise ValueError("n_freq must be at least 1")
    omega = 2.0 * np.pi * np.arange(n_freq + 1) / spec.period
    values = StructuredTree(spec).input_impedance(omega)
    if not (values[0].real > 0 and np.all(np.isfinite(values))):
        raise NumericalError("structured tree produced an invalid impedance spectrum")
    values[0] = values[0].real
    return ImpedanceSpectrum(omega, values, spec.period)


def impedance_kernel_time(spectrum, n_time, residue_tol=1e-10):
    """Time-domain impedance kernel on ``n_time`` points of one period.

    ``p_n = dt * sum_k z_k q_{n-k}`` reproduces ``P(w_j) = Z(w_j) Q(w_j)``
    for periodic flows.
    """
    if n_time < 2 or n_time % 2:
        raise ValueError("n_time must be even")
    half = n_time // 2
    if len(spectrum.values) < half + 1:
        raise DataValidationError(
            f"missing frequencies: need {half + 1}, spectrum has {len(spectrum.values)}"
        )
    z = np.asarray(spectrum.values[: half + 1], dtype=complex).copy()
    z[0] = z[0].real
    z[half] = z[half].real
    full = np.concatenate([z, np.conj(z[half - 1 : 0 : -1])])

    kernel = np.fft.ifft(full) / (spectrum.period / n_time)
    residue = np.max(np.abs(kernel.imag))
    scale = np.linalg.norm(kernel.real)
    if residue > residue_tol * max(scale, np.finfo(float).tiny):
        raise NumericalError(f"impedance kernel is not real (residue {residue:.3g})")
    return kernel.real.copy()


def write_spectrum_csv(spectrum, path):
    spectrum.to_frame().to_csv(path, index=False)
