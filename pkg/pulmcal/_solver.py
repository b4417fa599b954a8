"""
One-dimensional pulse-wave solver for an arterial network.

Continuity and momentum equations on every vessel, advanced with the
Richtmyer two-step Lax-Wendroff scheme. A prescribed flow drives the root,
bifurcations couple through characteristics with pressure continuity and
flow conservation, and every outlet is closed by the time-domain convolution
of a structured-tree impedance kernel with the outlet flow.
"""
import logging
from dataclasses import dataclass, field
from math import sqrt
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.interpolate import CubicSpline

from ._exceptions import (
    DataValidationError,
    NumericalError,
    UnstableSimulationError,
    VesselCollapseError,
)
from ._network import MMHG_TO_CGS
from ._structured_tree import (
    StructuredTreeSpec,
    impedance_kernel_time,
    root_impedance_spectrum,
)

try:
    from ._lax_wendroff_fast import richtmyer_step
except ImportError:  # extension not built
    from ._lax_wendroff import richtmyer_step

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("eta_left", "lrr_left", "eta_right", "lrr_right")
PARAMETER_BOUNDS = ((1.5, 3.0), (2.0, 70.0), (1.5, 3.0), (2.0, 70.0))
N_SAMPLES = 35
SIGNALS = ("pressure", "lpa_flow", "rpa_flow", "area")

INLET, MID, OUTLET = 0, 1, 2


@dataclass(frozen=True)
class ParameterVector:
    """Microvascular parameters of the left and right lungs."""

    eta_left: float
    lrr_left: float
    eta_right: float
    lrr_right: float

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.shape != (4,):
            raise DataValidationError("a parameter vector has exactly 4 entries")
        return cls(*(float(v) for v in values))

    def to_array(self):
        return np.array([self.eta_left, self.lrr_left, self.eta_right, self.lrr_right])

    def for_side(self, side):
        """``(eta, lrr)`` of the tree attached to a ``left`` or ``right`` outlet."""
        if side == "left":
            return self.eta_left, self.lrr_left
        if side == "right":
            return self.eta_right, self.lrr_right
        raise DataValidationError(f"no parameters for side {side!r}")

    def within_bounds(self, bounds=PARAMETER_BOUNDS):
        return all(lo <= v <= hi for v, (lo, hi) in zip(self.to_array(), bounds))


def as_parameter_vector(theta):
    if isinstance(theta, ParameterVector):
        return theta
    return ParameterVector.from_array(theta)


@dataclass(frozen=True)
class InletFlow:
    """One period of measured inflow.

    Parameters
    ----------
    times : ndarray
        Strictly increasing sample times in ``[0, period)``, in seconds.

    values : ndarray
        Flow in mL/s.

    period : float
    """

    times: np.ndarray
    values: np.ndarray
    period: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or times.shape != values.shape or len(times) < 2:
            raise DataValidationError("inlet flow needs matching 1-D times and values")
        if not self.period > 0:
            raise DataValidationError("inlet period must be positive")
        if np.any(np.diff(times) <= 0):
            raise DataValidationError("inlet times must be strictly increasing")
        if times[0] < 0 or times[-1] >= self.period:
            raise DataValidationError("inlet times must lie in [0, period)")
        if not np.all(np.isfinite(values)):
            raise DataValidationError("inlet flow values must be finite")

    @classmethod
    def constant(cls, value, period):
        return cls(np.array([0.0, period / 2.0]), np.array([value, value], dtype=float), period)

    @classmethod
    def from_csv(cls, path, period):
        """Read ``time_s, flow_ml_s`` columns."""
        frame = pd.read_csv(path, comment="#")
        try:
            return cls(frame["time_s"].to_numpy(), frame["flow_ml_s"].to_numpy(), period)
        except KeyError as exc:
            raise DataValidationError(f"inlet CSV is missing column {exc}") from None

    def resample(self, t):
        """Periodic cubic interpolation at times ``t``."""
        t0 = self.times[0]
        spline = CubicSpline(
            np.append(self.times, t0 + self.period),
            np.append(self.values, self.values[0]),
            bc_type="periodic",
        )
        return spline(t0 + np.mod(np.asarray(t, dtype=float) - t0, self.period))

    def mean(self):
        grid = np.linspace(0.0, self.period, 2048, endpoint=False)
        return float(np.mean(self.resample(grid)))


@dataclass(frozen=True)
class SolverOptions:
    """Numerical settings of :class:`PulseWaveSolver`.

    Parameters
    ----------
    time_steps : int, default=8192
        Steps per period; a power of two.

    max_time_steps : int, default=65536
        Ceiling for step doubling when the CFL condition fails.

    cfl : float, default=0.5

    cells_per_cm : float, default=4.0

    min_cells : int, default=8
        Minimum cells per vessel.

    max_cycles : int, default=30

    tolerance : float, default=1e-3
        Relative L2 change of the root midpoint pressure between consecutive
        cycles that counts as periodic steady state.

    n_samples : int, default=35

    viscosity_law : callable, default=None
        Radius-to-viscosity map used inside the structured trees.
    """

    time_steps: int = 2**13
    max_time_steps: int = 2**16
    cfl: float = 0.5
    cells_per_cm: float = 4.0
    min_cells: int = 8
    max_cycles: int = 30
    tolerance: float = 1e-3
    n_samples: int = N_SAMPLES
    viscosity_law: Optional[Callable[[float], float]] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("time_steps", "max_time_steps"):
            value = getattr(self, name)
            if value < 2 or value & (value - 1):
                raise DataValidationError(f"{name} must be a power of two")
        if not 0 < self.cfl <= 1:
            raise DataValidationError("cfl must be in (0, 1]")
        if self.min_cells < 2 or self.max_cycles < 2 or self.n_samples < 2:
            raise DataValidationError("min_cells, max_cycles and n_samples must be at least 2")


@dataclass
class VesselTrace:
    """Final-cycle traces of one vessel; rows are inlet, midpoint and outlet."""

    pressure: np.ndarray
    flow: np.ndarray
    area: np.ndarray


@dataclass
class SimulationResult:
    time: np.ndarray
    traces: Dict[str, VesselTrace]
    converged: bool
    cycles_run: int
    time_steps: int


@dataclass
class SimulationOutput:
    """Observed signals sampled at ``n_samples`` equispaced times of the final cycle.

    Pressure in mmHg, flows in mL/s, area in cm^2.
    """

    times: np.ndarray
    mpa_pressure: np.ndarray
    lpa_flow: np.ndarray
    rpa_flow: np.ndarray
    mpa_area: np.ndarray
    converged: bool
    cycles_run: int

    @classmethod
    def failed(cls, period, n_samples=N_SAMPLES):
        nan = np.full(n_samples, np.nan)
        times = np.arange(n_samples) * period / n_samples
        return cls(times, nan, nan.copy(), nan.copy(), nan.copy(), False, 0)

    @property
    def model_vector(self):
        return np.concatenate([self.mpa_pressure, self.lpa_flow, self.rpa_flow, self.mpa_area])

    def to_frame(self):
        return pd.DataFrame(
            {
                "t": self.times,
                "p_mmHg": self.mpa_pressure,
                "q_lpa": self.lpa_flow,
                "q_rpa": self.rpa_flow,
                "a_cm2": self.mpa_area,
            }
        )


@dataclass(frozen=True)
class Observables:
    model_vector: np.ndarray
    likelihood_vector: np.ndarray


def wall_pressure(A, A_dia, K, P_dia):
    """``P = K (sqrt(A / A_dia) - 1) + P_dia``."""
    return K * (np.sqrt(np.asarray(A) / A_dia) - 1.0) + P_dia


class _CflViolation(Exception):
    pass


class PulseWaveSolver:
    """Pulse-wave solver bound to one network.

    Parameters
    ----------
    network : ArterialNetwork
        Every outlet must belong to the ``left`` or ``right`` lung.

    options : SolverOptions, default=None
    """

    def __init__(self, network, options=None):
        self.network = network
        self.options = options or SolverOptions()
        trunk = [vid for vid in network.outlets if network.vessel(vid).side == "trunk"]
        if trunk:
            raise DataValidationError(
                f"outlets {trunk} have side 'trunk'; every outlet must be left or right"
            )
        self.n_cells = {}
        for vid in network.order:
            length = network.vessel(vid).length
            n = max(self.options.min_cells, int(np.ceil(length * self.options.cells_per_cm)))
            self.n_cells[vid] = n + n % 2

    def tree_spec(self, vessel_id, theta):
        vessel = self.network.vessel(vessel_id)
        eta, lrr = as_parameter_vector(theta).for_side(vessel.side)
        return StructuredTreeSpec(
            eta=eta,
            area_ratio=self.network.area_ratio,
            lrr=lrr,
            r_term=vessel.radius,
            stiffness=self.network.wall.stiffness,
            period=self.network.period,
            fluid=self.network.fluid,
            r_min=self.network.r_min,
            viscosity_law=self.options.viscosity_law,
        )

    def outlet_kernels(self, theta, time_steps):
        """Impedance kernel of every outlet, shared between outlets of equal radius and side."""
        kernels, cache = {}, {}
        for vid in self.network.outlets:
            vessel = self.network.vessel(vid)
            key = (vessel.side, vessel.radius)
            if key not in cache:
                spectrum = root_impedance_spectrum(self.tree_spec(vid, theta), time_steps // 2)
                cache[key] = impedance_kernel_time(spectrum, time_steps)
            kernels[vid] = cache[key]
        return kernels

    def run(self, theta, inlet):
        """Solve to periodic steady state and return final-cycle traces."""
        theta = as_parameter_vector(theta)
        if abs(inlet.period - self.network.period) > 1e-9 * self.network.period:
            raise DataValidationError(
                f"inlet period {inlet.period} does not match network period {self.network.period}"
            )
        time_steps = self.options.time_steps
        while True:
            try:
                return self._run(theta, inlet, time_steps)
            except _CflViolation as exc:
                if 2 * time_steps > self.options.max_time_steps:
                    raise UnstableSimulationError(
                        f"unstable: CFL condition not met with {time_steps} steps per period ({exc})"
                    ) from None
                time_steps *= 2
                logger.debug("CFL violated (%s), refining to %d steps per period", exc, time_steps)

    def _run(self, theta, inlet, M):
        net = self.network
        opts = self.options
        T = net.period
        dt = T / M
        K = net.wall.stiffness
        rho = net.fluid.density
        chi = net.fluid.momentum_coefficient
        fr = net.fluid.friction_coefficient
        c0 = sqrt(K / (2.0 * rho))

        order = net.order
        root = net.root
        A0 = {vid: net.vessel(vid).area for vid in order}
        dx = {vid: net.vessel(vid).length / self.n_cells[vid] for vid in order}
        beta = {vid: K / (3.0 * rho * sqrt(A0[vid])) for vid in order}
        A = {vid: np.full(self.n_cells[vid] + 1, A0[vid]) for vid in order}
        Q = {vid: np.zeros(self.n_cells[vid] + 1) for vid in order}
        bifurcations = [(p.id, d1.id, d2.id) for p, d1, d2 in net.bifurcations()]

        kernels = self.outlet_kernels(theta, M)
        z0dt = {vid: dt * kernels[vid][0] for vid in kernels}
        zrev = {vid: dt * kernels[vid][1:][::-1] for vid in kernels}
        history = {vid: np.zeros(2 * M) for vid in kernels}

        q_full = inlet.resample((np.arange(M) + 1.0) * dt)
        q_half = inlet.resample((np.arange(M) + 0.5) * dt)

        rec_A = {vid: np.empty((3, M)) for vid in order}
        rec_Q = {vid: np.empty((3, M)) for vid in order}
        mid = {vid: self.n_cells[vid] // 2 for vid in order}

        previous = None
        converged = False
        n = 0
        for cycle in range(1, opts.max_cycles + 1):
            for k in range(M):
                for vid in order:
                    a, q, m = A[vid], Q[vid], mid[vid]
                    courant = np.max(np.abs(q / a) + c0 * (a / A0[vid]) ** 0.25) * dt / dx[vid]
                    if courant > opts.cfl:
                        raise _CflViolation(f"vessel {vid}, Courant number {courant:.3f} at t={n * dt:.6g}")
                    rec_A[vid][:, k] = a[0], a[m], a[-1]
                    rec_Q[vid][:, k] = q[0], q[m], q[-1]

                w_right = {
                    vid: _right_invariant(A[vid], Q[vid], A0[vid], dx[vid], dt, c0, fr)
                    for vid in order
                }
                w_left = {
                    vid: _left_invariant(A[vid], Q[vid], A0[vid], dx[vid], dt, c0, fr)
                    for vid in order
                    if vid != root
                }

                new_A, new_Q = {}, {}
                for vid in order:
                    a_new, q_new, _, q_mid = richtmyer_step(
                        A[vid], Q[vid], dt, dx[vid], beta[vid], chi, fr
                    )
                    if vid == root:
                        q_new[0] = q_full[k]
                        a_new[0] = A[vid][0] - 2.0 * dt / dx[vid] * (q_mid[0] - q_half[k])
                    new_A[vid], new_Q[vid] = a_new, q_new

                for parent, d1, d2 in bifurcations:
                    _couple_junction(
                        (new_A[parent], new_Q[parent], A0[parent], w_right[parent]),
                        (new_A[d1], new_Q[d1], A0[d1], w_left[d1]),
                        (new_A[d2], new_Q[d2], A0[d2], w_left[d2]),
                        c0,
                    )

                i = n % M
                for vid in kernels:
                    buf = history[vid]
                    h = float(np.dot(zrev[vid], buf[i + 2 : i + M + 1]))
                    a_out, q_out = _solve_outlet(
                        A[vid][-1], A0[vid], K, c0, w_right[vid], z0dt[vid], h
                    )
                    new_A[vid][-1] = a_out
                    new_Q[vid][-1] = q_out
                    j = (n + 1) % M
                    buf[j] = buf[j + M] = q_out

                for vid in order:
                    if not new_A[vid].min() > 0:
                        raise VesselCollapseError(
                            f"collapse: nonpositive area in vessel {vid} at t={(n + 1) * dt:.6g}"
                        )
                A, Q = new_A, new_Q
                n += 1

            pressure = wall_pressure(rec_A[root][MID], A0[root], K, net.wall.p_dia)
            if previous is not None:
                change = np.linalg.norm(pressure - previous) / np.linalg.norm(pressure)
                logger.debug("cycle %d: relative pressure change %.3e", cycle, change)
                if change < opts.tolerance:
                    converged = True
                    break
            previous = pressure

        if not converged:
            logger.warning("no periodic steady state after %d cycles", cycle)
        traces = {
            vid: VesselTrace(
                pressure=wall_pressure(rec_A[vid], A0[vid], K, net.wall.p_dia),
                flow=rec_Q[vid].copy(),
                area=rec_A[vid].copy(),
            )
            for vid in order
        }
        return SimulationResult(np.arange(M) * dt, traces, converged, cycle, M)


def _right_invariant(A, Q, A0, dx, dt, c0, friction):
    """Forward Riemann invariant ``u + 4c`` traced back from the outlet node."""
    a, q = A[-1], Q[-1]
    frac = (q / a + c0 * (a / A0) ** 0.25) * dt / dx
    af = a + frac * (A[-2] - a)
    uf = (q + frac * (Q[-2] - q)) / af
    return uf + 4.0 * c0 * (af / A0) ** 0.25 - dt * friction * uf / af


def _left_invariant(A, Q, A0, dx, dt, c0, friction):
    """Backward Riemann invariant ``u - 4c`` traced back from the inlet node."""
    a, q = A[0], Q[0]
    frac = (c0 * (a / A0) ** 0.25 - q / a) * dt / dx
    af = a + frac * (A[1] - a)
    uf = (q + frac * (Q[1] - q)) / af
    return uf - 4.0 * c0 * (af / A0) ** 0.25 - dt * friction * uf / af


def _couple_junction(parent, child1, child2, c0):
    """Set the shared nodes of a bifurcation.

    With one stiffness for all vessels, pressure continuity makes
    ``(A / A_dia)^(1/4)`` common to the three vessels, and flow conservation
    is then linear in it.
    """
    (Ap, Qp, A0p, Wp), (A1, Q1, A01, W1), (A2, Q2, A02, W2) = parent, child1, child2
    fourth_root = (A0p * Wp - A01 * W1 - A02 * W2) / (4.0 * c0 * (A0p + A01 + A02))
    if not fourth_root > 0:
        raise VesselCollapseError("collapse: no positive area satisfies the junction conditions")
    c = c0 * fourth_root
    area_ratio = fourth_root**4
    Ap[-1] = A0p * area_ratio
    Qp[-1] = Ap[-1] * (Wp - 4.0 * c)
    A1[0] = A01 * area_ratio
    Q1[0] = A1[0] * (W1 + 4.0 * c)
    A2[0] = A02 * area_ratio
    Q2[0] = A2[0] * (W2 + 4.0 * c)


def _solve_outlet(A_guess, A0, K, c0, w_plus, z0dt, history, tol=1e-12, max_iter=50):
    """Newton solve of ``K (sqrt(A/A0) - 1) = dt z_0 Q(A) + H`` with ``Q = A (W+ - 4c)``."""
    A = A_guess
    for _ in range(max_iter):
        ratio = sqrt(A / A0)
        c = c0 * sqrt(ratio)
        u = w_plus - 4.0 * c
        g = K * (ratio - 1.0) - z0dt * A * u - history
        dg = K / (2.0 * sqrt(A * A0)) - z0dt * (u - c)
        step = g / dg
        while A - step <= 0:
            step *= 0.5
        A -= step
        if abs(step) <= tol * A:
            return A, A * (w_plus - 4.0 * c0 * (A / A0) ** 0.25)
    raise NumericalError("outlet boundary condition did not converge")


def simulate(net, theta, inlet, opts=None):
    """Run the network to periodic steady state and sample the observed signals.

    Parameters
    ----------
    net : ArterialNetwork

    theta : ParameterVector or array-like of shape (4,)
        ``(eta_left, lrr_left, eta_right, lrr_right)``.

    inlet : InletFlow

    opts : SolverOptions, default=None

    Returns
    -------
    sim : SimulationOutput
    """
    opts = opts or SolverOptions()
    result = PulseWaveSolver(net, opts).run(theta, inlet)
    return sample_result(net, result, opts.n_samples)


def sample_result(net, result, n_samples=N_SAMPLES):
    T = net.period
    times = np.arange(n_samples) * T / n_samples

    def sample(trace):
        return np.interp(times, result.time, trace, period=T)

    root = result.traces[net.root]
    flows = []
    for side in ("left", "right"):
        vid = net.side_vessel(side)
        if vid is None:
            flows.append(np.zeros(n_samples))
        else:
            flows.append(sample(result.traces[vid].flow[MID]))
    return SimulationOutput(
        times=times,
        mpa_pressure=sample(root.pressure[MID]) / MMHG_TO_CGS,
        lpa_flow=flows[0],
        rpa_flow=flows[1],
        mpa_area=sample(root.area[MID]),
        converged=result.converged,
        cycles_run=result.cycles_run,
    )


def _simulate_row(net, theta, inlet, opts):
    try:
        return simulate(net, theta, inlet, opts)
    except NumericalError as exc:
        logger.warning("simulation failed at theta=%s: %s", np.round(theta, 4).tolist(), exc)
        return SimulationOutput.failed(net.period, opts.n_samples)


def simulate_design(net, design, inlet, opts=None, n_jobs=None):
    """Simulate every row of ``design``; numerical failures come back non-converged."""
    opts = opts or SolverOptions()
    design = np.atleast_2d(np.asarray(design, dtype=float))
    PulseWaveSolver(net, opts)  # rejects trunk outlets before fanning out
    return Parallel(n_jobs=n_jobs)(
        delayed(_simulate_row)(net, row, inlet, opts) for row in design
    )


def model_vector_to_observables(model_vector, a_dia, n_samples=N_SAMPLES):
    """Map ``[pressure, lpa, rpa, area]`` to ``[p_sys, p_dia, lpa, rpa, strain %]``."""
    v = np.asarray(model_vector, dtype=float)
    if v.shape[-1] != 4 * n_samples:
        raise DataValidationError(f"model vector must have {4 * n_samples} entries")
    pressure = v[..., :n_samples]
    flows = v[..., n_samples : 3 * n_samples]
    area = v[..., 3 * n_samples :]
    strain = 100.0 * (area - a_dia) / a_dia
    return np.concatenate(
        [
            pressure.max(axis=-1, keepdims=True),
            pressure.min(axis=-1, keepdims=True),
            flows,
            strain,
        ],
        axis=-1,
    )


def extract_observables(sim, a_dia):
    """Model vector (4 x 35) and likelihood vector (2 + 3 x 35) of a converged simulation."""
    if not sim.converged:
        raise NumericalError("simulation did not converge")
    model_vector = sim.model_vector
    return Observables(model_vector, model_vector_to_observables(model_vector, a_dia, len(sim.times)))


def write_simulation_csv(sim, path, header=None):
    with open(path, "w") as stream:
        for key, value in (header or {}).items():
            stream.write(f"# {key}: {value}\n")
        sim.to_frame().to_csv(stream, index=False)


def read_simulation_csv(path):
    frame = pd.read_csv(path, comment="#")
    return SimulationOutput(
        times=frame["t"].to_numpy(),
        mpa_pressure=frame["p_mmHg"].to_numpy(),
        lpa_flow=frame["q_lpa"].to_numpy(),
        rpa_flow=frame["q_rpa"].to_numpy(),
        mpa_area=frame["a_cm2"].to_numpy(),
        converged=True,
        cycles_run=0,
    )
