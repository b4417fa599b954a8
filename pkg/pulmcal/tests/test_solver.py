import pytest
import numpy as np
from numpy.testing import assert_allclose

from pulmcal import (
    DataValidationError,
    InletFlow,
    NumericalError,
    ParameterVector,
    PulseWaveSolver,
    SimulationOutput,
    SolverOptions,
    UnstableSimulationError,
    VesselCollapseError,
    extract_observables,
    model_vector_to_observables,
    parse_network,
    root_impedance_spectrum,
    simulate,
    simulate_design,
)
from pulmcal._solver import (
    INLET,
    OUTLET,
    _couple_junction,
    read_simulation_csv,
    sample_result,
    write_simulation_csv,
)

THETA = (2.3, 15.0, 2.3, 15.0)


def single_vessel(profile_exponent):
    return parse_network(
        f"""
period_s: 0.1
p_dia_mmHg: 8
stiffness_cgs: 1.0e7
fluid: {{profile_exponent: {profile_exponent}}}
vessels: [{{id: a, length_cm: 1.0, radius_cm: 0.2, side: left}}]
"""
    )


def y_network(rpa_radius=0.6):
    return parse_network(
        f"""
period_s: 0.5
p_dia_mmHg: 8
stiffness_mmHg: 170
vessels:
  - {{id: mpa, length_cm: 3.0, radius_cm: 1.0, children: [lpa, rpa]}}
  - {{id: lpa, length_cm: 2.0, radius_cm: 0.6, side: left}}
  - {{id: rpa, length_cm: 2.0, radius_cm: {rpa_radius}, side: right}}
"""
    )


def pulsatile_inlet(period=0.5, n=64):
    t = np.arange(n) * period / n
    return InletFlow(t, 50.0 * (1.0 - np.cos(2 * np.pi * t / period)), period)


@pytest.fixture(scope="module")
def y_result():
    net = y_network()
    opts = SolverOptions(time_steps=2048, tolerance=1e-4, max_cycles=60)
    return net, PulseWaveSolver(net, opts).run(THETA, pulsatile_inlet())


@pytest.mark.parametrize("gamma, factor", [(5, 14.0), (2, 8.0)])
def test_steady_viscous_drop(gamma, factor):
    net = single_vessel(gamma)
    q0 = 10.0
    opts = SolverOptions(time_steps=4096, tolerance=1e-5)
    result = PulseWaveSolver(net, opts).run(THETA, InletFlow.constant(q0, net.period))
    assert result.converged
    pressure = result.traces["a"].pressure
    drop = np.mean(pressure[INLET] - pressure[OUTLET])
    expected = factor * 0.03 * q0 * 1.0 / (np.pi * 0.2**4)
    assert drop == pytest.approx(expected, rel=0.05)


def test_mass_conservation(y_result):
    net, result = y_result
    inflow = result.traces["mpa"].flow[INLET].mean()
    outflow = sum(result.traces[vid].flow[OUTLET].mean() for vid in net.outlets)
    assert abs(inflow - outflow) / inflow < 1e-3


def test_junction_flow_balance(y_result):
    net, result = y_result
    parent = result.traces["mpa"].flow[OUTLET]
    children = result.traces["lpa"].flow[INLET] + result.traces["rpa"].flow[INLET]
    assert_allclose(children, parent, rtol=1e-8, atol=1e-8 * np.abs(parent).max())


def test_outlet_matches_tree_impedance(y_result):
    net, result = y_result
    solver = PulseWaveSolver(net)
    for vid in net.outlets:
        trace = result.traces[vid]
        z0 = root_impedance_spectrum(solver.tree_spec(vid, THETA), 1).values[0].real
        excess = np.mean(trace.pressure[OUTLET] - net.wall.p_dia)
        assert excess == pytest.approx(z0 * trace.flow[OUTLET].mean(), rel=0.02)


def test_symmetric_network_gives_equal_branches(y_result):
    net, result = y_result
    sim = sample_result(net, result)
    assert_allclose(sim.lpa_flow, sim.rpa_flow, rtol=1e-10)
    assert sim.times.shape == (35,)
    assert sim.mpa_pressure.min() > 0
    assert result.traces["mpa"].pressure.shape == (3, result.time_steps)


def test_right_lung_parameters_only_change_right_side():
    net = y_network()
    inlet = pulsatile_inlet()
    opts = SolverOptions(time_steps=2048)
    base = simulate(net, THETA, inlet, opts)
    stiffer = simulate(net, (2.3, 15.0, 2.9, 60.0), inlet, opts)
    # more resistance on the right pushes flow to the left lung
    assert stiffer.lpa_flow.mean() > base.lpa_flow.mean()
    assert stiffer.rpa_flow.mean() < base.rpa_flow.mean()
    assert stiffer.mpa_pressure.mean() > base.mpa_pressure.mean()


def test_cfl_refinement_and_failure():
    net = y_network()
    inlet = pulsatile_inlet()
    opts = SolverOptions(time_steps=64, max_time_steps=2048, max_cycles=3)
    result = PulseWaveSolver(net, opts).run(THETA, inlet)
    assert result.time_steps > 64

    with pytest.raises(UnstableSimulationError, match="unstable"):
        PulseWaveSolver(net, SolverOptions(time_steps=64, max_time_steps=64)).run(THETA, inlet)


def test_junction_coupling():
    nodes = [(np.full(3, a0), np.zeros(3), a0) for a0 in (3.0, 1.2, 1.0)]
    (Ap, Qp, A0p), (A1, Q1, A01), (A2, Q2, A02) = nodes
    _couple_junction((Ap, Qp, A0p, 1250.0), (A1, Q1, A01, -1150.0), (A2, Q2, A02, -1150.0), 300.0)
    assert Ap[-1] / A0p == pytest.approx(A1[0] / A01, rel=1e-14)
    assert Ap[-1] / A0p == pytest.approx(A2[0] / A02, rel=1e-14)
    assert Qp[-1] == pytest.approx(Q1[0] + Q2[0], rel=1e-12)

    with pytest.raises(VesselCollapseError, match="collapse"):
        _couple_junction((Ap, Qp, A0p, -1000.0), (A1, Q1, A01, 0.0), (A2, Q2, A02, 0.0), 300.0)


def test_cfl_is_checked_within_a_cycle():
    net = y_network()
    solver = PulseWaveSolver(net, SolverOptions(time_steps=2048))
    c0 = np.sqrt(net.wall.stiffness / (2.0 * net.fluid.density))
    dx = min(net.vessel(vid).length / n for vid, n in solver.n_cells.items())
    at_rest = c0 * (net.period / 2048) / dx

    # the fluid starts at rest and only the systolic flow pushes the wave speed over the limit
    opts = SolverOptions(time_steps=2048, max_time_steps=2048, cfl=1.03 * at_rest, max_cycles=2)
    with pytest.raises(UnstableSimulationError, match=r"at t=0\.\d*[1-9]"):
        PulseWaveSolver(net, opts).run(THETA, pulsatile_inlet())


def test_invalid_inputs():
    net = y_network()
    with pytest.raises(DataValidationError, match="period"):
        PulseWaveSolver(net).run(THETA, pulsatile_inlet(period=0.6))
    with pytest.raises(DataValidationError, match="4 entries"):
        simulate(net, (2.3, 15.0), pulsatile_inlet())

    trunk = parse_network(
        "period_s: 1\np_dia_mmHg: 8\nstiffness_mmHg: 100\nvessels: [{id: a, length_cm: 1, radius_cm: 1}]"
    )
    with pytest.raises(DataValidationError, match="trunk"):
        PulseWaveSolver(trunk)
    with pytest.raises(DataValidationError, match="power of two"):
        SolverOptions(time_steps=1000)


def test_inlet_flow(tmp_path):
    inlet = pulsatile_inlet()
    t = np.linspace(0, 1.0, 50)
    assert_allclose(inlet.resample(t), inlet.resample(t + 0.5), atol=1e-10)
    assert inlet.mean() == pytest.approx(50.0, rel=1e-6)

    path = tmp_path / "inlet.csv"
    path.write_text("time_s,flow_ml_s\n0.0,1.0\n0.25,3.0\n")
    assert InletFlow.from_csv(path, 0.5).values.tolist() == [1.0, 3.0]

    path.write_text("t,q\n0.0,1.0\n0.25,3.0\n")
    with pytest.raises(DataValidationError, match="missing column"):
        InletFlow.from_csv(path, 0.5)
    with pytest.raises(DataValidationError):
        InletFlow(np.array([0.0, 0.6]), np.array([1.0, 2.0]), 0.5)


def test_parameter_vector():
    theta = ParameterVector.from_array([2.0, 10.0, 2.5, 20.0])
    assert theta.for_side("right") == (2.5, 20.0)
    assert theta.within_bounds()
    assert not ParameterVector(1.0, 10.0, 2.5, 20.0).within_bounds()
    with pytest.raises(DataValidationError):
        theta.for_side("trunk")


def test_observables_mapping():
    n = 35
    pressure = np.linspace(10, 20, n)
    area = np.full(n, 1.1 * np.pi)
    v = np.concatenate([pressure, np.ones(n), 2 * np.ones(n), area])
    obs = model_vector_to_observables(v, np.pi)
    assert obs.shape == (107,)
    assert obs[:2].tolist() == [20.0, 10.0]
    assert_allclose(obs[2 + 2 * n :], 10.0)

    batch = model_vector_to_observables(np.vstack([v, v]), np.pi)
    assert batch.shape == (2, 107)
    with pytest.raises(DataValidationError):
        model_vector_to_observables(v[:-1], np.pi)


def test_failed_simulation_is_not_observable():
    failed = SimulationOutput.failed(0.5)
    assert not failed.converged
    assert np.all(np.isnan(failed.model_vector))
    with pytest.raises(NumericalError):
        extract_observables(failed, np.pi)


def test_simulate_design_and_csv(tmp_path):
    net = y_network()
    design = np.array([THETA, (2.0, 30.0, 2.0, 30.0)])
    outputs = simulate_design(net, design, pulsatile_inlet(), SolverOptions(time_steps=2048), n_jobs=1)
    assert len(outputs) == 2
    assert all(sim.converged for sim in outputs)
    obs = extract_observables(outputs[0], net.vessel("mpa").area)
    assert obs.model_vector.shape == (140,)
    assert obs.likelihood_vector.shape == (107,)

    path = tmp_path / "sim.csv"
    write_simulation_csv(outputs[0], path, {"seed": 0})
    assert path.read_text().startswith("# seed: 0\nt,p_mmHg,q_lpa,q_rpa,a_cm2\n")
    assert_allclose(read_simulation_csv(path).model_vector, outputs[0].model_vector)

