import pytest
import numpy as np

from pulmcal import (
    DataValidationError,
    NetworkConfigError,
    compute_stiffness,
    load_network,
    parse_network,
    serialize_network,
    solve_murray_exponent,
)
from pulmcal._network import MMHG_TO_CGS, median_area_ratio
from pulmcal._structured_tree import alpha_beta

Y_NETWORK = """
period_s: 0.5
p_dia_mmHg: 8
p_sys_mmHg: 25
a_sys_over_a_dia: 1.21
vessels:
  - {id: mpa, length_cm: 3.0, radius_cm: 1.0, children: [lpa, rpa]}
  - {id: lpa, length_cm: 2.0, radius_cm: 0.6, side: left}
  - {id: rpa, length_cm: 2.0, radius_cm: 0.5, side: right}
"""


@pytest.fixture
def y_network():
    return parse_network(Y_NETWORK)


def test_single_vessel():
    net = parse_network(
        '{"period_s": 1, "p_dia_mmHg": 8, "stiffness_mmHg": 170,'
        ' "vessels": [{"id": "a", "length_cm": 1, "radius_cm": 0.2, "side": "left"}]}'
    )
    assert net.root == "a"
    assert net.outlets == ("a",)
    assert net.area_ratio == 0.6
    assert net.side_vessel("left") == "a"
    assert net.side_vessel("right") is None


def test_y_network(y_network):
    net = y_network
    assert net.root == "mpa"
    assert net.inlet_vessel == "mpa"
    assert set(net.outlets) == {"lpa", "rpa"}
    assert net.left_outlets == ("lpa",)
    assert net.right_outlets == ("rpa",)
    assert net.vessel("lpa").parent == "mpa"
    assert net.side_vessel("right") == "rpa"
    assert net.wall.p_dia == pytest.approx(8 * MMHG_TO_CGS)
    assert net.wall.stiffness == pytest.approx(170 * MMHG_TO_CGS, rel=1e-12)
    assert net.wall.a_dia["mpa"] == pytest.approx(np.pi)
    assert net.area_ratio == pytest.approx((0.5 / 0.6) ** 2)


@pytest.mark.parametrize(
    "vessels, message",
    [
        ('[{id: a, length_cm: 1, radius_cm: 1, children: [b, c]}, {id: b, length_cm: 1, radius_cm: 1}]', "dangling reference"),
        ('[{id: a, length_cm: 1, radius_cm: 1, children: [b]}, {id: b, length_cm: 1, radius_cm: 1}]', "exactly one child"),
        ('[{id: a, length_cm: 0, radius_cm: 1}]', "nonpositive length"),
        ('[{id: a, length_cm: 1, radius_cm: -1}]', "nonpositive radius"),
        ('[{id: a, length_cm: 1, radius_cm: 1, children: [b, c]}, {id: b, length_cm: 1, radius_cm: 1, children: [a, c]}, {id: c, length_cm: 1, radius_cm: 1}]', "more than one parent|cyclic"),
        ('[{id: a, length_cm: 1, radius_cm: 1}, {id: b, length_cm: 1, radius_cm: 1}]', "more than one root"),
        ('[{id: a, length_cm: 1, radius_cm: 1, colour: red}]', "unknown vessel keys"),
    ],
)
def test_schema_errors(vessels, message):
    text = f"period_s: 1\np_dia_mmHg: 8\nstiffness_mmHg: 100\nvessels: {vessels}\n"
    with pytest.raises(NetworkConfigError, match=message):
        parse_network(text)


def test_cycle_without_root():
    text = (
        "period_s: 1\np_dia_mmHg: 8\nstiffness_mmHg: 100\nvessels:\n"
        "  - {id: a, length_cm: 1, radius_cm: 1, children: [b, c]}\n"
        "  - {id: b, length_cm: 1, radius_cm: 1, children: [a, d]}\n"
        "  - {id: c, length_cm: 1, radius_cm: 1}\n"
        "  - {id: d, length_cm: 1, radius_cm: 1}\n"
    )
    with pytest.raises(NetworkConfigError, match="cyclic"):
        parse_network(text)


def test_missing_and_unknown_top_level_keys():
    with pytest.raises(NetworkConfigError, match="stiffness"):
        parse_network("period_s: 1\np_dia_mmHg: 8\nvessels: [{id: a, length_cm: 1, radius_cm: 1}]")
    with pytest.raises(NetworkConfigError, match="unknown keys"):
        parse_network("period: 1\nvessels: []")
    # NetworkConfigError is a DataValidationError and a ValueError
    with pytest.raises(ValueError):
        parse_network("- just\n- a list\n")


def test_round_trip(y_network, tmp_path):
    text = serialize_network(y_network)
    again = parse_network(text)
    assert again == y_network
    assert serialize_network(again) == text

    path = tmp_path / "net.yaml"
    path.write_text(text)
    assert load_network(path) == y_network


def test_compute_stiffness():
    k = compute_stiffness(25 * MMHG_TO_CGS, 8 * MMHG_TO_CGS, 1.21, 1.0)
    assert k / MMHG_TO_CGS == pytest.approx(170, rel=1e-12)
    assert k == pytest.approx(226647.4, rel=1e-6)

    eps = 1e-3
    assert compute_stiffness(8 + eps, 8, 4.0, 1.0) == pytest.approx(eps, rel=1e-9)

    # the wall law at systole reproduces the systolic pressure
    p_sys, p_dia, a_sys, a_dia = 30.0, 10.0, 2.3, 2.0
    k = compute_stiffness(p_sys, p_dia, a_sys, a_dia)
    assert k * (np.sqrt(a_sys / a_dia) - 1) + p_dia == pytest.approx(p_sys, rel=1e-12)

    with pytest.raises(DataValidationError, match="nonpositive strain"):
        compute_stiffness(25, 8, 1.0, 1.0)


def test_median_area_ratio():
    def net(radii):
        vessels = "\n".join(
            [
                "  - {id: p0, length_cm: 1, radius_cm: 2, children: [a0, b0]}",
                f"  - {{id: a0, length_cm: 1, radius_cm: {radii[0][0]}, side: left, children: [a1, b1]}}",
                f"  - {{id: b0, length_cm: 1, radius_cm: {radii[0][1]}, side: right}}",
                f"  - {{id: a1, length_cm: 1, radius_cm: {radii[1][0]}, side: left}}",
                f"  - {{id: b1, length_cm: 1, radius_cm: {radii[1][1]}, side: left}}",
            ]
        )
        return parse_network(f"period_s: 1\np_dia_mmHg: 8\nstiffness_mmHg: 100\nvessels:\n{vessels}\n")

    # two bifurcations: midpoint of 0.25 and 1
    assert median_area_ratio(net([(0.4, 0.2), (0.3, 0.3)])) == pytest.approx(0.625)
    # smaller over larger regardless of child order
    assert median_area_ratio(net([(0.2, 0.4), (0.3, 0.3)])) == pytest.approx(0.625)

    single = parse_network(
        "period_s: 1\np_dia_mmHg: 8\nstiffness_mmHg: 100\nvessels: [{id: a, length_cm: 1, radius_cm: 1, side: left}]"
    )
    with pytest.raises(DataValidationError):
        median_area_ratio(single)


@pytest.mark.parametrize(
    "r_d1, r_d2, eta",
    [(2 ** (-1 / 3), 2 ** (-1 / 3), 3.0), (2**-0.5, 2**-0.5, 2.0)],
)
def test_murray_exponent(r_d1, r_d2, eta):
    assert solve_murray_exponent(1.0, r_d1, r_d2) == pytest.approx(eta, abs=1e-10)


def test_murray_exponent_asymmetric():
    eta = solve_murray_exponent(1.0, 0.9, 0.6)
    assert 0.9**eta + 0.6**eta == pytest.approx(1.0, abs=1e-10)
    assert eta == pytest.approx(2.72, abs=0.01)


def test_murray_exponent_recovers_generator():
    rng = np.random.default_rng(3)
    for _ in range(50):
        eta = rng.uniform(0.5, 4.0)
        pair = alpha_beta(eta, rng.uniform(0.1, 1.0))
        assert solve_murray_exponent(1.0, pair.alpha, pair.beta) == pytest.approx(eta, rel=1e-8)


def test_murray_exponent_no_root():
    with pytest.raises(DataValidationError, match="no positive-exponent root"):
        solve_murray_exponent(1.0, 1.2, 0.5)
