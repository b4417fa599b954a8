"""
Large-vessel network description: topology, geometry, wall law and fluid
constants, plus the data-driven constants derived from them.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml
from scipy import optimize

from ._exceptions import DataValidationError, NetworkConfigError

logger = logging.getLogger(__name__)

MMHG_TO_CGS = 1333.22

DEFAULT_AREA_RATIO = 0.6
DEFAULT_MIN_RADIUS = 0.005

SIDES = ("left", "right", "trunk")

_TOP_LEVEL_KEYS = {
    "vessels",
    "period_s",
    "p_dia_mmHg",
    "p_dia_cgs",
    "p_sys_mmHg",
    "a_sys_over_a_dia",
    "stiffness_mmHg",
    "stiffness_cgs",
    "area_ratio",
    "r_min_cm",
    "fluid",
}
_VESSEL_KEYS = {"id", "length_cm", "radius_cm", "children", "side"}
_FLUID_KEYS = {"density", "viscosity", "profile_exponent"}


@dataclass(frozen=True)
class FluidConstants:
    """Blood properties in CGS units.

    Parameters
    ----------
    density : float, default=1.03
        Blood density in g/mL.

    viscosity : float, default=0.03
        Dynamic viscosity in g/(cm s).

    profile_exponent : float, default=5.0
        Exponent of the power-law velocity profile. ``2`` gives Poiseuille flow.
    """

    density: float = 1.03
    viscosity: float = 0.03
    profile_exponent: float = 5.0

    def __post_init__(self):
        if not self.density > 0:
            raise DataValidationError("density must be positive")
        if not self.viscosity > 0:
            raise DataValidationError("viscosity must be positive")
        if not self.profile_exponent >= 2:
            raise DataValidationError("profile exponent must be at least 2")

    @property
    def momentum_coefficient(self):
        """Momentum-flux correction of the velocity profile."""
        gamma = self.profile_exponent
        return (gamma + 2.0) / (gamma + 1.0)

    @property
    def friction_coefficient(self):
        """Wall friction factor; the momentum source is ``-friction * Q / A``."""
        return 2.0 * np.pi * self.viscosity * (self.profile_exponent + 2.0) / self.density


@dataclass(frozen=True)
class VesselSegment:
    id: str
    length: float
    radius: float
    children: Tuple[str, ...] = ()
    side: str = "trunk"
    parent: Optional[str] = None

    def __post_init__(self):
        if not self.length > 0:
            raise NetworkConfigError(f"vessel {self.id}: nonpositive length")
        if not self.radius > 0:
            raise NetworkConfigError(f"vessel {self.id}: nonpositive radius")
        if len(self.children) not in (0, 2):
            raise NetworkConfigError(
                f"vessel {self.id} has exactly one child; bifurcations need two"
            )
        if self.side not in SIDES:
            raise NetworkConfigError(
                f"vessel {self.id}: side must be one of {SIDES}, got {self.side!r}"
            )

    @property
    def area(self):
        """Diastolic reference area."""
        return np.pi * self.radius**2

    @property
    def is_outlet(self):
        return not self.children


@dataclass(frozen=True)
class WallModel:
    """Linear elastic wall law ``P = K (sqrt(A / A_dia) - 1) + P_dia``.

    Parameters
    ----------
    stiffness : float
        Global stiffness ``K`` in g/(cm s^2).

    p_dia : float
        Diastolic reference pressure in g/(cm s^2).

    a_dia : dict
        Reference area of each vessel, keyed by vessel id.
    """

    stiffness: float
    p_dia: float
    a_dia: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.stiffness > 0:
            raise DataValidationError("stiffness must be positive")


@dataclass(frozen=True)
class ArterialNetwork:
    """Binary out-tree of large vessels for one subject.

    Built by :func:`parse_network`; immutable afterwards.

    Parameters
    ----------
    vessels : tuple of VesselSegment
        All segments, parents filled in.

    wall : WallModel
        Wall law shared by every vessel and every structured tree.

    fluid : FluidConstants

    period : float
        Cardiac period ``T`` in seconds.

    area_ratio : float
        Structured-tree area ratio ``zeta``.

    r_min : float
        Structured-tree truncation radius in cm.
    """

    vessels: Tuple[VesselSegment, ...]
    wall: WallModel
    fluid: FluidConstants
    period: float
    area_ratio: float = DEFAULT_AREA_RATIO
    r_min: float = DEFAULT_MIN_RADIUS
    _index: Dict[str, VesselSegment] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )
    _order: Tuple[str, ...] = field(init=False, repr=False, compare=False, default=())

    def __post_init__(self):
        if not self.period > 0:
            raise NetworkConfigError("period must be positive")
        if not 0 < self.area_ratio <= 1:
            raise NetworkConfigError("area ratio must be in (0, 1]")
        if not self.r_min > 0:
            raise NetworkConfigError("r_min must be positive")
        object.__setattr__(self, "_index", {v.id: v for v in self.vessels})
        object.__setattr__(self, "_order", _check_topology(self._index))

    @property
    def root(self):
        """Id of the inlet vessel."""
        return self._order[0]

    @property
    def inlet_vessel(self):
        return self.root

    @property
    def order(self):
        """Vessel ids in depth-first preorder, root first."""
        return self._order

    @property
    def outlets(self):
        return tuple(vid for vid in self._order if self._index[vid].is_outlet)

    @property
    def left_outlets(self):
        return tuple(vid for vid in self.outlets if self._index[vid].side == "left")

    @property
    def right_outlets(self):
        return tuple(vid for vid in self.outlets if self._index[vid].side == "right")

    def vessel(self, vessel_id):
        try:
            return self._index[vessel_id]
        except KeyError:
            raise NetworkConfigError(f"unknown vessel {vessel_id!r}") from None

    def bifurcations(self):
        """List of ``(parent, child_1, child_2)`` segments."""
        return [
            (v, self._index[v.children[0]], self._index[v.children[1]])
            for v in (self._index[vid] for vid in self._order)
            if v.children
        ]

    def side_vessel(self, side):
        """The main left or right pulmonary artery.

        The root's child on ``side``, or the root itself when the root is the
        only vessel and belongs to ``side``. ``None`` when absent.
        """
        root = self._index[self.root]
        if root.is_outlet:
            return root.id if root.side == side else None
        for child in root.children:
            if self._index[child].side == side:
                return child
        return None


def _check_topology(index):
    parents = {}
    for vessel in index.values():
        for child in vessel.children:
            if child not in index:
                raise NetworkConfigError(
                    f"dangling reference: vessel {vessel.id} lists unknown child {child!r}"
                )
            if child in parents:
                raise NetworkConfigError(f"vessel {child} has more than one parent")
            parents[child] = vessel.id
    roots = [vid for vid in index if vid not in parents]
    if not roots:
        raise NetworkConfigError("cyclic connectivity: no root vessel")
    if len(roots) > 1:
        raise NetworkConfigError(f"network has more than one root: {sorted(roots)}")

    order = []
    stack = [roots[0]]
    while stack:
        vid = stack.pop()
        if vid in order:
            raise NetworkConfigError("cyclic connectivity")
        order.append(vid)
        stack.extend(reversed(index[vid].children))
    if len(order) != len(index):
        raise NetworkConfigError("cyclic connectivity")

    for vid, vessel in index.items():
        if vessel.parent != parents.get(vid):
            raise NetworkConfigError(f"vessel {vid}: parent does not match connectivity")
    return tuple(order)


def compute_stiffness(p_sys, p_dia, a_sys, a_dia):
    """Invert the wall law at systole.

    Returns ``K = (p_sys - p_dia) / (sqrt(a_sys / a_dia) - 1)`` in the units of
    the pressures.
    """
    if not a_dia > 0:
        raise DataValidationError("diastolic area must be positive")
    if not a_sys > a_dia:
        raise DataValidationError("nonpositive strain at systole")
    if not p_sys > p_dia:
        raise DataValidationError("systolic pressure must exceed diastolic pressure")
    return (p_sys - p_dia) / (np.sqrt(a_sys / a_dia) - 1.0)


def median_area_ratio(net):
    """Median smaller-over-larger offspring area ratio over all bifurcations."""
    ratios = []
    for _, d1, d2 in net.bifurcations():
        small, large = sorted((d1.area, d2.area))
        ratios.append(small / large)
    if not ratios:
        raise DataValidationError("network has no bifurcations")
    return float(np.median(ratios))


def solve_murray_exponent(r_p, r_d1, r_d2, bracket=(0.1, 10.0)):
    """Solve ``r_p**eta = r_d1**eta + r_d2**eta`` for ``eta``.

    Newton iteration on the normalized residual, falling back to Brent's
    method on ``bracket`` when Newton fails or leaves the bracket.
    """
    if min(r_p, r_d1, r_d2) <= 0:
        raise DataValidationError("radii must be positive")
    if r_d1 >= r_p or r_d2 >= r_p:
        raise DataValidationError("no positive-exponent root")

    x1, x2 = r_d1 / r_p, r_d2 / r_p
    lx1, lx2 = np.log(x1), np.log(x2)

    def residual(eta):
        return x1**eta + x2**eta - 1.0

    def slope(eta):
        return lx1 * x1**eta + lx2 * x2**eta

    lo, hi = bracket
    if residual(lo) < 0 or residual(hi) > 0:
        raise DataValidationError(f"no root in [{lo}, {hi}]")

    try:
        eta = optimize.newton(residual, 3.0, fprime=slope, tol=1e-14, maxiter=50)
    except (RuntimeError, OverflowError):
        eta = np.nan
    if not (lo <= eta <= hi and abs(residual(eta)) < 1e-10):
        logger.debug("Newton failed for radii %s, using bisection", (r_p, r_d1, r_d2))
        eta = optimize.brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return float(eta)


def parse_network(config_text):
    """Parse a network configuration (YAML or JSON text).

    Parameters
    ----------
    config_text : str
        Text following the schema documented in ``pulmcal/data/network_schema.rst``.

    Returns
    -------
    net : ArterialNetwork
        Network in CGS units.
    """
    try:
        config = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        raise NetworkConfigError(f"unreadable network configuration: {exc}") from exc
    if not isinstance(config, dict):
        raise NetworkConfigError("network configuration must be a mapping")
    unknown = set(config) - _TOP_LEVEL_KEYS
    if unknown:
        raise NetworkConfigError(f"unknown keys in network configuration: {sorted(unknown)}")

    raw_vessels = config.get("vessels")
    if not isinstance(raw_vessels, list) or not raw_vessels:
        raise NetworkConfigError("'vessels' must be a non-empty list")

    parsed = []
    for raw in raw_vessels:
        if not isinstance(raw, dict):
            raise NetworkConfigError("each vessel must be a mapping")
        unknown = set(raw) - _VESSEL_KEYS
        if unknown:
            raise NetworkConfigError(f"unknown vessel keys: {sorted(unknown)}")
        try:
            parsed.append(
                (
                    str(raw["id"]),
                    float(raw["length_cm"]),
                    float(raw["radius_cm"]),
                    tuple(str(c) for c in raw.get("children") or ()),
                    str(raw.get("side", "trunk")),
                )
            )
        except KeyError as exc:
            raise NetworkConfigError(f"vessel is missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise NetworkConfigError(f"invalid vessel entry {raw!r}: {exc}") from None

    ids = [p[0] for p in parsed]
    if len(set(ids)) != len(ids):
        raise NetworkConfigError("duplicate vessel ids")
    known = set(ids)
    parents = {}
    for vid, _, _, children, _ in parsed:
        for child in children:
            if child not in known:
                raise NetworkConfigError(
                    f"dangling reference: vessel {vid} lists unknown child {child!r}"
                )
            parents.setdefault(child, vid)
    vessels = tuple(
        VesselSegment(vid, length, radius, children, side, parents.get(vid))
        for vid, length, radius, children, side in parsed
    )

    period = _positive(config, "period_s")
    if "p_dia_cgs" in config:
        p_dia = float(config["p_dia_cgs"])
    elif "p_dia_mmHg" in config:
        p_dia = float(config["p_dia_mmHg"]) * MMHG_TO_CGS
    else:
        raise NetworkConfigError("missing diastolic pressure (p_dia_mmHg or p_dia_cgs)")

    if "stiffness_cgs" in config:
        stiffness = _positive(config, "stiffness_cgs")
    elif "stiffness_mmHg" in config:
        stiffness = _positive(config, "stiffness_mmHg") * MMHG_TO_CGS
    elif "p_sys_mmHg" in config and "a_sys_over_a_dia" in config:
        stiffness = compute_stiffness(
            float(config["p_sys_mmHg"]) * MMHG_TO_CGS,
            p_dia,
            float(config["a_sys_over_a_dia"]),
            1.0,
        )
    else:
        raise NetworkConfigError(
            "missing stiffness (stiffness_mmHg, stiffness_cgs, or p_sys_mmHg with a_sys_over_a_dia)"
        )

    fluid_config = config.get("fluid") or {}
    if set(fluid_config) - _FLUID_KEYS:
        raise NetworkConfigError(f"unknown fluid keys: {sorted(set(fluid_config) - _FLUID_KEYS)}")
    fluid = FluidConstants(**{k: float(v) for k, v in fluid_config.items()})

    wall = WallModel(stiffness, p_dia, {v.id: v.area for v in vessels})
    r_min = float(config.get("r_min_cm", DEFAULT_MIN_RADIUS))

    net = ArterialNetwork(vessels, wall, fluid, period, DEFAULT_AREA_RATIO, r_min)
    if "area_ratio" in config:
        area_ratio = float(config["area_ratio"])
    elif net.bifurcations():
        area_ratio = median_area_ratio(net)
    else:
        area_ratio = DEFAULT_AREA_RATIO
    if area_ratio != DEFAULT_AREA_RATIO:
        net = ArterialNetwork(vessels, wall, fluid, period, area_ratio, r_min)
    logger.debug(
        "parsed network with %d vessels, K=%.6g, zeta=%.4g", len(vessels), stiffness, area_ratio
    )
    return net


def _positive(config, key):
    try:
        value = float(config[key])
    except KeyError:
        raise NetworkConfigError(f"missing key {key!r}") from None
    except (TypeError, ValueError):
        raise NetworkConfigError(f"{key} must be a number") from None
    if not value > 0:
        raise NetworkConfigError(f"{key} must be positive")
    return value


def serialize_network(net):
    """Write ``net`` as YAML text that :func:`parse_network` maps back to ``net``.

    Pressures are written in CGS units so the round trip is exact.
    """
    config = {
        "vessels": [
            {
                "id": v.id,
                "length_cm": float(v.length),
                "radius_cm": float(v.radius),
                "children": list(v.children),
                "side": v.side,
            }
            for v in net.vessels
        ],
        "period_s": float(net.period),
        "p_dia_cgs": float(net.wall.p_dia),
        "stiffness_cgs": float(net.wall.stiffness),
        "area_ratio": float(net.area_ratio),
        "r_min_cm": float(net.r_min),
        "fluid": {
            "density": float(net.fluid.density),
            "viscosity": float(net.fluid.viscosity),
            "profile_exponent": float(net.fluid.profile_exponent),
        },
    }
    return yaml.safe_dump(config, sort_keys=False)


def load_network(path):
    with open(path) as stream:
        return parse_network(stream.read())
