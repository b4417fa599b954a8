"""
Run configuration read from YAML.

Every section maps onto a frozen dataclass. Unknown keys are rejected and
relative paths are resolved against the directory holding the config file.
"""
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Tuple

import numpy as np
import yaml

from ._calibration import PRIORS, DramOptions
from ._exceptions import DataValidationError
from ._solver import PARAMETER_BOUNDS, SolverOptions

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PathsConfig:
    """Input files and the artifact directory.

    ``observations`` may be left out when the ``synthesize`` stage produces
    the data.
    """

    network: str
    inlet: str
    artifacts: str
    observations: Optional[str] = None


@dataclass(frozen=True)
class DesignConfig:
    n_design: int = 500
    seed: int = 0
    bounds: Tuple[Tuple[float, float], ...] = PARAMETER_BOUNDS

    def __post_init__(self):
        if self.n_design < 2:
            raise DataValidationError("n_design must be at least 2")
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.shape != (len(PARAMETER_BOUNDS), 2) or np.any(bounds[:, 0] >= bounds[:, 1]):
            raise DataValidationError("design bounds must be four increasing [low, high] pairs")
        object.__setattr__(self, "bounds", tuple(map(tuple, bounds.tolist())))


@dataclass(frozen=True)
class SimulateConfig:
    n_jobs: Optional[int] = None
    time_steps: int = 2**13
    max_time_steps: int = 2**16
    cfl: float = 0.5
    cells_per_cm: float = 4.0
    min_cells: int = 8
    max_cycles: int = 30
    tolerance: float = 1e-3

    def solver_options(self):
        return SolverOptions(
            time_steps=self.time_steps,
            max_time_steps=self.max_time_steps,
            cfl=self.cfl,
            cells_per_cm=self.cells_per_cm,
            min_cells=self.min_cells,
            max_cycles=self.max_cycles,
            tolerance=self.tolerance,
        )


@dataclass(frozen=True)
class TrainConfig:
    """Emulator training.

    Twenty components by default; ``n_components`` set to ``None`` picks the
    count from ``variance_target`` instead.
    ``test_fraction`` of the converged simulations is held out for validation.
    """

    n_components: Optional[int] = 20
    variance_target: float = 0.999
    n_iter: int = 1000
    learning_rate: float = 0.1
    test_fraction: float = 0.05
    exclude_nonphysiological: bool = False
    seed: int = 0
    n_jobs: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.test_fraction < 1:
            raise DataValidationError("test_fraction must be in [0, 1)")


@dataclass(frozen=True)
class SynthesizeConfig:
    theta: Optional[Tuple[float, ...]] = None
    noise_fraction: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.theta is not None:
            if len(self.theta) != len(PARAMETER_BOUNDS):
                raise DataValidationError("synthesize.theta must have four entries")
            object.__setattr__(self, "theta", tuple(float(x) for x in self.theta))


@dataclass(frozen=True)
class CalibrateConfig:
    n_iter: int = 10000
    burn_in: int = 2000
    priors: Tuple[str, ...] = ("gaussian", "uniform")
    seed: int = 0
    pde_in_the_loop: bool = False
    noise_shape: float = 1.0
    noise_scale_fraction: float = 0.01

    def __post_init__(self):
        priors = (self.priors,) if isinstance(self.priors, str) else tuple(self.priors)
        unknown = set(priors) - set(PRIORS)
        if not priors or unknown:
            raise DataValidationError(f"priors must be drawn from {sorted(PRIORS)}")
        object.__setattr__(self, "priors", priors)
        self.dram_options()

    def dram_options(self):
        return DramOptions(n_iter=self.n_iter, burn_in=self.burn_in)


@dataclass(frozen=True)
class PropagateConfig:
    n_tail: int = 2000
    seed: int = 0
    n_jobs: Optional[int] = None


@dataclass(frozen=True)
class AnalyzeConfig:
    histogram_bins: int = 30


@dataclass(frozen=True)
class RunConfig:
    """Full pipeline configuration.

    Attributes
    ----------
    paths : PathsConfig

    design, simulate, train, synthesize, calibrate, propagate, analyze :
        Per-stage options; omitted sections take their defaults.

    source : str
        Path of the YAML file, or ``None`` when built in code.
    """

    paths: PathsConfig
    design: DesignConfig = DesignConfig()
    simulate: SimulateConfig = SimulateConfig()
    train: TrainConfig = TrainConfig()
    synthesize: SynthesizeConfig = SynthesizeConfig()
    calibrate: CalibrateConfig = CalibrateConfig()
    propagate: PropagateConfig = PropagateConfig()
    analyze: AnalyzeConfig = AnalyzeConfig()
    source: Optional[str] = field(default=None, compare=False)


_SECTIONS = {f.name: f.type for f in fields(RunConfig) if f.name != "source"}


def _build_section(name, cls, raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise DataValidationError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise DataValidationError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise DataValidationError(f"invalid section {name!r}: {exc}") from None


def parse_run_config(text, base_dir="."):
    """Build a :class:`RunConfig` from YAML text.

    Parameters
    ----------
    text : str

    base_dir : str, default="."
        Directory that relative paths are resolved against.
    """
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise DataValidationError(f"unreadable run configuration: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataValidationError("run configuration must be a mapping")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise DataValidationError(f"unknown sections in run configuration: {sorted(unknown)}")
    if "paths" not in raw:
        raise DataValidationError("run configuration needs a 'paths' section")

    paths = _build_section("paths", PathsConfig, raw["paths"])
    resolved = {
        key: (value if value is None or os.path.isabs(value) else os.path.normpath(os.path.join(base_dir, value)))
        for key, value in asdict(paths).items()
    }
    sections = {"paths": PathsConfig(**resolved)}
    for name, cls in _SECTIONS.items():
        if name != "paths" and name in raw:
            sections[name] = _build_section(name, cls, raw[name])
    return RunConfig(**sections)


def load_run_config(path):
    if not os.path.exists(path):
        raise DataValidationError(f"run configuration not found: {path}")
    with open(path) as stream:
        text = stream.read()
    config = parse_run_config(text, os.path.dirname(os.path.abspath(path)))
    logger.debug("run configuration read from %s", path)
    return RunConfig(**{**{name: getattr(config, name) for name in _SECTIONS}, "source": path})


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as stream:
        for block in iter(lambda: stream.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def section_hash(section, *upstream, files=()):
    """sha256 over a config section, upstream hashes and input file contents.

    Worker counts are left out; they do not change results.
    """
    payload = {
        "section": {k: v for k, v in asdict(section).items() if k != "n_jobs"},
        "upstream": list(upstream),
        "files": [file_sha256(path) for path in files],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
