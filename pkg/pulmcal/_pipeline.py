"""
Pipeline stages and their artifacts.

Each stage writes its files into the artifact directory and records them in
``manifest.yaml`` together with a hash of the configuration that produced
them. A stage whose hash and files are unchanged is skipped.
"""
import logging
import os

import joblib
import numpy as np
import pandas as pd
import scipy
import sklearn
import yaml
from sklearn.model_selection import train_test_split

from ._analysis import (
    band_frame,
    compare_posteriors,
    correlation_report,
    histogram_frame,
    relative_change,
    severity_metrics,
    write_plot_data,
)
from ._calibration import (
    PRIORS,
    SOURCE_SIZES,
    SOURCES,
    EmulatorForwardModel,
    ObservationVector,
    PdeForwardModel,
    calibrate,
    make_synthetic_observations,
    posterior_mean_prediction,
    prediction_coverage,
    propagate_uncertainty,
    read_chain_csv,
    summarize_chain,
    write_chain_csv,
)
from ._config import file_sha256, section_hash
from ._emulator import (
    PcaGpEmulator,
    emulator_validation,
    flag_nonphysiological,
    lhs_design,
    load_emulator,
    save_emulator,
)
from ._exceptions import (
    ConfigHashMismatchError,
    DataValidationError,
    MissingArtifactError,
    NumericalError,
)
from ._network import load_network
from ._solver import (
    N_SAMPLES,
    PARAMETER_NAMES,
    SIGNALS,
    InletFlow,
    simulate,
    simulate_design,
)
from ._version import __version__

logger = logging.getLogger(__name__)

STAGES = ("design", "simulate", "train", "synthesize", "calibrate", "propagate", "analyze")
MANIFEST_NAME = "manifest.yaml"
OUTPUT_COLUMNS = [f"{signal}_{k:02d}" for signal in SIGNALS for k in range(N_SAMPLES)]


def preprocess_flows(q_mpa, q_lpa, q_rpa, floor=False):
    """Shift the MPA flow so its mean equals the summed mean LPA and RPA flows.

    Parameters
    ----------
    q_mpa, q_lpa, q_rpa : array-like
        Flows sampled over one period on the same time grid.

    floor : bool, default=False
        Shift further up so the adjusted MPA flow is nonnegative. This breaks
        the mean balance again, which is reported as a warning.

    Returns
    -------
    q_mpa : ndarray
    """
    q_mpa = np.asarray(q_mpa, dtype=float)
    q_lpa = np.asarray(q_lpa, dtype=float)
    q_rpa = np.asarray(q_rpa, dtype=float)
    if not q_mpa.shape == q_lpa.shape == q_rpa.shape:
        raise DataValidationError("flow series must share one time grid")
    shift = q_lpa.mean() + q_rpa.mean() - q_mpa.mean()
    adjusted = q_mpa + shift
    logger.info("MPA flow shifted by %.6g mL/s", shift)
    if floor and adjusted.min() < 0:
        lift = -adjusted.min()
        adjusted = adjusted + lift
        logger.warning(
            "floor shift of %.6g mL/s leaves MPA mean flow that much above the branch total", lift
        )
    return adjusted


def preprocess_flow_csv(source, target, floor=False):
    """Apply :func:`preprocess_flows` to a ``t, q_mpa, q_lpa, q_rpa`` table."""
    if not os.path.exists(source):
        raise DataValidationError(f"flow file not found: {source}")
    frame = pd.read_csv(source, comment="#")
    missing = {"t", "q_mpa", "q_lpa", "q_rpa"} - set(frame.columns)
    if missing:
        raise DataValidationError(f"flow CSV is missing columns {sorted(missing)}")
    frame["q_mpa"] = preprocess_flows(frame["q_mpa"], frame["q_lpa"], frame["q_rpa"], floor)
    frame.to_csv(target, index=False)
    return frame


def dependency_versions():
    return {
        "pulmcal": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "pandas": pd.__version__,
        "joblib": joblib.__version__,
        "pyyaml": yaml.__version__,
    }


def _write_csv(frame, path, header):
    with open(path, "w") as stream:
        for key, value in header.items():
            stream.write(f"# {key}: {value}\n")
        frame.to_csv(stream, index=False)


class Manifest:
    """``manifest.yaml`` of one artifact directory.

    Records, per stage, the configuration hash, the seed and the sha256 of
    every file the stage wrote. It holds no timestamps, so identical runs
    produce identical manifests.
    """

    def __init__(self, directory):
        self.directory = directory
        self.path = os.path.join(directory, MANIFEST_NAME)
        self.stages = {}
        if os.path.exists(self.path):
            with open(self.path) as stream:
                content = yaml.safe_load(stream) or {}
            self.stages = content.get("stages") or {}

    def intact(self, stage):
        entry = self.stages.get(stage)
        if entry is None:
            return False
        for name, digest in entry["files"].items():
            path = os.path.join(self.directory, name)
            if not os.path.exists(path) or file_sha256(path) != digest:
                return False
        return True

    def record(self, stage, config_hash, seed, files):
        self.stages[stage] = {
            "config_hash": config_hash,
            "seed": seed,
            "files": {
                os.path.relpath(path, self.directory): file_sha256(path) for path in sorted(files)
            },
        }

    def to_dict(self):
        return {
            "versions": dependency_versions(),
            "stages": {stage: self.stages[stage] for stage in STAGES if stage in self.stages},
        }

    def write(self):
        with open(self.path, "w") as stream:
            yaml.safe_dump(self.to_dict(), stream, sort_keys=False)


class Pipeline:
    """Runs pipeline stages against one artifact directory.

    Parameters
    ----------
    config : RunConfig

    force : bool, default=False
        Rebuild stages whose recorded configuration hash differs from the
        current one instead of raising :class:`ConfigHashMismatchError`.

    n_jobs : int, default=None
        Overrides the worker count of the simulate, train and propagate
        stages. ``None`` keeps the configured values.
    """

    def __init__(self, config, force=False, n_jobs=None):
        self.config = config
        self.force = force
        self.n_jobs = n_jobs
        self.directory = config.paths.artifacts
        os.makedirs(self.directory, exist_ok=True)
        self.manifest = Manifest(self.directory)
        self._hashes = {}
        self._network = None
        self._emulator = None

    def path(self, name):
        return os.path.join(self.directory, name)

    def _jobs(self, configured):
        return configured if self.n_jobs is None else self.n_jobs

    @property
    def network(self):
        if self._network is None:
            self._network = load_network(self._input(self.config.paths.network, "network"))
        return self._network

    @property
    def inlet(self):
        return InletFlow.from_csv(self._input(self.config.paths.inlet, "inlet"), self.network.period)

    @property
    def a_dia(self):
        return self.network.vessel(self.network.root).area

    @property
    def bounds(self):
        return np.asarray(self.config.design.bounds, dtype=float)

    @property
    def observations_path(self):
        return self.config.paths.observations or self.path("observations.csv")

    def _input(self, path, name):
        if not os.path.exists(path):
            raise DataValidationError(f"{name} file not found: {path}")
        return path

    def _require(self, name, *paths):
        for path in paths:
            if not os.path.exists(path):
                raise MissingArtifactError(f"missing artifact: {name}")

    def stage_hash(self, stage):
        if stage in self._hashes:
            return self._hashes[stage]
        cfg = self.config
        if stage == "design":
            value = section_hash(cfg.design)
        elif stage == "solver":
            inputs = (self._input(cfg.paths.network, "network"), self._input(cfg.paths.inlet, "inlet"))
            value = section_hash(cfg.simulate, files=inputs)
        elif stage == "simulate":
            value = section_hash(cfg.simulate, self.stage_hash("design"), self.stage_hash("solver"))
        elif stage == "train":
            value = section_hash(cfg.train, self.stage_hash("simulate"))
        elif stage == "synthesize":
            value = section_hash(cfg.synthesize, self.stage_hash("solver"))
        elif stage == "calibrate":
            if cfg.paths.observations is not None:
                data = file_sha256(self._input(cfg.paths.observations, "observations"))
            else:
                data = self.stage_hash("synthesize")
            model = self.stage_hash("solver" if cfg.calibrate.pde_in_the_loop else "train")
            value = section_hash(cfg.calibrate, model, data, self.stage_hash("design"))
        elif stage == "propagate":
            value = section_hash(cfg.propagate, self.stage_hash("calibrate"))
        elif stage == "analyze":
            value = section_hash(cfg.analyze, self.stage_hash("propagate"))
        else:
            raise ValueError(f"unknown stage {stage!r}")
        self._hashes[stage] = value
        return value

    def stage_seed(self, stage):
        cfg = self.config
        return {
            "design": cfg.design.seed,
            "simulate": cfg.design.seed,
            "train": cfg.train.seed,
            "synthesize": cfg.synthesize.seed,
            "calibrate": cfg.calibrate.seed,
            "propagate": cfg.propagate.seed,
            "analyze": cfg.calibrate.seed,
        }[stage]

    def run(self, stages=STAGES):
        """Run ``stages`` in pipeline order and return the manifest contents."""
        unknown = set(stages) - set(STAGES)
        if unknown:
            raise DataValidationError(f"unknown stages: {sorted(unknown)}")
        for stage in STAGES:
            if stage in stages:
                self.run_stage(stage)
        return self.manifest.to_dict()

    def run_stage(self, stage):
        config_hash = self.stage_hash(stage)
        entry = self.manifest.stages.get(stage)
        if entry is not None:
            if entry["config_hash"] != config_hash:
                if not self.force:
                    raise ConfigHashMismatchError(
                        f"{stage} artifacts in {self.directory} come from a different configuration; "
                        "use --force to rebuild them"
                    )
                logger.warning("rebuilding %s: configuration changed", stage)
            elif self.manifest.intact(stage):
                logger.info("%s is up to date", stage)
                return
        seed = self.stage_seed(stage)
        header = {"seed": seed, "config_hash": config_hash}
        logger.info("running stage %s", stage)
        files = getattr(self, f"_run_{stage}")(header)
        self.manifest.record(stage, config_hash, seed, files)
        self.manifest.write()
        for path in files:
            logger.info("wrote %s", path)

    def _run_design(self, header):
        cfg = self.config.design
        design = lhs_design(self.bounds, cfg.n_design, cfg.seed)
        path = self.path("design.csv")
        _write_csv(pd.DataFrame(design.theta, columns=list(PARAMETER_NAMES)), path, header)
        return [path]

    def read_design(self):
        path = self.path("design.csv")
        self._require("design", path)
        return pd.read_csv(path, comment="#")[list(PARAMETER_NAMES)].to_numpy()

    def _run_simulate(self, header):
        theta = self.read_design()
        opts = self.config.simulate.solver_options()
        outputs = simulate_design(
            self.network, theta, self.inlet, opts, n_jobs=self._jobs(self.config.simulate.n_jobs)
        )
        frame = pd.DataFrame(np.array([sim.model_vector for sim in outputs]), columns=OUTPUT_COLUMNS)
        frame.insert(0, "cycles_run", [sim.cycles_run for sim in outputs])
        frame.insert(0, "converged", [int(sim.converged) for sim in outputs])
        failed = int(len(outputs) - frame["converged"].sum())
        if failed:
            logger.warning("%d of %d simulations did not converge", failed, len(outputs))
        path = self.path("outputs.csv")
        _write_csv(frame, path, header)
        return [path]

    def read_outputs(self):
        path = self.path("outputs.csv")
        self._require("outputs", path)
        frame = pd.read_csv(path, comment="#")
        return frame[OUTPUT_COLUMNS].to_numpy(), frame["converged"].to_numpy().astype(bool)

    def _run_train(self, header):
        cfg = self.config.train
        theta = self.read_design()
        Y, converged = self.read_outputs()
        if len(theta) != len(Y):
            raise DataValidationError("design and outputs have different row counts")
        usable = converged & np.all(np.isfinite(Y), axis=1)
        flagged = flag_nonphysiological(Y, converged) & usable
        if cfg.exclude_nonphysiological:
            usable &= ~flagged
            logger.info("excluding %d non-physiological rows", int(flagged.sum()))
        elif flagged.any():
            logger.info("%d training rows exceed the physiological pressure range", int(flagged.sum()))
        rows = np.flatnonzero(usable)
        if len(rows) < 4:
            raise DataValidationError(f"only {len(rows)} usable simulations to train on")

        if cfg.test_fraction > 0:
            train_rows, test_rows = train_test_split(rows, test_size=cfg.test_fraction, random_state=cfg.seed)
        else:
            train_rows, test_rows = rows, rows
            logger.warning("no held-out simulations; validation is in-sample")

        emulator = PcaGpEmulator(
            n_components=cfg.n_components,
            variance_target=cfg.variance_target,
            n_iter=cfg.n_iter,
            learning_rate=cfg.learning_rate,
            bounds=self.bounds,
            n_jobs=self._jobs(cfg.n_jobs),
        ).fit(theta[train_rows], Y[train_rows])
        validation = emulator_validation(emulator, theta[test_rows], Y[test_rows])
        for row in validation.itertuples():
            logger.info("%s: relative RMSE %.4g, log10 MSE %.3f", row.signal, row.relative_rmse, row.log10_mse)

        model_path = self.path("emulator.joblib")
        save_emulator(emulator, model_path)
        validation_path = self.path("validation.csv")
        _write_csv(validation, validation_path, {**header, "n_train": len(train_rows), "n_test": len(test_rows)})
        return [model_path, validation_path]

    def _run_synthesize(self, header):
        cfg = self.config.synthesize
        if cfg.theta is None:
            raise DataValidationError("synthesize needs synthesize.theta in the run configuration")
        sim = simulate(self.network, cfg.theta, self.inlet, self.config.simulate.solver_options())
        if not sim.converged:
            raise NumericalError("synthetic-data simulation did not converge")
        observations = make_synthetic_observations(sim.model_vector, self.a_dia, cfg.noise_fraction, cfg.seed)
        path = self.path("observations.csv")
        observations.to_csv(path, self.network.period, {**header, "theta": list(cfg.theta)})
        return [path]

    def load_observations(self):
        self._require("observations", self.observations_path)
        return ObservationVector.from_csv(self.observations_path)

    def forward_model(self):
        if self.config.calibrate.pde_in_the_loop:
            return PdeForwardModel(self.network, self.inlet, self.config.simulate.solver_options())
        if self._emulator is None:
            path = self.path("emulator.joblib")
            self._require("emulator", path)
            self._emulator = load_emulator(path)
        return EmulatorForwardModel(self._emulator)

    def _run_calibrate(self, header):
        cfg = self.config.calibrate
        forward = self.forward_model()
        observations = self.load_observations()
        files = []
        for kind in cfg.priors:
            chain = calibrate(
                observations,
                forward,
                PRIORS[kind](self.bounds),
                self.a_dia,
                cfg.dram_options(),
                random_state=cfg.seed,
                noise_shape=cfg.noise_shape,
                noise_scale_fraction=cfg.noise_scale_fraction,
            )
            chain_path = self.path(f"chain_{kind}.csv")
            write_chain_csv(chain, chain_path, {**header, "prior": kind, "burn_in": cfg.burn_in})
            summary = {**header, "prior": kind, **summarize_chain(chain)}
            summary_path = self.path(f"summary_{kind}.yaml")
            with open(summary_path, "w") as stream:
                yaml.safe_dump(summary, stream, sort_keys=False)
            files += [chain_path, summary_path]
        return files

    def read_chain(self, kind):
        path = self.path(f"chain_{kind}.csv")
        self._require(f"chain_{kind}", path)
        return read_chain_csv(path, self.config.calibrate.burn_in)

    def _run_propagate(self, header):
        cfg = self.config.propagate
        forward = self.forward_model()
        observations = self.load_observations()
        times = np.arange(N_SAMPLES) * self.network.period / N_SAMPLES
        source_labels = np.repeat(SOURCES, SOURCE_SIZES)
        files = []
        for kind in self.config.calibrate.priors:
            chain = self.read_chain(kind)
            bands = propagate_uncertainty(
                chain, forward, self.a_dia, cfg.n_tail, random_state=cfg.seed, n_jobs=self._jobs(cfg.n_jobs)
            )
            coverage = prediction_coverage(bands, observations)
            logger.info("%s prior: prediction band covers %.1f%% of the data", kind, 100 * coverage)

            band_path = self.path(f"bands_{kind}.csv")
            _write_csv(band_frame(bands, times, N_SAMPLES), band_path, {**header, "prior": kind})

            observable = pd.DataFrame({"index": np.arange(len(source_labels)), "source": source_labels})
            for label, array in (("credible", bands.observable_credible), ("prediction", bands.observable_prediction)):
                for suffix, row in zip(("lo", "mid", "hi"), array):
                    observable[f"{label}_{suffix}"] = row
            observable["observed"] = observations.to_vector()
            observable_path = self.path(f"observable_bands_{kind}.csv")
            _write_csv(observable, observable_path, {**header, "prior": kind, "coverage": round(coverage, 6)})

            mean_path = self.path(f"posterior_mean_{kind}.csv")
            mean_vector = posterior_mean_prediction(chain, forward)
            mean_frame = pd.DataFrame(
                {"t": times, **{signal: mean_vector[k * N_SAMPLES : (k + 1) * N_SAMPLES] for k, signal in enumerate(SIGNALS)}}
            )
            _write_csv(mean_frame, mean_path, {**header, "prior": kind})
            files += [band_path, observable_path, mean_path]
        return files

    def _run_analyze(self, header):
        priors = self.config.calibrate.priors
        bins = self.config.analyze.histogram_bins
        chains = {kind: self.read_chain(kind) for kind in priors}
        histograms = {kind: histogram_frame(chain.post_burn_in, bins=bins) for kind, chain in chains.items()}
        bands = {}
        for kind in priors:
            path = self.path(f"bands_{kind}.csv")
            self._require(f"bands_{kind}", path)
            bands[kind] = pd.read_csv(path, comment="#")
        files = write_plot_data(self.path("plots"), histograms, bands, header=header)

        if len(priors) >= 2:
            comparison = compare_posteriors(chains[priors[0]].post_burn_in, chains[priors[1]].post_burn_in)
            comparison.insert(0, "priors", f"{priors[0]}-{priors[1]}")
            comparison_path = self.path("posterior_comparison.csv")
            _write_csv(comparison, comparison_path, header)
            files.append(comparison_path)

        mean_path = self.path(f"posterior_mean_{priors[0]}.csv")
        self._require(f"posterior_mean_{priors[0]}", mean_path)
        mean = pd.read_csv(mean_path, comment="#")
        metrics = severity_metrics(mean["pressure"], mean["lpa_flow"], mean["rpa_flow"])
        report = {
            **header,
            "prior": priors[0],
            **metrics.as_dict(),
            "parameters": {
                name: float(value) for name, value in zip(PARAMETER_NAMES, chains[priors[0]].posterior_mean())
            },
        }
        severity_path = self.path("severity.yaml")
        with open(severity_path, "w") as stream:
            yaml.safe_dump(report, stream, sort_keys=False)
        files.append(severity_path)
        return files


def run_pipeline(config, stages=STAGES, force=False, n_jobs=None):
    """Run ``stages`` of ``config`` and return the manifest contents."""
    return Pipeline(config, force=force, n_jobs=n_jobs).run(stages)


def _read_severity(directory):
    path = os.path.join(directory, "severity.yaml")
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: severity ({directory})")
    with open(path) as stream:
        return yaml.safe_load(stream)


def analyze_cohort(pairs, directory):
    """Correlate parameter changes with severity changes across subjects.

    Parameters
    ----------
    pairs : list of (str, str)
        ``(baseline, disease)`` artifact directories of completed runs.

    directory : str
        Where ``cohort_correlation.csv`` and ``plots/correlation_matrix.csv`` go.

    Returns
    -------
    report : DataFrame
    """
    parameter_rows, severity_rows = [], []
    for baseline_dir, disease_dir in pairs:
        baseline, disease = _read_severity(baseline_dir), _read_severity(disease_dir)
        parameter_rows.append(
            {
                name: float(relative_change(baseline["parameters"][name], disease["parameters"][name]))
                for name in PARAMETER_NAMES
            }
        )
        severity_rows.append(
            {
                metric: float(relative_change(baseline[metric], disease[metric]))
                for metric in ("flow_split", "mpap")
            }
        )
    report = correlation_report(pd.DataFrame(parameter_rows), pd.DataFrame(severity_rows))
    os.makedirs(directory, exist_ok=True)
    report.to_csv(os.path.join(directory, "cohort_correlation.csv"), index=False)
    write_plot_data(os.path.join(directory, "plots"), correlation=report)
    strong = report[report["strong"]]
    for row in strong.itertuples():
        logger.info("strong correlation: %s vs %s (rho=%.3f)", row.parameter, row.metric, row.rho)
    return report
