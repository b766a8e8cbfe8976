"""Run one configured experiment and write its artifacts."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .coupling_sim import CouplingSpec, evolve_ensemble
from .errors import ConfigError, ContractLabError, HypothesisError
from .models import DriftModel, validate_profile
from .psi_core import build_psi_tables, lemma1_residuals, mean_distance_bound
from .reporting import CsvTable, read_samples, sample_rows, write_csv, write_report
from .verify import (
    CheckRow,
    check_contraction,
    check_drift_consistency,
    check_gradient,
    check_harnack,
    check_lyapunov_moment,
    estimate_esm,
    probe_function,
)
from .wasserstein import CostKind, bootstrap_ci, sinkhorn_cross_check, wasserstein_exact

logger = logging.getLogger(__name__)

EXIT_PASS: int = 0
EXIT_CHECK_FAILED: int = 1
EXIT_CONFIG: int = 2
EXIT_NUMERICAL: int = 3

ROW_HEADER = ["t", "quantity", "estimate", "ci_lower", "ci_upper", "bound", "margin", "pass"]


@dataclass
class RunResult:
    """Outcome of one experiment."""

    success: bool
    exit_code: int
    artifacts: list[Path] = field(default_factory=list)
    report: Optional[dict] = None
    error: Optional[str] = None

    def __str__(self) -> str:
        if self.error:
            return f"exit {self.exit_code}: {self.error}"
        verdict = "all checks passed" if self.success else "some checks failed"
        return f"exit {self.exit_code}: {verdict} ({len(self.artifacts)} artifact(s))"


def exit_code_for(exc: BaseException) -> int:
    """2 for configuration and hypothesis problems, 3 for numerical ones."""
    if isinstance(exc, (ConfigError, HypothesisError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


@dataclass
class _Outcome:
    body: dict
    passed: bool
    tables: dict[str, CsvTable] = field(default_factory=dict)


def _rows_table(rows: list[CheckRow]) -> CsvTable:
    return CsvTable(
        header=ROW_HEADER,
        rows=[[r.t, r.quantity, r.estimate, r.ci[0], r.ci[1], r.bound, r.margin, r.passed] for r in rows],
    )


def _model(config: ExperimentConfig) -> DriftModel:
    return config.build_model()


def _psi_table(config: ExperimentConfig) -> _Outcome:
    run = config.run
    profile = config.build_profile(_model(config) if config.profile is None else None)
    tables = build_psi_tables([(profile, p) for p in run.p], run.tol, run.threads)
    entries = []
    csvs = {}
    passed = True
    for table in tables:
        residuals = lemma1_residuals(table)
        ok = residuals.passes()
        passed &= ok
        constants = table.constants
        entries.append({
            "p": table.p,
            "constants": {"c1_tilde": constants.c1_tilde, "c2_tilde": constants.c2_tilde, "lambda": constants.lam, "c_p": constants.c_p},
            "residuals": {
                "ode": residuals.ode_residual,
                "pinching": residuals.pinching_violation,
                "lower_ratio": residuals.lower_ratio,
                "upper_ratio": residuals.upper_ratio,
                "drift_margin": residuals.drift_margin,
                "monotone": residuals.monotone,
                "concave": residuals.concave,
            },
            "nodes": residuals.nodes,
            "pass": ok,
        })
        csvs[f"psi_p{table.p:g}.csv"] = CsvTable(
            header=["r", "psi", "psi_prime", "psi_double_prime"],
            rows=[list(row) for row in table.rows()],
            comments=[
                f"c1_tilde={constants.c1_tilde!r}",
                f"c2_tilde={constants.c2_tilde!r}",
                f"lambda={constants.lam!r}",
                f"c_p={constants.c_p!r}",
            ],
        )
    body = {"check": "psi-table", "profile": profile.describe(), "tables": entries, "overall_pass": passed}
    return _Outcome(body, passed, csvs)


def _validate(config: ExperimentConfig) -> _Outcome:
    run = config.run
    model = _model(config)
    profile = config.build_profile(model)
    report = validate_profile(model, profile, tol=run.tol, seed=run.seed, threads=run.threads)
    body: dict = {"check": "validate", "model": model.describe(), "profile": profile.describe(), "validation": report.to_dict()}
    passed = report.passed
    if model.potential is not None and model.gradient is not None:
        grid = np.linspace(-2.0, 2.0, 9)
        points = np.stack([grid] * model.dim, axis=1)
        drift = check_drift_consistency(model, points)
        body["drift_consistency"] = {
            "gradient_error": drift.gradient_error,
            "hessian_error": drift.hessian_error,
            "tolerance": drift.tolerance,
            "pass": drift.passed,
        }
        passed &= drift.passed
    body["overall_pass"] = passed
    return _Outcome(body, passed)


def _couple_run(config: ExperimentConfig) -> _Outcome:
    run = config.run
    model = _model(config)
    profile = None
    try:
        profile = config.build_profile(model)
    except ConfigError:
        logger.info("no profile configured; using cutoff radius 1")
    spec = CouplingSpec.reflection(profile.r0 if profile is not None else 1.0)
    times = sorted(run.times)
    ensemble = evolve_ensemble(
        model, spec, run.x, run.y, run.s, times[-1], run.dt, run.paths, run.seed,
        snapshot_times=times, moments=run.p, threads=run.threads,
    )
    rho_s = float(model.distance(run.s, run.x, run.y))
    rows = []
    snapshots = []
    for snap in ensemble.snapshots:
        mean, se = snap.moment(1.0)
        entry = {"t": snap.t, "mean_distance": mean, "se": se, "coupled_fraction": float(np.mean(snap.distance == 0))}
        for p in run.p:
            entry[f"moment_{p:g}"] = snap.moment(p)[0]
        if profile is not None:
            entry["mean_bound"] = mean_distance_bound(profile, rho_s, snap.t - run.s)
        snapshots.append(entry)
        rows.append([entry[k] for k in entry])
    header = list(snapshots[0].keys())
    tables = {"distances.csv": CsvTable(header=header, rows=rows)}
    if config.output.samples:
        terminal = ensemble.terminal
        tables["samples.csv"] = sample_rows(terminal.x, terminal.y, ensemble.coupled_at)
    body = {
        "check": "couple-run",
        "model": model.describe(),
        "coupling": spec.describe(),
        "rho_s": rho_s,
        "summary": ensemble.summary,
        "snapshots": snapshots,
        "overall_pass": True,
    }
    return _Outcome(body, True, tables)


def _contract_check(config: ExperimentConfig) -> _Outcome:
    run = config.run
    model = _model(config)
    profile = config.build_profile(model)
    validation = validate_profile(model, profile, seed=run.seed, threads=run.threads)
    if not validation.passed:
        raise HypothesisError(f"model '{model.label}' violates the {profile.label} profile bound: {validation}", validation)
    reports = []
    tables = {}
    for p in run.p:
        report = check_contraction(
            model, profile, run.x, run.y, run.s, run.times, p, run.paths, run.dt, run.seed,
            threads=run.threads, validation=validation, replicates=run.bootstrap, level=run.level,
        )
        reports.append(report)
        tables[f"contraction_p{p:g}.csv"] = _rows_table(report.rows)
    passed = all(r.passed for r in reports)
    body = {"check": "contract-check", "runs": [r.to_dict() for r in reports], "overall_pass": passed}
    return _Outcome(body, passed, tables)


def _gradient_check(config: ExperimentConfig) -> _Outcome:
    run = config.run
    model = _model(config)
    profile = config.build_profile(model)
    report = check_gradient(
        model, profile, probe_function(run.test_function), run.x, run.s, run.times, run.h,
        run.paths, run.dt, run.seed, run.threads, use_closed_form=run.constants == "closed-form",
    )
    return _Outcome(report.to_dict(), report.passed, {"gradient.csv": _rows_table(report.rows)})


def _harnack_check(config: ExperimentConfig) -> _Outcome:
    run = config.run
    model = _model(config)
    p = run.p[0]
    horizon = run.horizon if run.horizon is not None else run.s + max(run.times)
    report = check_harnack(
        model, run.k1, run.k2, p, run.x, run.y, run.s, horizon, probe_function(run.test_function),
        run.paths, run.dt, run.seed, run.threads,
    )
    return _Outcome(report.to_dict(), report.passed, {"harnack.csv": _rows_table([report.row])})


def _esm_run(config: ExperimentConfig) -> _Outcome:
    run = config.run
    model = _model(config)
    t = max(run.times)
    report = estimate_esm(
        model, t, run.start_times, run.law("law_a"), run.law("law_b"), run.paths, run.dt, run.seed, run.threads,
    )
    if model.lyapunov is not None:
        report.lyapunov = check_lyapunov_moment(model, t, run.start_times, run.paths, run.dt, run.seed, threads=run.threads)
    gaps = CsvTable(
        header=["s", "gap", "se"],
        rows=[[s, g, se] for s, g, se in zip(report.start_times, report.gaps, report.gap_se)],
    )
    return _Outcome(report.to_dict(), report.passed, {"esm_gaps.csv": gaps})


def _wasserstein(config: ExperimentConfig) -> _Outcome:
    run = config.run
    if not run.samples_a or not run.samples_b:
        raise ConfigError("run.samples_a", "both sample files are required")
    try:
        mu = read_samples(Path(run.samples_a))
        nu = read_samples(Path(run.samples_b))
    except (OSError, ValueError) as exc:
        raise ConfigError("run.samples_a", f"cannot read samples: {exc}") from None
    p = run.p[0]
    cost = CostKind(run.cost)
    result = wasserstein_exact(mu, nu, p, cost)
    body: dict = {"check": "wasserstein", **result.to_dict(), "p": p, "ci": None}
    if run.bootstrap:
        interval = bootstrap_ci(mu, nu, p, cost, replicates=run.bootstrap, level=run.level, seed=run.seed, threads=run.threads)
        body["ci"] = [interval.lower, interval.upper]
    if run.sinkhorn is not None:
        body["sinkhorn"] = sinkhorn_cross_check(mu, nu, p, run.sinkhorn, cost).to_dict()
    body["overall_pass"] = True
    return _Outcome(body, True)


# Single source of truth for how each experiment kind runs.
HANDLERS: dict[str, Callable[[ExperimentConfig], _Outcome]] = {
    "psi-table": _psi_table,
    "validate": _validate,
    "couple-run": _couple_run,
    "contract-check": _contract_check,
    "gradient-check": _gradient_check,
    "harnack-check": _harnack_check,
    "esm-run": _esm_run,
    "wasserstein": _wasserstein,
}


def _embed(table: CsvTable, config: ExperimentConfig) -> CsvTable:
    resolved = json.dumps(config.resolved(), sort_keys=True, default=str)
    table.comments = [f"seed={config.run.seed}", f"config={resolved}", *table.comments]
    return table


def run(config: ExperimentConfig, force: bool = False) -> RunResult:
    """Run ``config`` and write ``report.json`` plus CSV data files.

    Exit code 0 iff every pass flag is true, 1 if a check failed, 2 for
    configuration or hypothesis errors, 3 for numerical errors.
    """
    directory = config.output.directory
    logger.info("running %s (seed %d) into %s", config.kind, config.run.seed, directory)
    try:
        outcome = HANDLERS[config.kind](config)
    except HypothesisError as exc:
        body = {
            "check": config.kind,
            "config": config.resolved(),
            "seed": config.run.seed,
            "error": str(exc),
            "validation": exc.report.to_dict() if hasattr(exc.report, "to_dict") else None,
            "overall_pass": False,
        }
        written = write_report(directory, body, force)
        artifacts = [written.path] if written.path else []
        return RunResult(False, EXIT_CONFIG, artifacts, body, str(exc))
    except ContractLabError as exc:
        return RunResult(False, exit_code_for(exc), error=str(exc))

    body = {**outcome.body, "config": config.resolved(), "seed": config.run.seed, "dt": config.run.dt}
    written = write_report(directory, body, force)
    if not written.success:
        return RunResult(False, EXIT_CONFIG, error=written.error)
    artifacts = [written.path]
    for name, table in outcome.tables.items():
        artifacts.append(write_csv(directory / name, _embed(table, config)))
    code = EXIT_PASS if outcome.passed else EXIT_CHECK_FAILED
    return RunResult(outcome.passed, code, artifacts, body)  # type: ignore[arg-type]
