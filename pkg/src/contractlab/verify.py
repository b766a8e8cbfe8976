"""One-sided numerical checks of the contraction, gradient, Harnack and ESM bounds.

Every check compares an upper confidence bound of a Monte Carlo estimate
against a theoretical bound and never asserts tightness. Checks that rely on
the index bound refuse to run (``HypothesisError``) unless
``validate_profile`` passes for the model and profile.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coupling_sim import (
    DEFAULT_DT,
    CouplingSpec,
    evolve_ensemble,
    evolve_marginal,
    girsanov_energy,
    simulate_radial_dominant,
)
from .errors import DomainError, HypothesisError, UnsupportedModelError
from .models import (
    ArrayFunc,
    ArrayLike,
    CurvatureProfile,
    DriftModel,
    IndexValidationReport,
    linear_bound_profile,
    validate_profile,
)
from .psi_core import (
    build_psi,
    contraction_constants,
    cor1_constants,
    closed_form_mean_bound,
    mean_distance_bound,
    moment_bound,
)
from .streams import derive_seed
from .wasserstein import (
    ASSIGNMENT_LIMIT,
    CostKind,
    EmpiricalMeasure,
    bootstrap_ci,
    pairing_cost,
    wasserstein_1d_quantile,
    wasserstein_exact,
    wasserstein_tilde,
)

logger = logging.getLogger(__name__)

Z_SCORE: float = 3.0
RATE_TOLERANCE: float = 0.1
RELIABILITY_FRACTION: float = 0.25
MAX_H_DOUBLINGS: int = 4
ESM_STOP_SE: float = 2.0


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeFunction:
    """Scalar test function applied to the first coordinate, with known constants."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    derivative_sup: float
    third_sup: float
    lower: Optional[float] = None
    upper: Optional[float] = None
    exp_rate: Optional[float] = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        first = x[..., 0] if x.ndim >= 2 else x
        return np.asarray(self.f(first), dtype=float)

    @property
    def bounded_non_negative(self) -> bool:
        return self.lower is not None and self.lower >= 0 and self.upper is not None


PROBE_FUNCTIONS: dict[str, ProbeFunction] = {
    "sin": ProbeFunction("sin", np.sin, 1.0, 1.0, -1.0, 1.0),
    "tanh": ProbeFunction("tanh", np.tanh, 1.0, 2.0, -1.0, 1.0),
    "exp-clipped": ProbeFunction(
        "exp-clipped", lambda v: np.exp(np.clip(v, -2.0, 2.0)), math.exp(2.0), math.exp(2.0),
        math.exp(-2.0), math.exp(2.0),
    ),
    "shifted-sin": ProbeFunction("shifted-sin", lambda v: 2.0 + np.sin(v), 1.0, 1.0, 1.0, 3.0),
    "constant": ProbeFunction("constant", lambda v: np.ones_like(v), 0.0, 0.0, 1.0, 1.0),
    "exp-half": ProbeFunction("exp-half", lambda v: np.exp(0.5 * v), math.inf, math.inf, 0.0, None, 0.5),
}


def probe_function(name: str) -> ProbeFunction:
    try:
        return PROBE_FUNCTIONS[name]
    except KeyError:
        known = ", ".join(sorted(PROBE_FUNCTIONS))
        raise DomainError(f"unknown test function '{name}' (known: {known})") from None


# ---------------------------------------------------------------------------
# Report types
# ---------------------------------------------------------------------------


@dataclass
class CheckRow:
    """One compared quantity at one time: estimate, interval, bound, margin."""

    t: float
    quantity: str
    estimate: float
    ci: tuple[float, float]
    bound: float
    margin: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "quantity": self.quantity,
            "estimate": self.estimate,
            "ci": list(self.ci),
            "bound": self.bound,
            "margin": self.margin,
            "pass": self.passed,
            **self.extra,
        }


def _upper_row(t: float, quantity: str, estimate: float, lower: float, upper: float, bound: float, **extra) -> CheckRow:
    margin = bound - upper
    return CheckRow(t, quantity, estimate, (lower, upper), bound, margin, margin >= 0, extra)


@dataclass
class ContractionReport:
    model: str
    profile: dict
    p: float
    s: float
    rho_s: float
    constants: dict
    rows: list[CheckRow]
    fitted_rate: Optional[float]
    r_squared: Optional[float]
    rate_floor: float
    validation: IndexValidationReport
    n_paths: int
    dt: float
    seed: int

    @property
    def rate_passed(self) -> bool:
        return self.fitted_rate is None or self.fitted_rate >= self.rate_floor

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows) and self.rate_passed

    def __str__(self) -> str:
        worst = min(row.margin for row in self.rows)
        verdict = "pass" if self.passed else "FAIL"
        return f"contraction check {verdict} ({len(self.rows)} comparisons, smallest margin {worst:.3e})"

    def to_dict(self) -> dict:
        return {
            "check": "contract-check",
            "model": self.model,
            "params": {"profile": self.profile, "p": self.p, "s": self.s, "rho_s": self.rho_s, "paths": self.n_paths},
            "constants": self.constants,
            "times": [row.to_dict() for row in self.rows],
            "fitted_rate": self.fitted_rate,
            "r_squared": self.r_squared,
            "rate_floor": self.rate_floor,
            "rate_pass": self.rate_passed,
            "validation": self.validation.to_dict(),
            "overall_pass": self.passed,
            "seed": self.seed,
            "dt": self.dt,
        }


@dataclass
class GradientReport:
    model: str
    function: str
    x: list[float]
    s: float
    h: float
    reliable: bool
    constants: dict
    rows: list[CheckRow]
    n_paths: int
    dt: float
    seed: int

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def to_dict(self) -> dict:
        return {
            "check": "gradient-check",
            "model": self.model,
            "params": {"function": self.function, "x": self.x, "s": self.s, "h": self.h, "reliable": self.reliable, "paths": self.n_paths},
            "constants": self.constants,
            "times": [row.to_dict() for row in self.rows],
            "overall_pass": self.passed,
            "seed": self.seed,
            "dt": self.dt,
        }


@dataclass
class HarnackReport:
    model: str
    function: str
    p: float
    k1: float
    k2: float
    rho_s: float
    factor: float
    method: str
    row: CheckRow
    replay: dict
    n_paths: int
    dt: float
    seed: int

    @property
    def replay_passed(self) -> bool:
        return bool(self.replay.get("pass", True))

    @property
    def passed(self) -> bool:
        return self.row.passed and self.replay_passed

    def to_dict(self) -> dict:
        return {
            "check": "harnack-check",
            "model": self.model,
            "params": {"function": self.function, "p": self.p, "k1": self.k1, "k2": self.k2, "rho_s": self.rho_s, "paths": self.n_paths},
            "factor": self.factor,
            "log_factor": math.log(self.factor),
            "method": self.method,
            "times": [self.row.to_dict()],
            "girsanov": self.replay,
            "overall_pass": self.passed,
            "seed": self.seed,
            "dt": self.dt,
        }


@dataclass
class LyapunovReport:
    model: str
    c1: float
    c2: float
    rows: list[CheckRow]
    drift_excess: float
    laplacian_comparison: dict

    @property
    def bound(self) -> float:
        return self.c1 / self.c2

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows) and self.drift_excess <= 1e-9

    def to_dict(self) -> dict:
        return {
            "check": "lyapunov",
            "model": self.model,
            "params": {"C1": self.c1, "C2": self.c2, "bound": self.bound},
            "times": [row.to_dict() for row in self.rows],
            "drift_excess": self.drift_excess,
            "laplacian_comparison": self.laplacian_comparison,
            "overall_pass": self.passed,
        }


@dataclass
class EsmReport:
    model: str
    t: float
    start_times: list[float]
    gaps: list[float]
    gap_se: list[float]
    fitted_rate: Optional[float]
    r_squared: Optional[float]
    rate_floor: Optional[float]
    stopped_early: bool
    law_rows: list[CheckRow]
    moments: list[dict]
    n_paths: int
    dt: float
    seed: int
    lyapunov: Optional[LyapunovReport] = None

    @property
    def rate_passed(self) -> bool:
        if self.rate_floor is None or self.fitted_rate is None:
            return True
        return self.fitted_rate >= self.rate_floor

    @property
    def passed(self) -> bool:
        lyapunov_ok = self.lyapunov is None or self.lyapunov.passed
        return (
            all(g >= 0 for g in self.gaps)
            and self.rate_passed
            and all(row.passed for row in self.law_rows)
            and lyapunov_ok
        )

    def to_dict(self) -> dict:
        gaps = [
            {"s": s, "gap": g, "se": se}
            for s, g, se in zip(self.start_times, self.gaps, self.gap_se)
        ]
        return {
            "check": "esm-run",
            "model": self.model,
            "params": {"t": self.t, "start_times": self.start_times, "paths": self.n_paths},
            "gaps": gaps,
            "fitted_rate": self.fitted_rate,
            "r_squared": self.r_squared,
            "rate_floor": self.rate_floor,
            "rate_pass": self.rate_passed,
            "stopped_early": self.stopped_early,
            "times": [row.to_dict() for row in self.law_rows],
            "moments": self.moments,
            "lyapunov": None if self.lyapunov is None else self.lyapunov.to_dict(),
            "overall_pass": self.passed,
            "seed": self.seed,
            "dt": self.dt,
        }


@dataclass
class SupermartingaleReport:
    profile: dict
    p: float
    r_init: float
    lam: float
    rows: list[CheckRow]
    monotone: bool

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows) and self.monotone


@dataclass
class DriftConsistencyReport:
    gradient_error: float
    hessian_error: Optional[float]
    tolerance: float

    @property
    def passed(self) -> bool:
        worst = max(self.gradient_error, self.hessian_error or 0.0)
        return worst <= self.tolerance


@dataclass
class ProfileSearch:
    best: CurvatureProfile
    lam: float
    candidates: list[tuple[float, float, float]]


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def fit_decay_rate(elapsed: Sequence[float], values: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    """OLS fit of log(values) against elapsed time; returns (rate, R^2).

    Non-positive values are dropped; fewer than two remaining points give (None, None).
    """
    t = np.asarray(elapsed, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = v > 0
    if keep.sum() < 2 or np.ptp(t[keep]) == 0:
        return None, None
    t, y = t[keep], np.log(v[keep])
    slope, intercept = np.polyfit(t, y, 1)
    residual = y - (slope * t + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 - float(np.sum(residual**2) / total) if total > 0 else 1.0
    return float(-slope), r_squared


def harnack_factor(k1: float, k2: float, p: float, rho: float, elapsed: float) -> float:
    """exp(p / (4(p-1)) * integral of xi^2)."""
    if not p > 1:
        raise DomainError(f"the Harnack inequality needs p > 1, got {p}")
    return math.exp(p / (4.0 * (p - 1.0)) * girsanov_energy(k1, k2, rho, elapsed))


def laplacian_comparison(k_eps: float, dim: int, eps: float, s: float) -> float:
    """sqrt(k (d-1)) coth(sqrt(k / (d-1)) min(s, eps)), with its k -> 0 limit."""
    if k_eps < 0 or not eps > 0 or not s > 0:
        raise DomainError("laplacian comparison needs k >= 0 and positive eps, s")
    if dim == 1:
        return 0.0
    r = min(s, eps)
    if k_eps == 0:
        return (dim - 1) / r
    return math.sqrt(k_eps * (dim - 1)) / math.tanh(math.sqrt(k_eps / (dim - 1)) * r)


def lyapunov_generator(model: DriftModel, t: float, x: ArrayLike) -> np.ndarray:
    """(L_t + d/dt) rho_t(., 0)^2 evaluated at x."""
    pts = model.points(x)
    scale2 = model.scale(t) ** 2
    sq = np.sum(pts**2, axis=-1)
    inner = np.sum(pts * model.drift_at(t, pts), axis=-1)
    return 2.0 * model.dim + 2.0 * scale2 * inner + 2.0 * model.log_scale_rate(t) * scale2 * sq


def _gate(model: DriftModel, profile: CurvatureProfile, validation: Optional[IndexValidationReport], threads: int) -> IndexValidationReport:
    report = validation or validate_profile(model, profile, threads=threads)
    if not report.passed:
        raise HypothesisError(
            f"model '{model.label}' violates the {profile.label} profile bound: {report}",
            report,
        )
    return report


def _linear_bound(model: DriftModel, k1: Optional[float], k2: Optional[float]) -> tuple[float, float]:
    if k1 is not None and k2 is not None:
        return k1, k2
    if model.linear_bound is None:
        raise DomainError(f"model '{model.label}' has no linear index bound; pass k1 and k2")
    return model.linear_bound


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), se


# ---------------------------------------------------------------------------
# Contraction
# ---------------------------------------------------------------------------


def check_contraction(
    model: DriftModel,
    profile: CurvatureProfile,
    x: ArrayLike,
    y: ArrayLike,
    s: float,
    times: Sequence[float],
    p: float,
    n_paths: int,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    threads: int = 1,
    validation: Optional[IndexValidationReport] = None,
    bias_check: bool = True,
    replicates: int = 100,
    level: float = 0.95,
) -> ContractionReport:
    """Compare coupled-distance statistics against the contraction bounds.

    Upper confidence bounds are estimate + 3 SE + |estimate(dt) - estimate(dt/2)|.
    """
    report = _gate(model, profile, validation, threads)
    if not times or min(times) < s:
        raise DomainError("check times must be at or after the start time")
    times = sorted(times)
    rho_s = float(model.distance(s, x, y))
    spec = CouplingSpec.reflection(profile.r0)
    ensemble = evolve_ensemble(
        model, spec, x, y, s, times[-1], dt, n_paths, seed,
        snapshot_times=times, moments=(1.0, p), threads=threads,
    )
    half = None
    if bias_check and times[-1] > s:
        half = evolve_ensemble(
            model, spec, x, y, s, times[-1], dt / 2.0, n_paths, seed,
            snapshot_times=times, moments=(1.0, p), threads=threads,
        )

    c_p, lam, c_uniform = contraction_constants(profile, p)
    c_1 = contraction_constants(profile, 1.0).c_p
    closed = None
    if profile.k1_constant is not None and profile.theta == 0:
        closed = cor1_constants(profile.k1_constant, profile.k2, p)

    rows: list[CheckRow] = []
    means: list[float] = []
    for t in times:
        elapsed = t - s
        snap = ensemble.snapshot(t)
        other = half.snapshot(t) if half is not None else None
        log_scale = model.log_scale(t)

        mean, se = snap.moment(1.0)
        bias = abs(mean - other.moment(1.0)[0]) if other is not None else 0.0
        means.append(mean)
        spread = Z_SCORE * se + bias
        rows.append(_upper_row(
            t, "mean_distance", mean, max(mean - spread, 0.0), mean + spread,
            mean_distance_bound(profile, rho_s, elapsed), bias=bias,
        ))

        power, power_se = snap.moment(p)
        power_bias = abs(power - other.moment(p)[0]) if other is not None else 0.0
        spread = Z_SCORE * power_se + power_bias
        rows.append(_upper_row(
            t, "moment", power ** (1.0 / p), max(power - spread, 0.0) ** (1.0 / p),
            (power + spread) ** (1.0 / p), moment_bound(profile, p, rho_s, elapsed), bias=power_bias,
        ))

        pair_mean, pair_se = pairing_cost(snap.x, snap.y, p, CostKind.RHO_P_OR_RHO, log_scale)
        pair_bias = 0.0
        if other is not None:
            pair_bias = abs(pair_mean - pairing_cost(other.x, other.y, p, CostKind.RHO_P_OR_RHO, log_scale)[0])
        pair_upper = (pair_mean + Z_SCORE * pair_se + pair_bias) ** (1.0 / p)
        xs, ys = snap.x, snap.y
        if model.dim > 1 and len(xs) > ASSIGNMENT_LIMIT:
            logger.info("subsampling %d of %d pairs for the empirical transport", ASSIGNMENT_LIMIT, len(xs))
            xs, ys = xs[:ASSIGNMENT_LIMIT], ys[:ASSIGNMENT_LIMIT]
        empirical = wasserstein_tilde(
            EmpiricalMeasure(xs, log_scale=log_scale), EmpiricalMeasure(ys, log_scale=log_scale), p
        )
        lower, upper, interval = empirical.value, pair_upper, None
        if replicates:
            interval = bootstrap_ci(
                xs, ys, p, CostKind.RHO_P_OR_RHO, replicates=replicates, level=level,
                seed=derive_seed(seed, 7, len(rows)), log_scale=log_scale, threads=threads,
            )
            lower, upper = interval.lower, max(pair_upper, interval.upper)
        rows.append(_upper_row(
            t, "w_tilde", empirical.value, lower, upper,
            moment_bound(profile, p, rho_s, elapsed),
            pairing=pair_mean ** (1.0 / p),
            bootstrap=None if interval is None else interval.to_dict(),
            pairing_dominates=empirical.value <= pair_mean ** (1.0 / p) * (1.0 + 1e-12),
        ))

        if closed is not None:
            k1 = float(profile.k1_constant)  # type: ignore[arg-type]
            row = rows[-2]
            rows.append(_upper_row(
                t, "closed_form_moment", row.estimate, row.ci[0], row.ci[1],
                closed.prefactor * math.exp(-closed.rate * elapsed) * max(rho_s, rho_s ** (1.0 / p)),
            ))
            first = rows[-4]
            rows.append(_upper_row(
                t, "closed_form_mean", first.estimate, first.ci[0], first.ci[1],
                closed_form_mean_bound(k1, profile.k2, rho_s, elapsed),
            ))

    elapsed_all = [t - s for t in times]
    rate, r_squared = fit_decay_rate(elapsed_all, means) if len(times) > 1 else (None, None)
    constants = {"c_p": c_p, "c_1": c_1, "lambda": lam, "c_p_uniform": c_uniform}
    if closed is not None:
        constants["closed_form"] = closed._asdict()
    result = ContractionReport(
        model=model.label,
        profile=profile.describe(),
        p=p,
        s=s,
        rho_s=rho_s,
        constants=constants,
        rows=rows,
        fitted_rate=rate,
        r_squared=r_squared,
        rate_floor=(1.0 - RATE_TOLERANCE) * lam,
        validation=report,
        n_paths=n_paths,
        dt=dt,
        seed=seed,
    )
    logger.info("%s", result)
    return result


# ---------------------------------------------------------------------------
# Gradient estimate
# ---------------------------------------------------------------------------


def check_gradient(
    model: DriftModel,
    profile: CurvatureProfile,
    f: ProbeFunction,
    x: ArrayLike,
    s: float,
    times: Sequence[float],
    h: float = 0.05,
    n_paths: int = 10_000,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    threads: int = 1,
    use_closed_form: bool = False,
    validation: Optional[IndexValidationReport] = None,
) -> GradientReport:
    """Central finite differences of P_{s,t} f with common random numbers.

    The derivative is taken along the first coordinate. When 3 SE exceeds
    RELIABILITY_FRACTION of a bound the step h is doubled, up to
    MAX_H_DOUBLINGS times; the report records whether that sufficed.
    """
    _gate(model, profile, validation, threads)
    if not math.isfinite(f.derivative_sup):
        raise DomainError(f"test function '{f.name}' has no finite Lipschitz constant")
    if not h > 0:
        raise DomainError(f"finite-difference step must be positive, got {h}")
    times = sorted(times)
    if not times or times[0] < s:
        raise DomainError("check times must be at or after the start time")

    if use_closed_form:
        if profile.k1_constant is None or profile.theta != 0:
            raise DomainError("closed-form constants need a constant-k1 profile with theta = 0")
        closed = cor1_constants(profile.k1_constant, profile.k2, 1.0)
        c_1, lam = closed.prefactor, closed.lam
    else:
        c_1, lam, _ = contraction_constants(profile, 1.0)

    point = model.points(x).reshape(model.dim)
    shift = np.zeros(model.dim)
    shift[0] = 1.0
    bounds = {t: c_1 * math.exp(-lam * (t - s)) * math.exp(-model.log_scale(t)) * f.derivative_sup for t in times}

    step = h
    reliable = False
    for attempt in range(MAX_H_DOUBLINGS + 1):
        plus = evolve_marginal(model, point + step * shift, s, times[-1], dt, seed, n_paths, times, threads)
        minus = evolve_marginal(model, point - step * shift, s, times[-1], dt, seed, n_paths, times, threads)
        width = 2.0 * step * model.scale(s)
        stats = {}
        for t in times:
            diffs = (f(plus.at(t)) - f(minus.at(t))) / width
            stats[t] = _mean_se(diffs)
        reliable = all(Z_SCORE * stats[t][1] <= RELIABILITY_FRACTION * bounds[t] for t in times)
        if reliable or attempt == MAX_H_DOUBLINGS:
            break
        logger.warning("finite-difference step %g too noisy; doubling", step)
        step *= 2.0

    allowance = f.third_sup * step * step / 6.0
    rows = []
    for t in times:
        mean, se = stats[t]
        estimate = abs(mean)
        spread = Z_SCORE * se + allowance
        rows.append(_upper_row(t, "gradient", estimate, max(estimate - spread, 0.0), estimate + spread, bounds[t]))

    return GradientReport(
        model=model.label,
        function=f.name,
        x=point.tolist(),
        s=s,
        h=step,
        reliable=reliable,
        constants={"c_1": c_1, "lambda": lam, "lipschitz": f.derivative_sup},
        rows=rows,
        n_paths=n_paths,
        dt=dt,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Harnack inequality
# ---------------------------------------------------------------------------


def _gaussian_power_mean(model: DriftModel, f: ProbeFunction, s: float, t: float, x: np.ndarray, power: float) -> float:
    """E f(X_t)^power for f = exp(c v) under the Gaussian transition law."""
    mean, variance = model.gaussian_transition(s, t, x)  # type: ignore[misc]
    c = float(f.exp_rate) * power  # type: ignore[arg-type]
    m = float(np.ravel(mean)[0])
    v = float(np.ravel(variance)[0])
    return math.exp(c * m + 0.5 * c * c * v)


def check_harnack(
    model: DriftModel,
    k1: Optional[float],
    k2: Optional[float],
    p: float,
    x: ArrayLike,
    y: ArrayLike,
    s: float,
    horizon: float,
    f: ProbeFunction,
    n_paths: int,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    threads: int = 1,
    validation: Optional[IndexValidationReport] = None,
    replay: bool = True,
) -> HarnackReport:
    """(P f(x))^p <= factor * P(f^p)(y), plus a Monte Carlo replay of the Girsanov bound."""
    if not p > 1:
        raise DomainError(f"the Harnack inequality needs p > 1, got {p}")
    if not horizon > s:
        raise DomainError(f"horizon {horizon} must exceed the start time {s}")
    k1, k2 = _linear_bound(model, k1, k2)
    _gate(model, linear_bound_profile(k1, k2), validation, threads)

    xs = model.points(x).reshape(model.dim)
    ys = model.points(y).reshape(model.dim)
    rho = float(model.distance(s, xs, ys))
    elapsed = horizon - s
    factor = harnack_factor(k1, k2, p, rho, elapsed)

    if model.gaussian_transition is not None and f.exp_rate is not None:
        lhs = _gaussian_power_mean(model, f, s, horizon, xs, 1.0) ** p
        rhs = _gaussian_power_mean(model, f, s, horizon, ys, p)
        lhs_se = rhs_se = 0.0
        method = "closed_form"
    else:
        if not f.bounded_non_negative:
            raise DomainError(f"test function '{f.name}' must be bounded and non-negative without a closed form")
        fx = f(evolve_marginal(model, xs, s, horizon, dt, derive_seed(seed, 1), n_paths, threads=threads).at(horizon))
        fy = f(evolve_marginal(model, ys, s, horizon, dt, derive_seed(seed, 2), n_paths, threads=threads).at(horizon))
        mean_x, se_x = _mean_se(fx)
        lhs = mean_x**p
        lhs_se = p * mean_x ** (p - 1.0) * se_x
        rhs, rhs_se = _mean_se(fy**p)
        method = "monte_carlo"

    lhs_upper = lhs + Z_SCORE * lhs_se
    rhs_lower = max(rhs - Z_SCORE * rhs_se, 0.0)
    margin = factor * rhs_lower - lhs_upper
    row = CheckRow(
        t=horizon,
        quantity="harnack",
        estimate=lhs,
        ci=(max(lhs - Z_SCORE * lhs_se, 0.0), lhs_upper),
        bound=factor * rhs_lower,
        margin=margin,
        passed=margin >= 0,
        extra={"rhs": rhs, "rhs_se": rhs_se},
    )

    record: dict = {}
    if replay:
        record = replay_girsanov(model, k1, k2, p, xs, ys, s, horizon, n_paths, dt, derive_seed(seed, 3), threads)

    return HarnackReport(
        model=model.label,
        function=f.name,
        p=p,
        k1=k1,
        k2=k2,
        rho_s=rho,
        factor=factor,
        method=method,
        row=row,
        replay=record,
        n_paths=n_paths,
        dt=dt,
        seed=seed,
    )


def replay_girsanov(
    model: DriftModel,
    k1: float,
    k2: float,
    p: float,
    x: ArrayLike,
    y: ArrayLike,
    s: float,
    horizon: float,
    n_paths: int,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    threads: int = 1,
) -> dict:
    """E R = 1, E N = 1 and E R^{p/(p-1)} <= exp(p / (4(p-1)^2) int xi^2), by Monte Carlo."""
    rho = float(model.distance(s, x, y))
    q = p / (p - 1.0)
    if rho == 0:
        return {"coupled_fraction": 1.0, "mean_r": 1.0, "mean_n": 1.0, "moment": 1.0, "bound": 1.0, "pass": True}
    energy = girsanov_energy(k1, k2, rho, horizon - s)
    bound = math.exp(p / (4.0 * (p - 1.0) ** 2) * energy)
    spec = CouplingSpec.girsanov(k1, k2, horizon, p)
    ensemble = evolve_ensemble(model, spec, x, y, s, horizon, dt, n_paths, seed, threads=threads)
    density = np.exp(ensemble.log_r)  # type: ignore[arg-type]
    martingale = np.exp(ensemble.log_n)  # type: ignore[arg-type]
    mean_r, se_r = _mean_se(density)
    mean_n, se_n = _mean_se(martingale)
    moment, se_m = _mean_se(density**q)
    coupled = float(np.mean(~np.isnan(ensemble.coupled_at)))
    checks = {
        "mean_r_pass": abs(mean_r - 1.0) <= Z_SCORE * se_r,
        "mean_n_pass": abs(mean_n - 1.0) <= Z_SCORE * se_n,
        "moment_pass": moment <= bound + Z_SCORE * se_m,
        "coupled_pass": coupled == 1.0 and bool(np.all(ensemble.coupled_at <= horizon)),
    }
    return {
        "coupled_fraction": coupled,
        "latest_coupling": float(np.nanmax(ensemble.coupled_at)),
        "mean_r": mean_r,
        "mean_r_se": se_r,
        "mean_n": mean_n,
        "mean_n_se": se_n,
        "moment": moment,
        "moment_se": se_m,
        "energy": energy,
        "bound": bound,
        **checks,
        "pass": all(checks.values()),
    }


# ---------------------------------------------------------------------------
# Evolution systems of measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialLaw:
    """A point mass, a uniform law on a box, or an isotropic normal law."""

    kind: str
    params: tuple[float, ...]

    KINDS = ("point", "uniform", "normal")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise DomainError(f"unknown initial law '{self.kind}'")
        needed = {"point": 1, "uniform": 2, "normal": 2}[self.kind]
        if len(self.params) != needed:
            raise DomainError(f"initial law '{self.kind}' takes {needed} parameters")

    def sample(self, n: int, dim: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        if self.kind == "point":
            return np.full((n, dim), self.params[0])
        if self.kind == "uniform":
            lo, hi = self.params
            return rng.uniform(lo, hi, size=(n, dim))
        mean, std = self.params
        return mean + std * rng.standard_normal((n, dim))

    def describe(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}


def estimate_esm(
    model: DriftModel,
    t: float,
    start_times: Sequence[float],
    law_a: InitialLaw,
    law_b: InitialLaw,
    n_paths: int,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    threads: int = 1,
    rate_floor: Optional[float] = None,
) -> EsmReport:
    """Evolve two initial laws from ever earlier starts to t and track their W_1 gap.

    Both laws are driven by the same per-path noise. Starts are processed in
    the given (decreasing) order and the sequence stops once successive gaps
    differ by less than ESM_STOP_SE standard errors.
    """
    if not model.time_dependent:
        raise DomainError(f"model '{model.label}' is not time-inhomogeneous")
    starts = [float(s) for s in start_times]
    if not starts or any(b >= a for a, b in zip(starts, starts[1:])) or starts[0] >= t:
        raise DomainError("start times must be decreasing and precede the target time")
    if rate_floor is None and model.linear_bound is not None:
        rate_floor = (1.0 - RATE_TOLERANCE) * cor1_constants(*model.linear_bound, 1.0).lam

    scale = model.scale(t)
    log_scale = model.log_scale(t)
    evaluated: list[float] = []
    gaps: list[float] = []
    gap_se: list[float] = []
    stopped = False
    earliest = None
    for i, s in enumerate(starts):
        xa = law_a.sample(n_paths, model.dim, derive_seed(seed, 1, i))
        xb = law_b.sample(n_paths, model.dim, derive_seed(seed, 2, i))
        noise_seed = derive_seed(seed, 3, i)
        end_a = evolve_marginal(model, xa, s, t, dt, noise_seed, threads=threads).at(t)
        end_b = evolve_marginal(model, xb, s, t, dt, noise_seed, threads=threads).at(t)
        mu = EmpiricalMeasure(end_a, log_scale=log_scale)
        nu = EmpiricalMeasure(end_b, log_scale=log_scale)
        gap = (wasserstein_1d_quantile(mu, nu, 1.0) if model.dim == 1 else wasserstein_exact(mu, nu, 1.0)).value
        _, se = _mean_se(scale * np.linalg.norm(end_a - end_b, axis=1))
        evaluated.append(s)
        gaps.append(gap)
        gap_se.append(se)
        earliest = end_a
        logger.info("ESM start s=%g: W1 gap %.4e (se %.1e)", s, gap, se)
        if i > 0 and abs(gaps[-1] - gaps[-2]) < ESM_STOP_SE * se:
            stopped = i < len(starts) - 1
            break

    rate, r_squared = fit_decay_rate([t - s for s in evaluated], gaps)

    law_rows: list[CheckRow] = []
    moments: list[dict] = []
    coords = earliest[:, 0]  # type: ignore[index]
    mean, se = _mean_se(coords)
    second, se2 = _mean_se(coords**2)
    moments.append({"s": evaluated[-1], "mean": mean, "mean_se": se, "second_moment": second, "second_moment_se": se2})
    if model.esm_law is not None:
        target_mean, target_var = model.esm_law(t)
        deviation = abs(mean - target_mean)
        law_rows.append(CheckRow(
            t=t, quantity="esm_mean", estimate=mean, ci=(mean - Z_SCORE * se, mean + Z_SCORE * se),
            bound=target_mean, margin=Z_SCORE * se - deviation, passed=deviation <= Z_SCORE * se,
        ))
        target_second = target_mean**2 + target_var
        deviation = abs(second - target_second)
        law_rows.append(CheckRow(
            t=t, quantity="esm_second_moment", estimate=second,
            ci=(second - Z_SCORE * se2, second + Z_SCORE * se2), bound=target_second,
            margin=Z_SCORE * se2 - deviation, passed=deviation <= Z_SCORE * se2,
        ))

    return EsmReport(
        model=model.label,
        t=t,
        start_times=evaluated,
        gaps=gaps,
        gap_se=gap_se,
        fitted_rate=rate,
        r_squared=r_squared,
        rate_floor=rate_floor,
        stopped_early=stopped,
        law_rows=law_rows,
        moments=moments,
        n_paths=n_paths,
        dt=dt,
        seed=seed,
    )


def check_lyapunov_moment(
    model: DriftModel,
    t: float,
    start_times: Sequence[float],
    n_paths: int,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    start: float = 0.0,
    threads: int = 1,
) -> LyapunovReport:
    """Second moment of rho_t(X_t, 0) from deterministic starts against C1 / C2.

    Also checks the drift condition (L_t + d/dt) rho_t^2 <= C1 - C2 rho_t^2 on a
    grid of points and times.
    """
    if model.lyapunov is None:
        raise UnsupportedModelError(f"model '{model.label}' has no Lyapunov constants")
    c1, c2 = model.lyapunov
    bound = c1 / c2

    rows = []
    for i, s in enumerate(start_times):
        if s > t:
            raise DomainError(f"start time {s} is after the target time {t}")
        end = evolve_marginal(model, np.full(model.dim, start), s, t, dt, derive_seed(seed, 4, i), n_paths, threads=threads).at(t)
        values = model.scale(t) ** 2 * np.sum(end**2, axis=1)
        moment, se = _mean_se(values)
        rows.append(CheckRow(
            t=t, quantity="second_moment", estimate=moment,
            ci=(max(moment - Z_SCORE * se, 0.0), moment + Z_SCORE * se),
            bound=bound, margin=bound + Z_SCORE * se - moment,
            passed=moment <= bound + Z_SCORE * se, extra={"s": s},
        ))

    grid = np.linspace(-10.0, 10.0, 201)
    points = np.stack([grid] + [np.zeros_like(grid)] * (model.dim - 1), axis=1)
    excess = -math.inf
    for u in np.linspace(t - 2.0 * math.pi, t, 17):
        rho2 = model.scale(u) ** 2 * np.sum(points**2, axis=1)
        gap = lyapunov_generator(model, u, points) - (c1 - c2 * rho2)
        excess = max(excess, float(gap.max()))

    comparison = {
        "formula": "sqrt(k_eps (d-1)) coth(sqrt(k_eps / (d-1)) min(s, eps))",
        "k_eps": 0.0,
        "dim": model.dim,
        "eps": 1.0,
        "value_at_eps": laplacian_comparison(0.0, model.dim, 1.0, 1.0),
    }
    return LyapunovReport(
        model=model.label,
        c1=c1,
        c2=c2,
        rows=rows,
        drift_excess=excess,
        laplacian_comparison=comparison,
    )


# ---------------------------------------------------------------------------
# Supplementary checks
# ---------------------------------------------------------------------------


def check_supermartingale(
    profile: CurvatureProfile,
    p: float,
    r_init: float,
    times: Sequence[float],
    n_paths: int,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    tol: float = 1e-9,
) -> SupermartingaleReport:
    """E psi(r_t^p) <= e^{-lambda t} psi(r_0^p) along the radial process."""
    table = build_psi(profile, p, tol)
    lam = table.constants.lam
    times = sorted(times)
    radial = simulate_radial_dominant(profile, r_init, times[-1], dt, seed, n_paths=n_paths, snapshot_times=times)
    start = float(table(np.array([r_init**p]))[0])
    rows = []
    scaled = []
    for i, t in enumerate(times):
        values = table(radial.values[i] ** p)
        mean, se = _mean_se(values)
        scaled.append((math.exp(lam * t) * mean, math.exp(lam * t) * se))
        bound = math.exp(-lam * t) * start
        margin = bound - (mean - Z_SCORE * se)
        rows.append(CheckRow(t, "psi", mean, (mean - Z_SCORE * se, mean + Z_SCORE * se), bound, margin, margin >= 0))
    monotone = all(
        later <= earlier + Z_SCORE * math.hypot(se_a, se_b)
        for (earlier, se_a), (later, se_b) in zip(scaled, scaled[1:])
    )
    return SupermartingaleReport(profile.describe(), p, r_init, lam, rows, monotone)


def check_drift_consistency(
    model: DriftModel,
    points: ArrayLike,
    h: float = 1e-5,
    tol: float = 1e-6,
) -> DriftConsistencyReport:
    """Central-difference check of the supplied gradient (and Hessian) of U."""
    if model.potential is None or model.gradient is None:
        raise UnsupportedModelError(f"model '{model.label}' has no potential")
    pts = np.atleast_2d(model.points(points))
    eye = np.eye(model.dim)
    grad = np.asarray(model.gradient(pts))
    fd_grad = np.stack(
        [(model.potential(pts + h * e) - model.potential(pts - h * e)) / (2.0 * h) for e in eye], axis=-1
    )
    grad_error = float(np.max(np.abs(fd_grad - grad)) / (1.0 + np.max(np.abs(grad))))

    hess_error = None
    if model.hessian is not None:
        hess = np.asarray(model.hessian(pts))
        fd_hess = np.stack(
            [(model.gradient(pts + h * e) - model.gradient(pts - h * e)) / (2.0 * h) for e in eye], axis=-1
        )
        hess_error = float(np.max(np.abs(fd_hess - hess)) / (1.0 + np.max(np.abs(hess))))
    return DriftConsistencyReport(grad_error, hess_error, tol)


def search_profile_radius(
    k1: ArrayFunc,
    k2: float,
    theta: float,
    radii: Sequence[float],
    k1_integral: Optional[ArrayFunc] = None,
    reach: float = 100.0,
) -> ProfileSearch:
    """Pick r0 from ``radii`` maximizing lambda, each with the largest admissible k3.

    k3(r0) is the infimum of k2 - k1(r) / r^{1+theta} over r in [r0, reach * r0],
    capped at k2.
    """
    candidates = []
    best: Optional[tuple[float, CurvatureProfile]] = None
    for r0 in radii:
        rs = np.geomspace(r0, reach * r0, 2000)
        k3 = min(k2, float(np.min(k2 - np.asarray(k1(rs)) / rs ** (1.0 + theta))))
        if k3 <= 0:
            continue
        profile = CurvatureProfile(k1=k1, k2=k2, theta=theta, r0=float(r0), k3=k3, k1_integral=k1_integral, label="search")
        lam = contraction_constants(profile, 1.0).lam
        candidates.append((float(r0), k3, lam))
        if best is None or lam > best[0]:
            best = (lam, profile)
    if best is None:
        raise DomainError("no radius in the search range admits a positive k3")
    return ProfileSearch(best=best[1], lam=best[0], candidates=candidates)
