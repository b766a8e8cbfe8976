"""Diffusion models, curvature profiles, and validation of the index bound.

A ``CurvatureProfile`` is the data (k1, k2, theta, r0, k3) of the distance
condition ``I^Z(x, y) <= k1(rho) - k2 * rho**(1 + theta)``. A ``DriftModel``
is a concrete diffusion ``dX = sqrt(2) e^{-phi(t)} dB + Z_t(X) dt`` on
Euclidean space (``phi == 0``) or on the line with the conformal metric
``e^{2 phi(t)} dx^2``.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .errors import DomainError, UnsupportedModelError
from .quadrature import composite_gauss_legendre

logger = logging.getLogger(__name__)

ArrayFunc = Callable[[np.ndarray], np.ndarray]
ArrayLike = Union[float, Sequence[float], np.ndarray]

GEOMETRIES: tuple[str, ...] = ("euclidean", "conformal")

VALIDATION_NODES: int = 200
VALIDATION_PAIRS: int = 50
VALIDATION_MIN_RADIUS: float = 1e-3


def _zero(t: float) -> float:
    return 0.0


# ---------------------------------------------------------------------------
# Curvature profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvatureProfile:
    """Radial bound k1(r) - k2 r^{1+theta} on the index, with tail constant k3."""

    k1: ArrayFunc
    k2: float
    theta: float
    r0: float
    k3: float
    k1_integral: Optional[ArrayFunc] = None
    label: str = "custom"
    k1_constant: Optional[float] = None
    params: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if not self.k2 > 0:
            raise DomainError(f"k2 must be positive, got {self.k2}")
        if not self.theta >= 0:
            raise DomainError(f"theta must be non-negative, got {self.theta}")
        if not self.r0 > 0:
            raise DomainError(f"r0 must be positive, got {self.r0}")
        if not self.k3 > 0:
            raise DomainError(f"k3 must be positive, got {self.k3}")
        if self.k3 > self.k2:
            raise DomainError(f"k3 must not exceed k2, got k3={self.k3} > k2={self.k2}")
        if self.k3 == self.k2:
            logger.debug("profile %s has k3 == k2", self.label)

    def k1_at(self, r: ArrayLike) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return np.broadcast_to(np.asarray(self.k1(r), dtype=float), r.shape).copy()

    def integral(self, r: ArrayLike) -> np.ndarray:
        """Return the integral of k1 over [0, r], elementwise."""
        r = np.asarray(r, dtype=float)
        if self.k1_integral is not None:
            return np.asarray(self.k1_integral(r), dtype=float)
        flat = r.ravel()

        def scaled(u: np.ndarray) -> np.ndarray:
            return self.k1_at(u[:, None] * flat[None, :]) * flat[None, :]

        return composite_gauss_legendre(scaled, 0.0, 1.0).reshape(r.shape)

    def describe(self) -> dict:
        return {
            "k1": self.label,
            **self.params,
            "k2": self.k2,
            "theta": self.theta,
            "r0": self.r0,
            "k3": self.k3,
        }

    @classmethod
    def constant(
        cls, value: float, k2: float, theta: float, r0: float, k3: float
    ) -> "CurvatureProfile":
        if value < 0:
            raise DomainError(f"constant k1 must be non-negative, got {value}")
        return cls(
            k1=lambda r: np.full(np.shape(r), float(value)),
            k1_integral=lambda r: float(value) * np.asarray(r, dtype=float),
            k2=k2,
            theta=theta,
            r0=r0,
            k3=k3,
            label="constant",
            k1_constant=float(value),
            params={"value": float(value)},
        )

    @classmethod
    def linear(
        cls, slope: float, k2: float, theta: float, r0: float, k3: float
    ) -> "CurvatureProfile":
        if slope < 0:
            raise DomainError(f"linear k1 slope must be non-negative, got {slope}")
        return cls(
            k1=lambda r: float(slope) * np.asarray(r, dtype=float),
            k1_integral=lambda r: 0.5 * float(slope) * np.asarray(r, dtype=float) ** 2,
            k2=k2,
            theta=theta,
            r0=r0,
            k3=k3,
            label="linear",
            params={"slope": float(slope)},
        )

    @classmethod
    def table(
        cls,
        radii: Sequence[float],
        values: Sequence[float],
        k2: float,
        theta: float,
        r0: float,
        k3: float,
    ) -> "CurvatureProfile":
        """Piecewise-linear k1 through (radii, values), flat outside the table."""
        nodes = np.asarray(radii, dtype=float)
        heights = np.asarray(values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != heights.shape or len(nodes) < 2:
            raise DomainError("k1 table needs two or more (r, value) pairs")
        if np.any(np.diff(nodes) <= 0) or nodes[0] < 0:
            raise DomainError("k1 table radii must be non-negative and increasing")
        if np.any(heights < 0):
            raise DomainError("k1 table values must be non-negative")
        if nodes[0] > 0:
            nodes = np.concatenate([[0.0], nodes])
            heights = np.concatenate([[heights[0]], heights])
        slopes = np.append(np.diff(heights) / np.diff(nodes), 0.0)
        cumulative = np.concatenate(
            [[0.0], np.cumsum(0.5 * (heights[1:] + heights[:-1]) * np.diff(nodes))]
        )

        def k1(r: np.ndarray) -> np.ndarray:
            return np.interp(r, nodes, heights)

        def k1_integral(r: np.ndarray) -> np.ndarray:
            r = np.asarray(r, dtype=float)
            j = np.clip(np.searchsorted(nodes, r, side="right") - 1, 0, len(nodes) - 1)
            step = r - nodes[j]
            return cumulative[j] + heights[j] * step + 0.5 * slopes[j] * step**2

        return cls(
            k1=k1,
            k1_integral=k1_integral,
            k2=k2,
            theta=theta,
            r0=r0,
            k3=k3,
            label="table",
            params={"r": nodes.tolist(), "values": heights.tolist()},
        )


def linear_bound_profile(k1: float, k2: float) -> CurvatureProfile:
    """Profile induced by the linear bound I^Z <= k1 - k2 rho.

    Uses r0 = 2 k1 / k2 and k3 = k2 / 2; r0 falls back to 1 when k1 = 0.
    """
    if k1 < 0 or k2 <= 0:
        raise DomainError(f"linear bound needs k1 >= 0 and k2 > 0, got ({k1}, {k2})")
    r0 = 2.0 * k1 / k2 if k1 > 0 else 1.0
    return CurvatureProfile.constant(k1, k2, 0.0, r0, k2 / 2.0)


def index_bound(profile: CurvatureProfile, r: ArrayLike) -> np.ndarray:
    """Return k1(r) - k2 r^{1+theta}."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("index bound is defined for positive distances only")
    return profile.k1_at(r) - profile.k2 * r ** (1.0 + profile.theta)


def profile_violations(profile: CurvatureProfile, radii: np.ndarray) -> tuple[float, str]:
    """Largest violation of k1 >= 0 and of the tail condition beyond r0."""
    radii = np.asarray(radii, dtype=float)
    k1 = profile.k1_at(radii)
    nonneg = float(np.max(-k1))
    tail = radii >= profile.r0
    if tail.any():
        excess = k1[tail] - (profile.k2 - profile.k3) * radii[tail] ** (1.0 + profile.theta)
        tail_violation = float(np.max(excess))
    else:
        tail_violation = -math.inf
    if tail_violation > nonneg:
        return tail_violation, "profile:tail"
    return nonneg, "profile:k1"


# ---------------------------------------------------------------------------
# Drift models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftModel:
    """A diffusion with generator e^{-2 phi(t)} Laplacian + Z_t."""

    label: str
    dim: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    time_dependent: bool = False
    geometry: str = "euclidean"
    log_scale: Callable[[float], float] = _zero
    log_scale_rate: Callable[[float], float] = _zero
    exact_index_fn: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    potential: Optional[ArrayFunc] = None
    gradient: Optional[ArrayFunc] = None
    hessian: Optional[ArrayFunc] = None
    gaussian_transition: Optional[
        Callable[[float, float, np.ndarray], tuple[np.ndarray, np.ndarray]]
    ] = None
    esm_law: Optional[Callable[[float], tuple[float, float]]] = None
    lyapunov: Optional[tuple[float, float]] = None
    linear_bound: Optional[tuple[float, float]] = None
    params: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise DomainError(f"dimension must be positive, got {self.dim}")
        if self.geometry == "conformal" and self.dim != 1:
            raise DomainError("the conformal evolving metric is supported in dimension 1 only")

    @property
    def conformal(self) -> bool:
        return self.geometry == "conformal"

    def points(self, x: ArrayLike) -> np.ndarray:
        """Coerce x to an array of shape (..., dim)."""
        arr = np.asarray(x, dtype=float)
        if self.dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
            arr = arr[..., None]
        if arr.shape[-1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got shape {arr.shape}")
        return arr

    def drift_at(self, t: float, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.drift(t, points), dtype=float)

    def scale(self, t: float) -> float:
        return math.exp(self.log_scale(t))

    def distance(self, t: float, x: ArrayLike, y: ArrayLike) -> np.ndarray:
        """Distance rho_t(x, y) in the metric at time t."""
        diff = self.points(y) - self.points(x)
        return self.scale(t) * np.linalg.norm(diff, axis=-1)

    def describe(self) -> dict:
        return {"family": self.label, "dim": self.dim, **self.params}


def ornstein_uhlenbeck(a: float = 1.0, dim: int = 1) -> DriftModel:
    """d-dimensional OU process, Z(x) = -a x."""
    if a <= 0:
        raise DomainError(f"OU rate must be positive, got {a}")

    def transition(s: float, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        tau = t - s
        return x * math.exp(-a * tau), np.full(np.shape(x), -math.expm1(-2 * a * tau) / a)

    return DriftModel(
        label="ou",
        dim=dim,
        drift=lambda t, x: -a * x,
        exact_index_fn=lambda t, x, y: -a * np.linalg.norm(y - x, axis=-1),
        potential=lambda x: 0.5 * a * np.sum(x**2, axis=-1),
        gradient=lambda x: a * x,
        hessian=lambda x: np.broadcast_to(a * np.eye(dim), x.shape[:-1] + (dim, dim)),
        gaussian_transition=transition,
        esm_law=lambda t: (0.0, 1.0 / a),
        lyapunov=(2.0 * dim, 2.0 * a),
        linear_bound=(0.0, a),
        params={"a": a},
    )


def double_well() -> DriftModel:
    """1D double-well, U(x) = (x^2 - 1)^2 / 4."""
    return DriftModel(
        label="double-well",
        dim=1,
        drift=lambda t, x: x - x**3,
        potential=lambda x: 0.25 * (x[..., 0] ** 2 - 1.0) ** 2,
        gradient=lambda x: x**3 - x,
        hessian=lambda x: (3.0 * x**2 - 1.0)[..., None],
    )


def quartic(a: float = 1.0, dim: int = 2) -> DriftModel:
    """Gradient drift with U(x) = |x|^4 / 4 + a |x|^2 / 2, strongly convex."""
    if a <= 0:
        raise DomainError(f"quartic convexity must be positive, got {a}")

    def hessian(x: np.ndarray) -> np.ndarray:
        sq = np.sum(x**2, axis=-1)[..., None, None]
        return (sq + a) * np.eye(dim) + 2.0 * x[..., :, None] * x[..., None, :]

    return gradient_drift(
        potential=lambda x: 0.25 * np.sum(x**2, axis=-1) ** 2 + 0.5 * a * np.sum(x**2, axis=-1),
        gradient=lambda x: (np.sum(x**2, axis=-1, keepdims=True) + a) * x,
        dim=dim,
        hessian=hessian,
        label="quartic",
        linear_bound=(0.0, a),
        params={"a": a},
    )


def gradient_drift(
    potential: ArrayFunc,
    gradient: ArrayFunc,
    dim: int,
    hessian: Optional[ArrayFunc] = None,
    label: str = "gradient",
    linear_bound: Optional[tuple[float, float]] = None,
    params: Optional[dict] = None,
) -> DriftModel:
    """Euclidean model with Z = -grad U for a user-supplied potential."""
    return DriftModel(
        label=label,
        dim=dim,
        drift=lambda t, x: -gradient(x),
        potential=potential,
        gradient=gradient,
        hessian=hessian,
        linear_bound=linear_bound,
        params=params or {},
    )


def forced_ornstein_uhlenbeck(a: float = 1.0, amplitude: float = 1.0) -> DriftModel:
    """Time-inhomogeneous 1D OU, Z_t(x) = amplitude * sin(t) - a x."""
    if a <= 0:
        raise DomainError(f"OU rate must be positive, got {a}")

    def forced_mean(t: float) -> float:
        return amplitude * (a * math.sin(t) - math.cos(t)) / (1.0 + a * a)

    def transition(s: float, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        decay = math.exp(-a * (t - s))
        mean = forced_mean(t) + (x - forced_mean(s)) * decay
        return mean, np.full(np.shape(x), -math.expm1(-2 * a * (t - s)) / a)

    return DriftModel(
        label="forced-ou",
        dim=1,
        drift=lambda t, x: amplitude * math.sin(t) - a * x,
        time_dependent=True,
        exact_index_fn=lambda t, x, y: -a * np.linalg.norm(y - x, axis=-1),
        gaussian_transition=transition,
        esm_law=lambda t: (forced_mean(t), 1.0 / a),
        lyapunov=(2.0 + amplitude**2 / a, a),
        linear_bound=(0.0, a),
        params={"a": a, "amplitude": amplitude},
    )


def conformal_ornstein_uhlenbeck(
    a: float = 1.0, amplitude: float = 0.25, frequency: float = 1.0
) -> DriftModel:
    """1D OU under the evolving metric e^{2 phi(t)} dx^2, phi(t) = amplitude sin(frequency t)."""
    if a <= 0:
        raise DomainError(f"OU rate must be positive, got {a}")

    def phi(t: float) -> float:
        return amplitude * math.sin(frequency * t)

    def phi_rate(t: float) -> float:
        return amplitude * frequency * math.cos(frequency * t)

    def kernel_variance(s: float, t: float) -> float:
        value, _ = integrate.quad(
            lambda r: 2.0 * math.exp(-2.0 * a * (t - r) - 2.0 * phi(r)), s, t, limit=200
        )
        return value

    def transition(s: float, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x * math.exp(-a * (t - s)), np.full(np.shape(x), kernel_variance(s, t))

    def stationary(t: float) -> tuple[float, float]:
        value, _ = integrate.quad(
            lambda u: 2.0 * math.exp(-2.0 * a * u - 2.0 * phi(t - u)), 0.0, np.inf, limit=200
        )
        return 0.0, value

    margin = a - abs(amplitude * frequency)
    return DriftModel(
        label="conformal-ou",
        dim=1,
        drift=lambda t, x: -a * x,
        time_dependent=True,
        geometry="conformal",
        log_scale=phi,
        log_scale_rate=phi_rate,
        gaussian_transition=transition,
        esm_law=stationary,
        lyapunov=(2.0, 2.0 * margin) if margin > 0 else None,
        linear_bound=(0.0, margin) if margin > 0 else None,
        params={"a": a, "amplitude": amplitude, "frequency": frequency},
    )


# Single source of truth for the built-in model families.
MODEL_FAMILIES: dict[str, Callable[..., DriftModel]] = {
    "ou": ornstein_uhlenbeck,
    "double-well": double_well,
    "quartic": quartic,
    "forced-ou": forced_ornstein_uhlenbeck,
    "conformal-ou": conformal_ornstein_uhlenbeck,
}


def build_model(family: str, **params: float) -> DriftModel:
    try:
        factory = MODEL_FAMILIES[family]
    except KeyError:
        known = ", ".join(sorted(MODEL_FAMILIES))
        raise DomainError(f"unknown model family '{family}' (known: {known})") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# Index
# ---------------------------------------------------------------------------


def _pair(model: DriftModel, x: ArrayLike, y: ArrayLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs = model.points(x)
    ys = model.points(y)
    diff = ys - xs
    rho = np.linalg.norm(diff, axis=-1)
    if np.any(rho == 0):
        raise DomainError("the index is undefined on the diagonal x = y")
    return xs, ys, rho


def segment_index(model: DriftModel, t: float, x: ArrayLike, y: ArrayLike) -> np.ndarray:
    """-(integral of Hess U(e, e) along the segment from x to y), by quadrature."""
    if model.hessian is None:
        raise UnsupportedModelError(f"model '{model.label}' has no Hessian")
    xs, ys, rho = _pair(model, x, y)
    xs2 = np.atleast_2d(xs)
    diff = np.atleast_2d(ys) - xs2
    unit = diff / np.atleast_1d(rho)[:, None]
    hessian = model.hessian

    def integrand(u: np.ndarray) -> np.ndarray:
        pts = xs2[None, :, :] + u[:, None, None] * diff[None, :, :]
        hess = np.asarray(hessian(pts.reshape(-1, model.dim))).reshape(
            len(u), len(xs2), model.dim, model.dim
        )
        return np.einsum("kmij,mi,mj->km", hess, unit, unit) * np.atleast_1d(rho)

    value = -composite_gauss_legendre(integrand, 0.0, 1.0)
    return value.reshape(np.shape(rho))


def exact_index(model: DriftModel, t: float, x: ArrayLike, y: ArrayLike) -> np.ndarray:
    """Drift of the coupled distance rho_t(X, Y) at (t, x, y).

    For the conformal model this includes the metric-evolution term
    phi'(t) rho_t, i.e. one half of d/dt g_t along the geodesic.
    """
    if model.geometry not in GEOMETRIES:
        raise UnsupportedModelError(
            f"model '{model.label}' with geometry '{model.geometry}' has no computable index"
        )
    xs, ys, rho = _pair(model, x, y)
    if model.exact_index_fn is not None:
        return np.asarray(model.exact_index_fn(t, xs, ys), dtype=float)

    unit = (ys - xs) / rho[..., None]
    if model.conformal:
        scale = model.scale(t)
        along = np.sum((model.drift_at(t, ys) - model.drift_at(t, xs)) * unit, axis=-1)
        return scale * along + model.log_scale_rate(t) * scale * rho
    if model.dim > 1 and model.hessian is not None:
        return segment_index(model, t, xs, ys)
    return np.sum((model.drift_at(t, ys) - model.drift_at(t, xs)) * unit, axis=-1)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationGrid:
    """Radii (in the time-t metric), times, and random pairs per radius."""

    radii: tuple[float, ...]
    times: tuple[float, ...] = (0.0,)
    pairs_per_radius: int = VALIDATION_PAIRS
    center_scale: float = 1.0

    @classmethod
    def default(
        cls, profile: CurvatureProfile, model: Optional[DriftModel] = None
    ) -> "ValidationGrid":
        radii = np.geomspace(VALIDATION_MIN_RADIUS, 10.0 * profile.r0, VALIDATION_NODES)
        times: tuple[float, ...] = (0.0,)
        if model is not None and model.time_dependent:
            times = tuple(np.linspace(0.0, 2.0 * math.pi, 9)[:-1].tolist())
        return cls(
            radii=tuple(radii.tolist()),
            times=times,
            center_scale=max(1.0, 10.0 * profile.r0),
        )

    def describe(self) -> dict:
        return {
            "radii": len(self.radii),
            "min_radius": min(self.radii),
            "max_radius": max(self.radii),
            "times": list(self.times),
            "pairs_per_radius": self.pairs_per_radius,
            "center_scale": self.center_scale,
        }


@dataclass
class IndexValidationReport:
    """Result of checking exact_index against the profile bound on a grid."""

    grid: dict
    max_violation: float
    worst_pair: Optional[tuple[list[float], list[float], float]]
    passed: bool
    tolerance: float
    worst_source: str = "index"

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"index validation {verdict}: max violation {self.max_violation:.3e} "
            f"({self.worst_source}, tolerance {self.tolerance:.1e})"
        )

    def to_dict(self) -> dict:
        return {
            "grid": self.grid,
            "max_violation": self.max_violation,
            "worst_pair": self.worst_pair,
            "worst_source": self.worst_source,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }


def _radius_worst(
    model: DriftModel,
    profile: CurvatureProfile,
    grid: ValidationGrid,
    index: int,
    seed: int,
) -> tuple[float, Optional[tuple[list[float], list[float], float]]]:
    radius = grid.radii[index]
    rng = np.random.default_rng([seed, index])
    n = grid.pairs_per_radius
    centers = rng.uniform(-grid.center_scale, grid.center_scale, size=(n, model.dim))
    directions = rng.standard_normal((n, model.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    worst = -math.inf
    worst_pair = None
    for t in grid.times:
        half = 0.5 * radius / model.scale(t)
        xs = centers - half * directions
        ys = centers + half * directions
        rho = model.distance(t, xs, ys)
        violation = exact_index(model, t, xs, ys) - index_bound(profile, rho)
        k = int(np.argmax(violation))
        if violation[k] > worst:
            worst = float(violation[k])
            worst_pair = (xs[k].tolist(), ys[k].tolist(), float(t))
    return worst, worst_pair


def validate_profile(
    model: DriftModel,
    profile: CurvatureProfile,
    grid: Optional[ValidationGrid] = None,
    tol: float = 1e-9,
    seed: int = 0,
    threads: int = 1,
) -> IndexValidationReport:
    """Check exact_index <= index_bound at every grid node, plus the profile's own conditions."""
    grid = grid or ValidationGrid.default(profile, model)
    if not grid.radii or not grid.times or grid.pairs_per_radius < 1:
        raise DomainError("validation grid is empty")

    indices = range(len(grid.radii))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(lambda i: _radius_worst(model, profile, grid, i, seed), indices)
            )
    else:
        results = [_radius_worst(model, profile, grid, i, seed) for i in indices]

    worst, worst_pair = -math.inf, None
    for value, pair in results:
        if value > worst:
            worst, worst_pair = value, pair
    source = "index"

    radial, radial_source = profile_violations(profile, np.asarray(grid.radii))
    if radial > worst:
        worst, source = radial, radial_source

    report = IndexValidationReport(
        grid=grid.describe(),
        max_violation=worst,
        worst_pair=worst_pair,
        passed=worst <= tol,
        tolerance=tol,
        worst_source=source,
    )
    logger.info("%s vs %s profile: %s", model.label, profile.label, report)
    return report
