"""The distance-distortion function psi and the contraction constants.

psi is built from the coefficient functions l0, l1, l of the coupled distance
raised to the power p. Below r0^p it is computed by quadrature after the
substitution v = w^p, which turns the integrable singularity of
(l1 + l) / l0 at 0 into the smooth rate

    h(w) = k1(w) / 4 - k2 w^{1+theta} / 4 + k2 r0^theta w / 4,

so that psi'(r) = r0^{p-1} r^{(1-p)/p} exp(G(r^{1/p})) with G(w) the integral
of h over [w, r0]. Above r0^p psi has a closed form.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import DomainError
from .models import ArrayLike, CurvatureProfile
from .quadrature import adaptive_cumulative, gauss_legendre

logger = logging.getLogger(__name__)

PSI_GRID_NODES: int = 400
PSI_GRID_LOW: float = 1e-6
DEFAULT_TOL: float = 1e-9
PINCH_TOL: float = 1e-10


def _check_p(p: float) -> None:
    if not p >= 1:
        raise DomainError(f"p must be at least 1, got {p}")


def cutoff_sigma(r0: float, r: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    """C^1 cutoff 1 - s(r - r0) with s(u) = 3u^2 - 2u^3, and its derivative."""
    if not r0 > 0:
        raise DomainError(f"r0 must be positive, got {r0}")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("cutoff is defined for non-negative r")
    u = np.clip(r - r0, 0.0, 1.0)
    value = 1.0 - u * u * (3.0 - 2.0 * u)
    derivative = -6.0 * u * (1.0 - u)
    return value, derivative


@dataclass(frozen=True)
class CutoffFunction:
    r0: float

    def __call__(self, r: ArrayLike) -> np.ndarray:
        return cutoff_sigma(self.r0, r)[0]

    def derivative(self, r: ArrayLike) -> np.ndarray:
        return cutoff_sigma(self.r0, r)[1]


def ell_functions(
    profile: CurvatureProfile, p: float, r: ArrayLike
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients (l0, l1, l) of the Ito expansion of psi(rho^p)."""
    _check_p(p)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("ell functions are defined for positive r")
    w = r ** (1.0 / p)
    sigma, _ = cutoff_sigma(profile.r0, w)
    l0 = 4.0 * p * p * r ** (2.0 * (p - 1.0) / p) * sigma**2
    l1 = (
        p * r ** (1.0 - 1.0 / p) * profile.k1_at(w)
        - p * profile.k2 * r ** (1.0 + profile.theta / p)
        + 4.0 * p * (p - 1.0) * r ** (1.0 - 2.0 / p) * sigma**2
    )
    head = p * profile.k2 * profile.r0**profile.theta * r
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = (p - 1.0) / p * l0 / r - l1
    ell = np.where(r < profile.r0**p, head, tail)
    return l0, l1, ell


def _rate(profile: CurvatureProfile, w: np.ndarray) -> np.ndarray:
    """h(w), the log-derivative of psi' in the variable w = r^{1/p}, below r0."""
    return 0.25 * (
        profile.k1_at(w)
        - profile.k2 * w ** (1.0 + profile.theta)
        + profile.k2 * profile.r0**profile.theta * w
    )


def profile_exponent(profile: CurvatureProfile) -> float:
    """(1/4) int_0^{r0} k1 + (k2/8) r0^{2+theta}."""
    k1_part = float(profile.integral(profile.r0))
    return 0.25 * k1_part + profile.k2 / 8.0 * profile.r0 ** (2.0 + profile.theta)


class ContractionConstants(NamedTuple):
    c_p: float
    lam: float
    c_p_uniform: float


class CorollaryConstants(NamedTuple):
    prefactor: float
    rate: float
    lam: float


@dataclass(frozen=True)
class PsiConstants:
    c1_tilde: float
    c2_tilde: float
    lam: float
    c_p: float


def contraction_constants(profile: CurvatureProfile, p: float) -> ContractionConstants:
    """c_p and lambda of the W_p contraction, with the p-free majorant of c_p."""
    _check_p(p)
    exponent = profile_exponent(profile)
    c_p = (1.0 + profile.r0) ** ((p - 1.0) / p) * math.exp(exponent / p)
    lam = profile.k3 * profile.r0**profile.theta * math.exp(-exponent)
    return ContractionConstants(c_p, lam, (1.0 + profile.r0) * math.exp(exponent))


def cor1_constants(k1: float, k2: float, p: float) -> CorollaryConstants:
    """Closed-form constants under the linear bound I^Z <= k1 - k2 rho."""
    if k1 < 0:
        raise DomainError(f"k1 must be non-negative, got {k1}")
    if not k2 > 0:
        raise DomainError(f"k2 must be positive, got {k2}")
    _check_p(p)
    ratio = k1 * k1 / k2
    prefactor = (1.0 + 2.0 * k1 / k2) ** ((p - 1.0) / p) * math.exp(ratio / p)
    lam = 0.5 * k2 * math.exp(-ratio)
    return CorollaryConstants(prefactor, lam / p, lam)


def moment_bound(profile: CurvatureProfile, p: float, rho: float, elapsed: float) -> float:
    """c_p e^{-lambda t / p} (rho v rho^{1/p})."""
    c_p, lam, _ = contraction_constants(profile, p)
    return c_p * math.exp(-lam * elapsed / p) * max(rho, rho ** (1.0 / p))


def mean_distance_bound(profile: CurvatureProfile, rho: float, elapsed: float) -> float:
    """c_1 e^{-lambda t} rho, the bound on E rho_t."""
    c_1, lam, _ = contraction_constants(profile, 1.0)
    return c_1 * math.exp(-lam * elapsed) * rho


def closed_form_mean_bound(k1: float, k2: float, rho: float, elapsed: float) -> float:
    """exp(k1^2/k2 - lambda t) rho under the linear bound."""
    lam = cor1_constants(k1, k2, 1.0).lam
    return math.exp(k1 * k1 / k2 - lam * elapsed) * rho


def chained_w1_factor(segments: Sequence[tuple[CurvatureProfile, float]]) -> float:
    """W_1 contraction factor over consecutive intervals with constant profiles.

    ``segments`` lists (profile, duration) pairs; the factor is the product of
    c_1 e^{-lambda duration} over the intervals.
    """
    factor = 1.0
    for profile, duration in segments:
        if duration < 0:
            raise DomainError(f"interval durations must be non-negative, got {duration}")
        c_1, lam, _ = contraction_constants(profile, 1.0)
        factor *= c_1 * math.exp(-lam * duration)
    return factor


# ---------------------------------------------------------------------------
# psi tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PsiTable:
    """psi, psi', psi'' on a logarithmic grid, plus evaluation anywhere."""

    p: float
    profile: CurvatureProfile
    grid: np.ndarray
    psi: np.ndarray
    psi_prime: np.ndarray
    psi_double_prime: np.ndarray
    constants: PsiConstants
    tol: float
    head_w: np.ndarray
    head_integral: np.ndarray
    head_exponent: np.ndarray

    @property
    def knee(self) -> float:
        """r0^p, where the closed-form tail starts."""
        return self.profile.r0**self.p

    @property
    def psi_knee(self) -> float:
        return self.p * self.profile.r0 ** (self.p - 1.0) * float(self.head_integral[-1])

    def tail(self, r: np.ndarray) -> np.ndarray:
        p, r0 = self.p, self.profile.r0
        return self.psi_knee + p * (r ** (1.0 / p) * r0 ** (p - 1.0) - r0**p)

    def __call__(self, r: ArrayLike) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise DomainError("psi is defined for non-negative r")
        spline = CubicHermiteSpline(self.head_w, self.head_integral, np.exp(self.head_exponent))
        head = r <= self.knee
        out = np.empty_like(r)
        w = r[head] ** (1.0 / self.p)
        out[head] = self.p * self.profile.r0 ** (self.p - 1.0) * spline(w)
        out[~head] = self.tail(r[~head])
        return out

    def rows(self) -> list[tuple[float, float, float, float]]:
        return list(
            zip(
                self.grid.tolist(),
                self.psi.tolist(),
                self.psi_prime.tolist(),
                self.psi_double_prime.tolist(),
            )
        )


def psi_grid(profile: CurvatureProfile, p: float, nodes: int = PSI_GRID_NODES) -> np.ndarray:
    knee = profile.r0**p
    return np.geomspace(PSI_GRID_LOW * knee, (profile.r0 + 2.0) ** p, nodes)


def build_psi(
    profile: CurvatureProfile,
    p: float,
    tol: float = DEFAULT_TOL,
    grid: Union[np.ndarray, Sequence[float], None] = None,
) -> PsiTable:
    """Tabulate psi and its derivatives; raises QuadratureError on non-convergence."""
    _check_p(p)
    if not tol > 0:
        raise DomainError(f"quadrature tolerance must be positive, got {tol}")
    r0 = profile.r0
    r = np.asarray(psi_grid(profile, p) if grid is None else grid, dtype=float)
    if r.ndim != 1 or len(r) == 0 or np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise DomainError("psi grid must be increasing positive reals")
    knee = r0**p
    head = r <= knee

    w = np.minimum(r[head] ** (1.0 / p), r0)
    edges = np.unique(np.concatenate([[0.0, r0], w]))

    def rate(w: np.ndarray) -> np.ndarray:
        return _rate(profile, w)

    pieces = adaptive_cumulative(rate, edges, tol)
    exponent_at_edges = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])

    def exponent(s: np.ndarray) -> np.ndarray:
        j = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, len(edges) - 2)
        upper = edges[j + 1]
        inner = gauss_legendre(rate, s.ravel(), upper.ravel()).reshape(s.shape)
        return exponent_at_edges[j + 1] + inner

    outer = adaptive_cumulative(lambda s: np.exp(exponent(s)), edges, tol)
    integral_at_edges = np.concatenate([[0.0], np.cumsum(outer)])

    scale = r0 ** (p - 1.0)
    psi = np.empty_like(r)
    psi_prime = np.empty_like(r)
    psi_double_prime = np.empty_like(r)

    k = np.searchsorted(edges, w)
    g = exponent_at_edges[k]
    psi[head] = p * scale * integral_at_edges[k]
    psi_prime[head] = scale * r[head] ** ((1.0 - p) / p) * np.exp(g)
    psi_double_prime[head] = psi_prime[head] * (
        (1.0 - p) / (p * r[head]) - _rate(profile, w) * w ** (1.0 - p) / p
    )

    psi_knee = p * scale * integral_at_edges[-1]
    rt = r[~head]
    psi[~head] = psi_knee + p * (rt ** (1.0 / p) * scale - knee)
    psi_prime[~head] = scale * rt ** ((1.0 - p) / p)
    psi_double_prime[~head] = (1.0 - p) / p * psi_prime[~head] / rt

    exponent_max = profile_exponent(profile)
    c_p, lam, _ = contraction_constants(profile, p)
    constants = PsiConstants(
        c1_tilde=p * scale,
        c2_tilde=p * scale * math.exp(exponent_max),
        lam=lam,
        c_p=c_p,
    )
    logger.debug("psi table for p=%g on %d nodes (%d below r0^p)", p, len(r), int(head.sum()))
    return PsiTable(
        p=p,
        profile=profile,
        grid=r,
        psi=psi,
        psi_prime=psi_prime,
        psi_double_prime=psi_double_prime,
        constants=constants,
        tol=tol,
        head_w=edges,
        head_integral=integral_at_edges,
        head_exponent=exponent_at_edges,
    )


def build_psi_tables(
    jobs: Sequence[tuple[CurvatureProfile, float]],
    tol: float = DEFAULT_TOL,
    threads: int = 1,
) -> list[PsiTable]:
    """Build one table per (profile, p) job, in job order."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda job: build_psi(job[0], job[1], tol), jobs))
    return [build_psi(profile, p, tol) for profile, p in jobs]


@dataclass
class LemmaResiduals:
    """Numerical residuals of the three psi properties on the table grid."""

    ode_residual: float
    pinching_violation: float
    lower_ratio: float
    upper_ratio: float
    drift_margin: float
    monotone: bool
    concave: bool
    nodes: int

    def passes(self, ode_tol: float = 1e-6, drift_tol: float = 1e-8, pinch_tol: float = PINCH_TOL) -> bool:
        return (
            self.ode_residual <= ode_tol
            and self.pinching_violation <= pinch_tol
            and self.drift_margin >= -drift_tol
            and self.monotone
            and self.concave
        )

    def __str__(self) -> str:
        return (
            f"ode residual {self.ode_residual:.2e}, pinching violation "
            f"{self.pinching_violation:.2e}, drift margin {self.drift_margin:.2e}"
        )


def lemma1_residuals(table: PsiTable) -> LemmaResiduals:
    """Check the ODE identity, the pinching bounds and the drift inequality."""
    r = table.grid
    p = table.p
    l0, l1, ell = ell_functions(table.profile, p, r)
    ode = np.abs(l1 * table.psi_prime + l0 * table.psi_double_prime + ell * table.psi_prime)

    root = r ** (1.0 / p)
    lower_ratio = float(np.min(table.psi / (table.constants.c1_tilde * root)))
    upper_ratio = float(np.max(table.psi / (table.constants.c2_tilde * root)))
    pinching = max(0.0, 1.0 - lower_ratio, upper_ratio - 1.0)

    drift = ell * table.psi_prime - table.constants.lam * table.psi
    if p > 1:
        concave = bool(np.all(table.psi_double_prime < 0))
    else:
        concave = bool(np.all(table.psi_double_prime <= 0))

    return LemmaResiduals(
        ode_residual=float(np.max(ode)),
        pinching_violation=pinching,
        lower_ratio=lower_ratio,
        upper_ratio=upper_ratio,
        drift_margin=float(np.min(drift)),
        monotone=bool(np.all(table.psi_prime > 0)),
        concave=concave,
        nodes=len(r),
    )
