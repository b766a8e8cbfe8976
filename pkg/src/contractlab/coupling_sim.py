"""Euler–Maruyama simulation of coupled diffusions.

Three constructions are simulated, vectorized over paths:

* the mixed reflection/parallel coupling, where Y receives the mirror image
  of X's first noise component (weighted by the cutoff sigma of the current
  distance) and the same second component;
* the scalar radial process ``dr = 2 sqrt(2) sigma(r) db + (k1(r) - k2 r^{1+theta}) dt``
  absorbed at 0, which dominates the coupled distance of a validated model;
* the Girsanov coupling, where both processes share their noise and Y is
  pushed towards X with the deterministic-in-time rate xi_t.

Coupling (absorption) is declared when the distance falls below
``1e-6 * max(1, rho_s)``, when the difference crosses the previous
connecting direction, or when the Brownian-bridge crossing probability test
fires. After coupling Y is set equal to X for the rest of the path.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import DomainError, SimulationError, UnsupportedModelError
from .models import ArrayLike, CurvatureProfile, DriftModel
from .psi_core import cutoff_sigma
from .streams import FrozenNoise, NoiseSource, PathNoise, block_steps, split_block

logger = logging.getLogger(__name__)

DEFAULT_DT: float = 1e-3
COUPLE_REL: float = 1e-6
GIRSANOV_RETRIES: int = 3
SQRT2: float = math.sqrt(2.0)


class CouplingKind(str, Enum):
    REFLECTION_MIXED = "reflection_mixed"
    GIRSANOV = "girsanov"


@dataclass(frozen=True)
class CouplingSpec:
    """Which coupling to run, with its parameters."""

    kind: CouplingKind = CouplingKind.REFLECTION_MIXED
    r0: float = 1.0
    k1: float = 0.0
    k2: float = 1.0
    horizon: Optional[float] = None
    p: float = 2.0

    def __post_init__(self) -> None:
        if not self.r0 > 0:
            raise DomainError(f"cutoff radius must be positive, got {self.r0}")
        if self.kind == CouplingKind.GIRSANOV:
            if self.horizon is None:
                raise DomainError("the Girsanov coupling needs a horizon T")
            if self.k1 < 0 or not self.k2 > 0:
                raise DomainError(f"Girsanov coupling needs k1 >= 0, k2 > 0, got ({self.k1}, {self.k2})")
            if not self.p > 1:
                raise DomainError(f"Girsanov coupling needs p > 1, got {self.p}")

    @classmethod
    def reflection(cls, r0: float = 1.0) -> "CouplingSpec":
        return cls(kind=CouplingKind.REFLECTION_MIXED, r0=r0)

    @classmethod
    def girsanov(cls, k1: float, k2: float, horizon: float, p: float = 2.0) -> "CouplingSpec":
        return cls(kind=CouplingKind.GIRSANOV, k1=k1, k2=k2, horizon=horizon, p=p)

    def check_start(self, s: float) -> None:
        if self.kind == CouplingKind.GIRSANOV and not self.horizon > s:  # type: ignore[operator]
            raise DomainError(f"horizon {self.horizon} must exceed the start time {s}")

    def describe(self) -> dict:
        out: dict = {"kind": self.kind.value, "r0": self.r0}
        if self.kind == CouplingKind.GIRSANOV:
            out.update({"k1": self.k1, "k2": self.k2, "horizon": self.horizon, "p": self.p})
        return out


def girsanov_energy(k1: float, k2: float, rho: float, elapsed: float) -> float:
    """Closed form of the integral of xi_t^2 over [s, T]."""
    if not elapsed > 0:
        raise DomainError(f"elapsed time must be positive, got {elapsed}")
    return (
        k1 * k1 * elapsed
        + 4.0 * k1 * rho / (math.exp(k2 * elapsed) + 1.0)
        + 2.0 * k2 * rho * rho / math.expm1(2.0 * k2 * elapsed)
    )


@dataclass
class CoupledPath:
    """One discretized coupled trajectory."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    distance: np.ndarray
    coupled_at: Optional[float]
    log_r: Optional[np.ndarray] = None
    log_n: Optional[np.ndarray] = None

    @property
    def coupled(self) -> bool:
        return self.coupled_at is not None


@dataclass
class EnsembleSnapshot:
    """Joint samples of (X_t, Y_t) at one time."""

    t: float
    x: np.ndarray
    y: np.ndarray
    distance: np.ndarray

    def moment(self, p: float) -> tuple[float, float]:
        """Mean of rho^p and its standard error."""
        values = self.distance**p
        return float(values.mean()), _standard_error(values)


@dataclass
class PathEnsemble:
    """Terminal (and snapshot) samples of N coupled paths."""

    model_label: str
    spec: CouplingSpec
    n_paths: int
    master_seed: int
    dt: float
    s: float
    t: float
    snapshots: list[EnsembleSnapshot]
    coupled_at: np.ndarray
    log_r: Optional[np.ndarray] = None
    log_n: Optional[np.ndarray] = None
    summary: dict = field(default_factory=dict)

    @property
    def terminal(self) -> EnsembleSnapshot:
        return self.snapshots[-1]

    def snapshot(self, t: float) -> EnsembleSnapshot:
        for snap in self.snapshots:
            if math.isclose(snap.t, t, rel_tol=1e-12, abs_tol=1e-12):
                return snap
        raise KeyError(t)

    def path_key(self, index: int) -> tuple[int, int]:
        """The (master_seed, path_index) key of path ``index``'s stream."""
        if not 0 <= index < self.n_paths:
            raise IndexError(index)
        return self.master_seed, index


@dataclass
class RadialPath:
    """Samples of the radial dominating process at recorded times."""

    times: np.ndarray
    values: np.ndarray
    absorbed_at: np.ndarray


@dataclass
class MarginalEnsemble:
    """Samples of a single diffusion started from given points."""

    times: list[float]
    samples: list[np.ndarray]

    def at(self, t: float) -> np.ndarray:
        for when, values in zip(self.times, self.samples):
            if math.isclose(when, t, rel_tol=1e-12, abs_tol=1e-12):
                return values
        raise KeyError(t)


def _standard_error(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def _step_count(s: float, t: float, dt: float) -> tuple[int, float]:
    if not dt > 0:
        raise DomainError(f"step size must be positive, got {dt}")
    if t < s:
        raise DomainError(f"end time {t} precedes start time {s}")
    if t == s:
        return 0, dt
    n = max(1, int(round((t - s) / dt)))
    return n, (t - s) / n


def _snapshot_steps(s: float, h: float, n_steps: int, times: Sequence[float]) -> list[int]:
    steps = []
    for when in times:
        k = 0 if n_steps == 0 else int(round((when - s) / h))
        if not 0 <= k <= n_steps:
            raise DomainError(f"snapshot time {when} lies outside the simulated interval")
        steps.append(k)
    return steps


def _schedule(
    noise: NoiseSource, n_paths: int, dim: int, n_steps: int
) -> Iterator[tuple[int, np.ndarray]]:
    done = 0
    while done < n_steps:
        size = block_steps(n_paths, dim, n_steps - done)
        raw = noise.block(size)
        for j in range(size):
            yield done + j, raw[j]
        done += size


def _chunks(n: int, threads: int) -> list[tuple[int, int]]:
    workers = max(1, threads)
    size = max(1, math.ceil(n / workers))
    return [(lo, min(n, lo + size)) for lo in range(0, n, size)]


def _guard(states: Sequence[np.ndarray], offset: int, t: float) -> None:
    bad = np.zeros(len(states[0]), dtype=bool)
    for state in states:
        bad |= ~np.isfinite(state).reshape(len(state), -1).all(axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise SimulationError(
            "non-finite state",
            path_index=offset + k,
            time=t,
            diagnostic={"state": [np.asarray(s[k]).tolist() for s in states]},
        )


def _bridge_crossed(a: np.ndarray, b: np.ndarray, variance: np.ndarray, uniform: np.ndarray) -> np.ndarray:
    """Brownian-bridge test for a hidden zero crossing between a > 0 and b > 0."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        prob = np.where(variance > 0, np.exp(-2.0 * a * b / variance), 0.0)
    return uniform < prob


# ---------------------------------------------------------------------------
# Pair kernels
# ---------------------------------------------------------------------------


@dataclass
class _PairRun:
    snapshots: list[tuple[np.ndarray, np.ndarray]]
    coupled_at: np.ndarray
    trajectory: Optional[tuple[np.ndarray, np.ndarray]] = None
    log_r: Optional[np.ndarray] = None
    log_n: Optional[np.ndarray] = None
    log_r_path: Optional[np.ndarray] = None
    log_n_path: Optional[np.ndarray] = None


def _run_pairs(
    model: DriftModel,
    spec: CouplingSpec,
    x0: np.ndarray,
    y0: np.ndarray,
    s: float,
    n_steps: int,
    h: float,
    noise: NoiseSource,
    snap_steps: Sequence[int],
    record: bool = False,
    offset: int = 0,
) -> _PairRun:
    girsanov = spec.kind == CouplingKind.GIRSANOV
    n, dim = x0.shape
    x = x0.copy()
    y = y0.copy()
    rho_start = model.distance(s, x, y)
    delta = COUPLE_REL * np.maximum(1.0, rho_start)
    coupled_at = np.where(rho_start < delta, s, np.nan)
    alive = np.isnan(coupled_at)
    y[~alive] = x[~alive]

    log_r = np.zeros(n) if girsanov else None
    log_n = np.zeros(n) if girsanov else None
    if girsanov:
        tau = spec.horizon - s  # type: ignore[operator]
        xi_scale = 2.0 * spec.k2 * rho_start / math.expm1(2.0 * spec.k2 * tau)
        q = spec.p / (spec.p - 1.0)

    wanted = {}
    for i, k in enumerate(snap_steps):
        wanted.setdefault(k, []).append(i)
    snaps: list = [None] * len(snap_steps)

    def keep(k: int) -> None:
        for i in wanted.get(k, ()):
            snaps[i] = (x.copy(), y.copy())

    traj_x = traj_y = None
    path_r = path_n = None
    if record:
        traj_x = np.empty((n_steps + 1, n, dim))
        traj_y = np.empty((n_steps + 1, n, dim))
        traj_x[0], traj_y[0] = x, y
        if girsanov:
            path_r = np.zeros((n_steps + 1, n))
            path_n = np.zeros((n_steps + 1, n))
    keep(0)

    root_h = math.sqrt(h)
    for k, raw in _schedule(noise, n, dim, n_steps):
        tn = s + k * h
        t_next = s + (k + 1) * h
        first, second, uniform = split_block(raw, dim)
        d_b1 = first * root_h
        diff = y - x
        rc = np.linalg.norm(diff, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rc[:, None] > 0, diff / rc[:, None], 0.0)
        zx = model.drift_at(tn, x)
        zy = model.drift_at(tn, y)

        if girsanov:
            xi = np.where(alive, spec.k1 + xi_scale * math.exp(spec.k2 * (tn - s)), 0.0)
            shared = SQRT2 * d_b1
            x_new = x + zx * h + shared
            y_new = y + zy * h + shared - (xi * h)[:, None] * unit
            along = np.sum(unit * d_b1, axis=1)
            log_r += xi / SQRT2 * along - 0.25 * xi * xi * h
            log_n += q * xi / SQRT2 * along - 0.25 * q * q * xi * xi * h
            variance = np.zeros(n)
        else:
            noise_scale = math.exp(-model.log_scale(tn))
            sigma, _ = cutoff_sigma(spec.r0, model.scale(tn) * rc)
            parallel = np.sqrt(np.clip(1.0 - sigma * sigma, 0.0, None))
            d_b2 = second * root_h
            mirrored = d_b1 - 2.0 * np.sum(d_b1 * unit, axis=1)[:, None] * unit
            common = parallel[:, None] * d_b2
            x_new = x + zx * h + SQRT2 * noise_scale * (sigma[:, None] * d_b1 + common)
            y_new = y + zy * h + SQRT2 * noise_scale * (sigma[:, None] * mirrored + common)
            variance = 8.0 * (sigma * noise_scale) ** 2 * h

        diff_new = y_new - x_new
        rc_new = np.linalg.norm(diff_new, axis=1)
        crossed = np.sum(diff_new * unit, axis=1) <= 0
        small = model.scale(t_next) * rc_new < delta
        bridge = _bridge_crossed(rc, rc_new, variance, uniform)
        newly = alive & (crossed | small | bridge)
        coupled_at[newly] = t_next
        alive &= ~newly
        y_new[~alive] = x_new[~alive]
        x, y = x_new, y_new
        _guard((x, y), offset, t_next)

        if record:
            traj_x[k + 1], traj_y[k + 1] = x, y  # type: ignore[index]
            if girsanov:
                path_r[k + 1], path_n[k + 1] = log_r, log_n  # type: ignore[index]
        keep(k + 1)

    return _PairRun(
        snapshots=snaps,
        coupled_at=coupled_at,
        trajectory=(traj_x, traj_y) if record else None,  # type: ignore[arg-type]
        log_r=log_r,
        log_n=log_n,
        log_r_path=path_r,
        log_n_path=path_n,
    )


def _check_model(model: DriftModel, spec: CouplingSpec) -> None:
    if model.geometry not in ("euclidean", "conformal"):
        raise UnsupportedModelError(f"no coupling for geometry '{model.geometry}'")
    if spec.kind == CouplingKind.GIRSANOV and model.geometry != "euclidean":
        raise UnsupportedModelError("the Girsanov coupling is implemented for Euclidean models only")


def _as_pairs(model: DriftModel, x: ArrayLike, y: ArrayLike, n_paths: int) -> tuple[np.ndarray, np.ndarray]:
    xs = model.points(x)
    ys = model.points(y)
    xs = np.broadcast_to(xs, (n_paths, model.dim)).astype(float) if xs.ndim == 1 else xs
    ys = np.broadcast_to(ys, (n_paths, model.dim)).astype(float) if ys.ndim == 1 else ys
    if xs.shape != (n_paths, model.dim) or ys.shape != (n_paths, model.dim):
        raise DomainError(
            f"initial pairs must be points or arrays of shape ({n_paths}, {model.dim})"
        )
    return np.ascontiguousarray(xs), np.ascontiguousarray(ys)


def simulate_coupled_pair(
    model: DriftModel,
    spec: CouplingSpec,
    x: ArrayLike,
    y: ArrayLike,
    s: float,
    t: float,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    noise: Optional[NoiseSource] = None,
) -> CoupledPath:
    """Simulate one coupled pair on [s, t], recording every step."""
    if spec.kind == CouplingKind.GIRSANOV:
        return simulate_girsanov_pair(model, spec.k1, spec.k2, x, y, s, spec.horizon, dt, seed, spec.p)  # type: ignore[arg-type]
    _check_model(model, spec)
    if not t > s:
        raise DomainError(f"end time {t} must exceed start time {s}")
    xs, ys = _as_pairs(model, x, y, 1)
    n_steps, h = _step_count(s, t, dt)
    source = noise or PathNoise(seed, [0], model.dim)
    run = _run_pairs(model, spec, xs, ys, s, n_steps, h, source, [n_steps], record=True)
    return _to_path(model, run, s, h, n_steps)


def _to_path(model: DriftModel, run: _PairRun, s: float, h: float, n_steps: int) -> CoupledPath:
    times = s + h * np.arange(n_steps + 1)
    traj_x, traj_y = run.trajectory  # type: ignore[misc]
    px, py = traj_x[:, 0, :], traj_y[:, 0, :]
    scales = np.exp([model.log_scale(float(u)) for u in times])
    distance = scales * np.linalg.norm(py - px, axis=1)
    when = run.coupled_at[0]
    return CoupledPath(
        times=times,
        x=px,
        y=py,
        distance=distance,
        coupled_at=None if np.isnan(when) else float(when),
        log_r=None if run.log_r_path is None else run.log_r_path[:, 0],
        log_n=None if run.log_n_path is None else run.log_n_path[:, 0],
    )


def simulate_girsanov_pair(
    model: DriftModel,
    k1: float,
    k2: float,
    x: ArrayLike,
    y: ArrayLike,
    s: float,
    horizon: float,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    p: float = 2.0,
) -> CoupledPath:
    """Girsanov-forced coupling on [s, T]; the pair must couple by T.

    A path that has not coupled by T is resimulated from the same stream with
    half the step, up to GIRSANOV_RETRIES times.
    """
    spec = CouplingSpec.girsanov(k1, k2, horizon, p)
    _check_model(model, spec)
    spec.check_start(s)
    xs, ys = _as_pairs(model, x, y, 1)
    step = dt
    for attempt in range(GIRSANOV_RETRIES + 1):
        n_steps, h = _step_count(s, horizon, step)
        run = _run_pairs(model, spec, xs, ys, s, n_steps, h, PathNoise(seed, [0], model.dim), [n_steps], record=True)
        if not np.isnan(run.coupled_at[0]):
            return _to_path(model, run, s, h, n_steps)
        logger.warning("Girsanov pair not coupled by T at dt=%g (attempt %d)", step, attempt + 1)
        step /= 2.0
    raise SimulationError("Girsanov coupling failed to couple by the horizon", path_index=0, time=horizon)


def _ensemble_chunk(
    model: DriftModel,
    spec: CouplingSpec,
    xs: np.ndarray,
    ys: np.ndarray,
    s: float,
    t: float,
    dt: float,
    master_seed: int,
    snapshot_times: Sequence[float],
    lo: int,
    hi: int,
) -> _PairRun:
    n_steps, h = _step_count(s, t, dt)
    steps = _snapshot_steps(s, h, n_steps, snapshot_times)
    indices = range(lo, hi)
    run = _run_pairs(
        model, spec, xs[lo:hi], ys[lo:hi], s, n_steps, h,
        PathNoise(master_seed, indices, model.dim), steps, offset=lo,
    )
    if spec.kind != CouplingKind.GIRSANOV:
        return run

    step = dt
    for attempt in range(GIRSANOV_RETRIES):
        failed = np.flatnonzero(np.isnan(run.coupled_at))
        if len(failed) == 0:
            return run
        step /= 2.0
        logger.warning(
            "%d Girsanov paths not coupled by T; resimulating at dt=%g (attempt %d)",
            len(failed), step, attempt + 1,
        )
        n_steps, h = _step_count(s, t, step)
        retry = _run_pairs(
            model, spec, xs[lo:hi][failed], ys[lo:hi][failed], s, n_steps, h,
            PathNoise(master_seed, [lo + int(i) for i in failed], model.dim),
            _snapshot_steps(s, h, n_steps, snapshot_times), offset=lo,
        )
        run.coupled_at[failed] = retry.coupled_at
        run.log_r[failed] = retry.log_r  # type: ignore[index]
        run.log_n[failed] = retry.log_n  # type: ignore[index]
        for (sx, sy), (rx, ry) in zip(run.snapshots, retry.snapshots):
            sx[failed], sy[failed] = rx, ry
    failed = np.flatnonzero(np.isnan(run.coupled_at))
    if len(failed):
        raise SimulationError(
            "Girsanov coupling failed to couple by the horizon",
            path_index=lo + int(failed[0]),
            time=t,
        )
    return run


def evolve_ensemble(
    model: DriftModel,
    spec: CouplingSpec,
    x: ArrayLike,
    y: ArrayLike,
    s: float,
    t: float,
    dt: float = DEFAULT_DT,
    n_paths: int = 1,
    master_seed: int = 0,
    snapshot_times: Optional[Sequence[float]] = None,
    moments: Sequence[float] = (1.0, 2.0),
    threads: int = 1,
) -> PathEnsemble:
    """Run N coupled paths; path i uses the stream keyed (master_seed, i).

    ``x`` and ``y`` are single points (shared by all paths) or arrays of N
    initial points. For the Girsanov coupling ``t`` is the horizon.
    """
    if n_paths < 1:
        raise DomainError(f"ensemble needs at least one path, got {n_paths}")
    _check_model(model, spec)
    if spec.kind == CouplingKind.GIRSANOV:
        spec.check_start(s)
        t = float(spec.horizon)  # type: ignore[arg-type]
    xs, ys = _as_pairs(model, x, y, n_paths)
    times = sorted(set(snapshot_times or ()) | {t})

    logger.info("simulating %d %s paths of %s on [%g, %g], dt=%g", n_paths, spec.kind.value, model.label, s, t, dt)
    chunks = _chunks(n_paths, threads)

    def work(bounds: tuple[int, int]) -> _PairRun:
        return _ensemble_chunk(model, spec, xs, ys, s, t, dt, master_seed, times, *bounds)

    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(work, chunks))
    else:
        runs = [work(c) for c in chunks]

    snapshots = []
    for i, when in enumerate(times):
        sx = np.concatenate([r.snapshots[i][0] for r in runs])
        sy = np.concatenate([r.snapshots[i][1] for r in runs])
        snapshots.append(EnsembleSnapshot(t=when, x=sx, y=sy, distance=model.distance(when, sx, sy)))
    coupled_at = np.concatenate([r.coupled_at for r in runs])
    log_r = log_n = None
    if spec.kind == CouplingKind.GIRSANOV:
        log_r = np.concatenate([r.log_r for r in runs])  # type: ignore[misc]
        log_n = np.concatenate([r.log_n for r in runs])  # type: ignore[misc]

    ensemble = PathEnsemble(
        model_label=model.label,
        spec=spec,
        n_paths=n_paths,
        master_seed=master_seed,
        dt=dt,
        s=s,
        t=t,
        snapshots=snapshots,
        coupled_at=coupled_at,
        log_r=log_r,
        log_n=log_n,
    )
    ensemble.summary = summarize(ensemble, moments)
    return ensemble


def summarize(ensemble: PathEnsemble, moments: Sequence[float] = (1.0, 2.0)) -> dict:
    terminal = ensemble.terminal
    mean, se = terminal.moment(1.0)
    return {
        "t": terminal.t,
        "mean_distance": mean,
        "mean_distance_se": se,
        "moments": {str(p): dict(zip(("mean", "se"), terminal.moment(p))) for p in moments},
        "coupled_fraction": float(np.mean(~np.isnan(ensemble.coupled_at))),
    }


def product_pairs(xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All (x_i, y_j) combinations of two sample sets, row-major in i."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return np.repeat(xs, len(ys), axis=0), np.tile(ys, (len(xs),) + (1,) * (ys.ndim - 1))


# ---------------------------------------------------------------------------
# Radial dominating process
# ---------------------------------------------------------------------------


def simulate_radial_dominant(
    profile: CurvatureProfile,
    r_init: float,
    t: float,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    s: float = 0.0,
    n_paths: int = 1,
    snapshot_times: Optional[Sequence[float]] = None,
    noise: Optional[NoiseSource] = None,
) -> RadialPath:
    """Simulate dr = 2 sqrt(2) sigma(r) db + (k1(r) - k2 r^{1+theta}) dt, absorbed at 0.

    ``db`` is the negated first noise component of the path's stream, so a 1D
    coupled pair with x < y run from the same seed sees the same noise.
    Without ``snapshot_times`` every step is recorded.
    """
    if not r_init > 0:
        raise DomainError(f"initial radius must be positive, got {r_init}")
    n_steps, h = _step_count(s, t, dt)
    record_all = snapshot_times is None
    steps = list(range(n_steps + 1)) if record_all else _snapshot_steps(s, h, n_steps, snapshot_times)  # type: ignore[arg-type]
    wanted = {}
    for i, k in enumerate(steps):
        wanted.setdefault(k, []).append(i)
    values = np.empty((len(steps), n_paths))

    r = np.full(n_paths, float(r_init))
    delta = COUPLE_REL * max(1.0, r_init)
    absorbed_at = np.where(r < delta, s, np.nan)
    alive = np.isnan(absorbed_at)
    r[~alive] = 0.0

    def keep(k: int) -> None:
        for i in wanted.get(k, ()):
            values[i] = r

    keep(0)
    source = noise or PathNoise(seed, range(n_paths), 1)
    root_h = math.sqrt(h)
    for k, raw in _schedule(source, n_paths, 1, n_steps):
        t_next = s + (k + 1) * h
        first, _, uniform = split_block(raw, 1)
        db = -first[:, 0] * root_h
        sigma, _ = cutoff_sigma(profile.r0, r)
        drift = profile.k1_at(r) - profile.k2 * r ** (1.0 + profile.theta)
        r_new = r + 2.0 * SQRT2 * sigma * db + drift * h
        variance = 8.0 * sigma * sigma * h
        newly = alive & ((r_new <= 0) | (r_new < delta) | _bridge_crossed(r, r_new, variance, uniform))
        absorbed_at[newly] = t_next
        alive &= ~newly
        r_new[~alive] = 0.0
        r = r_new
        _guard((r,), 0, t_next)
        keep(k + 1)

    times = s + h * np.asarray(steps, dtype=float)
    return RadialPath(times=times, values=values, absorbed_at=absorbed_at)


# ---------------------------------------------------------------------------
# Single-diffusion ensembles
# ---------------------------------------------------------------------------


def _marginal_chunk(
    model: DriftModel,
    x0: np.ndarray,
    s: float,
    n_steps: int,
    h: float,
    noise: NoiseSource,
    steps: Sequence[int],
    offset: int,
) -> list[np.ndarray]:
    x = x0.copy()
    n, dim = x.shape
    wanted = {}
    for i, k in enumerate(steps):
        wanted.setdefault(k, []).append(i)
    out: list = [None] * len(steps)
    for i in wanted.get(0, ()):
        out[i] = x.copy()
    root_h = math.sqrt(h)
    for k, raw in _schedule(noise, n, dim, n_steps):
        tn = s + k * h
        first, _, _ = split_block(raw, dim)
        x = x + model.drift_at(tn, x) * h + SQRT2 * math.exp(-model.log_scale(tn)) * root_h * first
        _guard((x,), offset, tn + h)
        for i in wanted.get(k + 1, ()):
            out[i] = x.copy()
    return out


def evolve_marginal(
    model: DriftModel,
    x0: ArrayLike,
    s: float,
    t: float,
    dt: float = DEFAULT_DT,
    master_seed: int = 0,
    n_paths: Optional[int] = None,
    snapshot_times: Optional[Sequence[float]] = None,
    threads: int = 1,
    frozen: bool = False,
) -> MarginalEnsemble:
    """Simulate X alone from each starting point; path i uses stream (master_seed, i).

    Two calls with the same master seed share their noise path by path, which
    is the synchronous coupling of the two marginal laws.
    """
    points = model.points(x0)
    if points.ndim == 1:
        if n_paths is None:
            raise DomainError("n_paths is required when starting from a single point")
        points = np.broadcast_to(points, (n_paths, model.dim)).astype(float)
    n = len(points)
    n_steps, h = _step_count(s, t, dt)
    times = sorted(set(snapshot_times or ()) | {t})
    steps = _snapshot_steps(s, h, n_steps, times)

    def work(bounds: tuple[int, int]) -> list[np.ndarray]:
        lo, hi = bounds
        source: NoiseSource = (
            FrozenNoise(hi - lo, model.dim) if frozen else PathNoise(master_seed, range(lo, hi), model.dim)
        )
        return _marginal_chunk(model, points[lo:hi], s, n_steps, h, source, steps, lo)

    chunks = _chunks(n, threads)
    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(work, chunks))
    else:
        runs = [work(c) for c in chunks]
    samples = [np.concatenate([run[i] for run in runs]) for i in range(len(times))]
    return MarginalEnsemble(times=list(times), samples=samples)
