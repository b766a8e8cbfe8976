"""Experiment configuration: one YAML file with model, profile, run and output sections."""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .errors import ConfigError, ContractLabError
from .models import MODEL_FAMILIES, CurvatureProfile, DriftModel, build_model, linear_bound_profile
from .verify import PROBE_FUNCTIONS, InitialLaw

# Single source of truth for experiment kinds; the CLI has one subcommand per kind.
EXPERIMENT_KINDS: tuple[str, ...] = (
    "psi-table",
    "validate",
    "couple-run",
    "contract-check",
    "gradient-check",
    "harnack-check",
    "esm-run",
    "wasserstein",
)

K1_FAMILIES: tuple[str, ...] = ("constant", "linear", "table")
CONSTANT_SOURCES: tuple[str, ...] = ("psi", "closed-form")
COST_NAMES: tuple[str, ...] = ("rho_p", "rho_p_or_rho")
SEED_LIMIT: int = 1 << 64


def _number(value: Any, name: str, positive: bool = False, non_negative: bool = False) -> float:
    """Coerce a YAML scalar to float; PyYAML reads ``1e-3`` as a string."""
    if isinstance(value, bool):
        raise ConfigError(name, f"expected a number, got {value!r}")
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {value!r}") from None
    if not math.isfinite(number):
        raise ConfigError(name, f"must be finite, got {value!r}")
    if positive and not number > 0:
        raise ConfigError(name, f"must be positive, got {number}")
    if non_negative and number < 0:
        raise ConfigError(name, f"must be non-negative, got {number}")
    return number


def _integer(value: Any, name: str, minimum: int = 0) -> int:
    number = _number(value, name)
    if number != int(number):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if int(number) < minimum:
        raise ConfigError(name, f"must be at least {minimum}, got {int(number)}")
    return int(number)


def _numbers(value: Any, name: str, **checks: bool) -> list[float]:
    items = value if isinstance(value, (list, tuple)) else [value]
    if not items:
        raise ConfigError(name, "must not be empty")
    return [_number(v, f"{name}[{i}]", **checks) for i, v in enumerate(items)]


def _section(data: dict, name: str) -> dict:
    section = data.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(name, "must be a mapping")
    return section


@dataclass
class ModelConfig:
    family: str = "ou"
    params: dict = field(default_factory=dict)

    def build(self) -> DriftModel:
        try:
            return build_model(self.family, **self.params)
        except TypeError as exc:
            raise ConfigError("model", str(exc)) from None
        except ContractLabError as exc:
            raise ConfigError("model", str(exc)) from None


@dataclass
class ProfileConfig:
    k1: dict
    k2: float
    theta: float
    r0: float
    k3: float

    def build(self) -> CurvatureProfile:
        family = self.k1["family"]
        try:
            if family == "constant":
                return CurvatureProfile.constant(self.k1["value"], self.k2, self.theta, self.r0, self.k3)
            if family == "linear":
                return CurvatureProfile.linear(self.k1["slope"], self.k2, self.theta, self.r0, self.k3)
            return CurvatureProfile.table(self.k1["r"], self.k1["values"], self.k2, self.theta, self.r0, self.k3)
        except ContractLabError as exc:
            raise ConfigError("profile", str(exc)) from None


@dataclass
class RunConfig:
    seed: int
    p: list[float] = field(default_factory=lambda: [2.0])
    times: list[float] = field(default_factory=lambda: [1.0])
    paths: int = 1000
    dt: float = 1e-3
    s: float = 0.0
    x: list[float] = field(default_factory=lambda: [0.0])
    y: list[float] = field(default_factory=lambda: [1.0])
    horizon: Optional[float] = None
    start_times: list[float] = field(default_factory=lambda: [-2.0, -4.0, -8.0, -16.0])
    law_a: dict = field(default_factory=lambda: {"kind": "point", "params": [3.0]})
    law_b: dict = field(default_factory=lambda: {"kind": "uniform", "params": [-1.0, 1.0]})
    test_function: str = "sin"
    h: float = 0.05
    bootstrap: int = 100
    level: float = 0.95
    tol: float = 1e-9
    threads: int = 1
    constants: str = "psi"
    k1: Optional[float] = None
    k2: Optional[float] = None
    samples_a: Optional[str] = None
    samples_b: Optional[str] = None
    cost: str = "rho_p"
    sinkhorn: Optional[float] = None

    def law(self, which: str) -> InitialLaw:
        spec = getattr(self, which)
        try:
            return InitialLaw(str(spec["kind"]), tuple(float(v) for v in spec["params"]))
        except (KeyError, TypeError, ValueError, ContractLabError) as exc:
            raise ConfigError(f"run.{which}", str(exc)) from None


@dataclass
class OutputConfig:
    directory: Path = Path("results")
    samples: bool = False


@dataclass
class ExperimentConfig:
    """A fully validated experiment description."""

    kind: str
    model: ModelConfig
    profile: Optional[ProfileConfig]
    run: RunConfig
    output: OutputConfig

    def build_model(self) -> DriftModel:
        return self.model.build()

    def build_profile(self, model: Optional[DriftModel] = None) -> CurvatureProfile:
        """The configured profile, or the one induced by the model's linear bound."""
        if self.profile is not None:
            return self.profile.build()
        if model is not None and model.linear_bound is not None:
            return linear_bound_profile(*model.linear_bound)
        raise ConfigError("profile", f"required for {self.kind}")

    def resolved(self) -> dict:
        """The resolved configuration, embedded in every artifact."""
        return {
            "kind": self.kind,
            "model": {"family": self.model.family, **self.model.params},
            "profile": None if self.profile is None else asdict(self.profile),
            "run": asdict(self.run),
            "output": {"directory": str(self.output.directory), "samples": self.output.samples},
        }


def _parse_model(data: dict) -> ModelConfig:
    section = _section(data, "model")
    family = str(section.get("family", "ou"))
    if family not in MODEL_FAMILIES:
        known = ", ".join(sorted(MODEL_FAMILIES))
        raise ConfigError("model.family", f"unknown family '{family}' (known: {known})")
    params: dict[str, Union[int, float]] = {}
    for key, value in section.items():
        if key == "family":
            continue
        name = f"model.{key}"
        params[key] = _integer(value, name, minimum=1) if key == "dim" else _number(value, name)
    return ModelConfig(family=family, params=params)


def _parse_profile(data: dict) -> Optional[ProfileConfig]:
    if not data.get("profile"):
        return None
    section = _section(data, "profile")
    k1 = section.get("k1")
    if not isinstance(k1, dict):
        raise ConfigError("profile.k1", "must be a mapping with a 'family' key")
    family = str(k1.get("family", ""))
    if family not in K1_FAMILIES:
        raise ConfigError("profile.k1.family", f"must be one of {', '.join(K1_FAMILIES)}")
    if family == "constant":
        parsed: dict = {"family": family, "value": _number(k1.get("value"), "profile.k1.value", non_negative=True)}
    elif family == "linear":
        parsed = {"family": family, "slope": _number(k1.get("slope"), "profile.k1.slope", non_negative=True)}
    else:
        parsed = {
            "family": family,
            "r": _numbers(k1.get("r"), "profile.k1.r", non_negative=True),
            "values": _numbers(k1.get("values"), "profile.k1.values", non_negative=True),
        }
    for key in ("k2", "r0", "k3"):
        if key not in section:
            raise ConfigError(f"profile.{key}", "is required")
    return ProfileConfig(
        k1=parsed,
        k2=_number(section["k2"], "profile.k2", positive=True),
        theta=_number(section.get("theta", 0.0), "profile.theta", non_negative=True),
        r0=_number(section["r0"], "profile.r0", positive=True),
        k3=_number(section["k3"], "profile.k3", positive=True),
    )


def _parse_run(data: dict) -> RunConfig:
    section = dict(_section(data, "run"))
    if section.get("seed") is None:
        raise ConfigError("run.seed", "is required")
    seed = _integer(section.pop("seed"), "run.seed")
    if seed >= SEED_LIMIT:
        raise ConfigError("run.seed", "must fit in 64 bits")
    run = RunConfig(seed=seed)
    known = {f for f in RunConfig.__dataclass_fields__ if f != "seed"}
    for key, value in section.items():
        name = f"run.{key}"
        if key not in known:
            raise ConfigError(name, "unknown setting")
        if value is None:
            continue
        if key in ("p",):
            parsed: Any = _numbers(value, name)
            if any(v < 1 for v in parsed):
                raise ConfigError(name, "p must be at least 1")
        elif key in ("times", "start_times"):
            parsed = _numbers(value, name)
        elif key in ("x", "y"):
            parsed = _numbers(value, name)
        elif key == "paths":
            parsed = _integer(value, name, minimum=1)
        elif key == "bootstrap":
            parsed = _integer(value, name)
            if 0 < parsed < 100:
                raise ConfigError(name, "use 0 (no bootstrap) or at least 100 replicates")
        elif key == "threads":
            parsed = _integer(value, name, minimum=1)
        elif key in ("dt", "h", "tol", "sinkhorn"):
            parsed = _number(value, name, positive=True)
        elif key == "level":
            parsed = _number(value, name)
            if not 0 < parsed < 1:
                raise ConfigError(name, "must lie in (0, 1)")
        elif key in ("k1",):
            parsed = _number(value, name, non_negative=True)
        elif key in ("k2",):
            parsed = _number(value, name, positive=True)
        elif key in ("s", "horizon"):
            parsed = _number(value, name)
        elif key in ("law_a", "law_b"):
            if not isinstance(value, dict):
                raise ConfigError(name, "must be a mapping with 'kind' and 'params'")
            parsed = {"kind": str(value.get("kind")), "params": _numbers(value.get("params", []), f"{name}.params")}
        elif key == "constants":
            parsed = str(value)
            if parsed not in CONSTANT_SOURCES:
                raise ConfigError(name, f"must be one of {', '.join(CONSTANT_SOURCES)}")
        elif key == "cost":
            parsed = str(value)
            if parsed not in COST_NAMES:
                raise ConfigError(name, f"must be one of {', '.join(COST_NAMES)}")
        elif key == "test_function":
            parsed = str(value)
            if parsed not in PROBE_FUNCTIONS:
                raise ConfigError(name, f"unknown test function '{parsed}'")
        else:
            parsed = str(value)
        setattr(run, key, parsed)
    for which in ("law_a", "law_b"):
        run.law(which)
    return run


def parse_config(data: dict, kind: Optional[str] = None) -> ExperimentConfig:
    """Validate a raw mapping. ``kind`` (from the subcommand) must agree with the file's."""
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    declared = data.get("kind")
    if kind is not None and declared is not None and declared != kind:
        raise ConfigError("kind", f"file declares '{declared}' but '{kind}' was requested")
    chosen = kind or declared
    if chosen not in EXPERIMENT_KINDS:
        raise ConfigError("kind", f"must be one of {', '.join(EXPERIMENT_KINDS)}")

    output = _section(data, "output")
    return ExperimentConfig(
        kind=str(chosen),
        model=_parse_model(data),
        profile=_parse_profile(data),
        run=_parse_run(data),
        output=OutputConfig(
            directory=Path(str(output.get("directory", "results"))),
            samples=bool(output.get("samples", False)),
        ),
    )


def load_raw(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        content = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(content)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML in {path}: {exc}") from None
    return data or {}


def apply_overrides(data: dict, **overrides: Any) -> dict:
    """Merge command-line overrides (seed, out, threads, dt, paths) into a raw mapping."""
    merged = {key: (dict(value) if isinstance(value, dict) else value) for key, value in data.items()}
    run = merged["run"] = dict(merged.get("run") or {})
    targets = {"seed": "seed", "threads": "threads", "dt": "dt", "paths": "paths"}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "out":
            output = merged["output"] = dict(merged.get("output") or {})
            output["directory"] = str(value)
        elif key in targets:
            run[targets[key]] = value
        else:
            run[key] = value
    return merged


def load_config(path: Optional[Path], kind: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    return parse_config(apply_overrides(load_raw(path), **overrides), kind)

