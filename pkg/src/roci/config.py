"""Run configuration: one TOML document with a section per design ingredient.

Parsing is strict. Unknown keys, wrong types and out-of-range values raise
:class:`ConfigError` carrying the dotted key path.
"""

from __future__ import annotations

import dataclasses
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import fp
from .errors import ConfigError, ValidationError
from .inference import Method, Rule
from .interim import InterimSpec
from .montecarlo import MCConfig
from .trial import ArmGrid, EstimandSpec, Margin, Scenario, flat_scenario, make_arm_grid, margin_scenarios

PRESET_DIR = Path(__file__).parent / "presets"

_REQUIRED = object()


@dataclass
class GridSection:
    values: list[float] = field(default_factory=lambda: _REQUIRED)
    control_index: int = 0
    preference: Literal["prefer_high", "prefer_low"] = "prefer_high"


@dataclass
class EstimandSection:
    treatment: str = field(default_factory=lambda: _REQUIRED)
    population: str = field(default_factory=lambda: _REQUIRED)
    variable: str = field(default_factory=lambda: _REQUIRED)
    summary_measure: Literal["risk_ratio"] = "risk_ratio"
    intercurrent_handling: Literal["treatment_policy"] = "treatment_policy"


@dataclass
class MarginSection:
    rr: float = field(default_factory=lambda: _REQUIRED)
    alpha: float = 0.05


@dataclass
class ScenarioSection:
    name: str = field(default_factory=lambda: _REQUIRED)
    kind: Literal["flat", "margin_family", "explicit"] = "flat"
    pi0: Optional[float] = None
    count: Optional[int] = None
    probs: Optional[list[float]] = None


@dataclass
class FPSection:
    tol: float = 1e-10
    max_iter: int = 50
    beta_bound: float = 50.0
    scale: Optional[float] = None
    # restrict the power set the FP2 candidates are built from
    powers: Optional[list[float]] = None


@dataclass
class MethodsSection:
    method: Literal["delta", "bootstrap"] = "delta"
    B: int = 1000
    rule: Literal["max_preferred_passing", "contiguous_from_control"] = "max_preferred_passing"
    fp: FPSection = field(default_factory=FPSection)


@dataclass
class PerformanceSection:
    target_power: float = 0.8
    type1_cap: float = 0.05


@dataclass
class SampleSizeSection:
    scenario: str = "flat"
    n_min: int = 1000
    n_max: int = 2000
    n_step: int = 50
    granularity: int = 50
    dense_step: int = 10
    span: float = 0.75
    inflation_step: float = 0.10
    max_inflation_rounds: int = 1
    validation_nsim: int = 500
    validation_B: int = 1000

    @property
    def n_values(self) -> list[int]:
        return list(range(self.n_min, self.n_max + 1, self.n_step))


@dataclass
class SimulateSection:
    n_values: list[int] = field(default_factory=lambda: [1750])
    scenarios: Optional[list[str]] = None


@dataclass
class InterimSection:
    p0: float = 0.5
    p1: float = 0.3
    alpha: float = 0.05
    sided: Literal["one", "two"] = "two"
    power: float = 0.8
    allocation: float = 0.5
    tau: float = 1.0
    simulate: bool = False
    sim_nsim: int = 4000
    alpha_values: list[float] = field(default_factory=lambda: [0.01, 0.025, 0.05, 0.1])
    p0_values: list[float] = field(default_factory=lambda: [0.4, 0.45, 0.5, 0.55, 0.6])
    p1_values: list[float] = field(default_factory=lambda: [0.2, 0.25, 0.3, 0.35, 0.4])
    power_values: list[float] = field(default_factory=lambda: [0.7, 0.75, 0.8, 0.85, 0.9])


@dataclass
class MCSection:
    nsim: int = 1000
    master_seed: int = 20240101


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=lambda: _REQUIRED)
    margin: MarginSection = field(default_factory=lambda: _REQUIRED)
    scenarios: list[ScenarioSection] = field(default_factory=lambda: _REQUIRED)
    estimand: EstimandSection = field(default_factory=lambda: _REQUIRED)
    aims: str = ""
    methods: MethodsSection = field(default_factory=MethodsSection)
    performance: PerformanceSection = field(default_factory=PerformanceSection)
    samplesize: SampleSizeSection = field(default_factory=SampleSizeSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    interim: InterimSection = field(default_factory=InterimSection)
    mc: MCSection = field(default_factory=MCSection)
    output_dir: str = "results"

    # -- resolved domain objects -------------------------------------------

    def arm_grid(self) -> ArmGrid:
        with _at("grid"):
            return make_arm_grid(self.grid.values, self.grid.control_index, self.grid.preference)

    def margin_obj(self) -> Margin:
        with _at("margin"):
            return Margin(self.margin.rr, self.margin.alpha)

    def estimand_obj(self) -> EstimandSpec:
        with _at("estimand"):
            return EstimandSpec(**dataclasses.asdict(self.estimand))

    def scenario_list(self) -> list[Scenario]:
        grid = self.arm_grid()
        out = []
        for i, s in enumerate(self.scenarios):
            path = f"scenarios[{i}]"
            with _at(path):
                if s.kind == "flat":
                    _need(s.pi0, f"{path}.pi0")
                    out.append(flat_scenario(grid, s.pi0, s.name))
                elif s.kind == "margin_family":
                    _need(s.pi0, f"{path}.pi0")
                    count = len(grid) - 1 if s.count is None else s.count
                    out.extend(margin_scenarios(grid, s.pi0, self.margin.rr, count, s.name))
                else:
                    _need(s.probs, f"{path}.probs")
                    sc = Scenario(s.name, tuple(s.probs))
                    if len(sc.probs) != len(grid):
                        raise ValidationError(f"{len(sc.probs)} probabilities for {len(grid)} arms")
                    out.append(sc)
        names = [s.name for s in out]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ConfigError("scenarios", f"duplicate scenario names {sorted(dup)}")
        return out

    def scenario(self, name: str) -> Scenario:
        for s in self.scenario_list():
            if s.name == name:
                return s
        raise ConfigError("scenarios", f"no scenario named {name!r}")

    def fit_control(self) -> fp.FitControl:
        f = self.methods.fp
        return fp.FitControl(tol=f.tol, max_iter=f.max_iter, beta_bound=f.beta_bound)

    def candidates(self):
        if self.methods.fp.powers is None:
            return None
        import itertools

        return tuple(itertools.combinations_with_replacement(sorted(self.methods.fp.powers), 2))

    def mc_config(self, method=None, nsim=None, B=None, seed=None) -> MCConfig:
        with _at("mc"):
            return MCConfig(
                nsim=self.mc.nsim if nsim is None else nsim,
                method=Method(method or self.methods.method),
                B=self.methods.B if B is None else B,
                alpha=self.margin.alpha,
                rule=Rule(self.methods.rule),
                master_seed=self.mc.master_seed if seed is None else seed,
                scale=self.methods.fp.scale,
                fit=self.fit_control(),
                candidates=self.candidates(),
            )

    def interim_spec(self) -> InterimSpec:
        i = self.interim
        with _at("interim"):
            return InterimSpec(i.p0, i.p1, i.alpha, i.sided, i.power, i.allocation, i.tau)

    def validate(self) -> "RunConfig":
        _check(len(self.scenarios) > 0, "scenarios", "at least one scenario is required")
        _check(self.simulate.scenarios is None or len(self.simulate.scenarios) > 0,
               "simulate.scenarios", "must not be empty (omit it to run every scenario)")
        self.arm_grid()
        self.margin_obj()
        self.estimand_obj()
        self.scenario_list()
        self.interim_spec()
        self.mc_config()
        _check(0 < self.performance.target_power < 1, "performance.target_power", "must lie in (0, 1)")
        _check(0 < self.performance.type1_cap < 1, "performance.type1_cap", "must lie in (0, 1)")
        ss = self.samplesize
        _check(ss.n_step > 0 and ss.n_min <= ss.n_max, "samplesize", "need n_step > 0 and n_min <= n_max")
        _check(ss.granularity > 0, "samplesize.granularity", "must be positive")
        _check(ss.dense_step > 0, "samplesize.dense_step", "must be positive")
        _check(0 < ss.span <= 1, "samplesize.span", "must lie in (0, 1]")
        _check(ss.inflation_step >= 0, "samplesize.inflation_step", "must be non-negative")
        _check(ss.validation_B >= 100, "samplesize.validation_B", "must be >= 100")
        _check(self.mc.nsim >= 1, "mc.nsim", "must be >= 1")
        _check(self.methods.B >= 100, "methods.B", "must be >= 100")
        _check(self.interim.sim_nsim >= 1, "interim.sim_nsim", "must be >= 1")
        names = {s.name for s in self.scenario_list()}
        _check(ss.scenario in names, "samplesize.scenario", f"unknown scenario {ss.scenario!r}")
        for name in self.simulate.scenarios or []:
            _check(name in names, "simulate.scenarios", f"unknown scenario {name!r}")
        return self

    def to_dict(self) -> dict:
        return _drop_none(dataclasses.asdict(self))


class _at:
    """Context manager re-raising domain validation errors with a key path."""

    def __init__(self, path):
        self.path = path

    def __enter__(self):
        return self

    def __exit__(self, tp, exc, tb):
        if exc is not None and isinstance(exc, ValidationError) and not isinstance(exc, ConfigError):
            raise ConfigError(self.path, str(exc)) from exc
        return False


def _check(cond, path, reason):
    if not cond:
        raise ConfigError(path, reason)


def _need(value, path):
    if value is None:
        raise ConfigError(path, "required key is missing")


def _drop_none(obj):
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_drop_none(v) for v in obj]
    return obj


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        if value is None:
            return None
        return _coerce(inner[0], value, path)
    if origin is Literal:
        if value not in args:
            raise ConfigError(path, f"expected one of {list(args)}, got {value!r}")
        return value
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return [_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported type {tp}")


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a table, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = f"{path}.{f.name}" if path else f.name
        if f.name in data:
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], sub)
        else:
            default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
            if default is _REQUIRED:
                hint = hints[f.name]
                if dataclasses.is_dataclass(hint):
                    # name the first required key inside the missing section
                    _build(hint, {}, sub)
                raise ConfigError(sub, "required key is missing")
            kwargs[f.name] = default
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data).validate()


def loads_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"cannot parse config: {exc}") from exc
    return config_from_dict(data)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("", f"config file {path} does not exist")
    return loads_config(path.read_text(encoding="utf-8"))


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def preset_path(name: str = "refine_lung") -> Path:
    return PRESET_DIR / f"{name}.cfg"
