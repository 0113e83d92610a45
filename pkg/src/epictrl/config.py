"""Scenario configuration: INI files, presets and flag overrides."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .grid import GridSpec
from .model import EpidemicState, ModelParams, ParameterError, validate_params
from .sde import SdeScheme
from .solver import SolverConfig

SWEEP_PARAMS = ("cap_L", "sigma_vol")
PRESETS = ("desk", "paper")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.5
    horizon: float = 300.0
    seed: int = 20200501
    n_paths: int = 2000
    s0: tuple[float, float, float] = (0.99, 0.01, 0.1)
    xi_eps: float = 0.01

    @property
    def scheme(self) -> SdeScheme:
        return SdeScheme(dt=self.dt, horizon=self.horizon, seed=self.seed)

    @property
    def state(self) -> EpidemicState:
        return EpidemicState(*self.s0)


@dataclass(frozen=True)
class SweepConfig:
    param: str | None = None
    values: tuple[float, ...] = ()
    # drift modes to tabulate; empty means just the model's own
    drift_modes: tuple[str, ...] = ()

    def validate(self) -> "SweepConfig":
        if self.param is not None and self.param not in SWEEP_PARAMS:
            raise ParameterError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.param!r}")
        return self


@dataclass(frozen=True)
class ScenarioConfig:
    model: ModelParams = field(default_factory=ModelParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    sim: SimConfig = field(default_factory=SimConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: str = "out"

    @property
    def drift_mode(self) -> str:
        return self.model.drift_mode

    def validate(self) -> "ScenarioConfig":
        validate_params(self.model)
        self.solver.validate(self.model)
        self.grid.validate(self.model.gamma)
        self.sweep.validate()
        self.sim.scheme  # integer step count check
        self.sim.state.validate(self.model)
        return self

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(
            self,
            solver=dataclasses.replace(self.solver, seed=seed),
            sim=dataclasses.replace(self.sim, seed=seed),
        )

    def to_ini(self) -> str:
        lines = []
        for name in _SECTIONS:
            lines.append(f"[{name}]")
            lines += [f"{k} = {_fmt(v)}" for k, v in dataclasses.asdict(getattr(self, name)).items()]
            lines.append("")
        lines += ["[output]", f"dir = {self.output_dir}", ""]
        return "\n".join(lines)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ini())
        return path


_SECTIONS = ("model", "solver", "grid", "sim", "sweep")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ParameterError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text, 0)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if default and isinstance(default[0], str):
            return tuple(items)
        return tuple(float(s) if not _is_word(s) else s for s in items)
    return text or None


def _is_word(s: str) -> bool:
    try:
        float(s)
        return False
    except ValueError:
        return True


def _update(obj, values: dict):
    known = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
    changes = {}
    for key, text in values.items():
        if key not in known:
            raise ParameterError(f"unknown key {key!r} for {type(obj).__name__}")
        try:
            changes[key] = _coerce(text, known[key])
        except ValueError as exc:
            raise ParameterError(f"bad value for {key}: {text!r}") from exc
    return dataclasses.replace(obj, **changes)


def preset(name: str = "desk") -> ScenarioConfig:
    """Built-in scales. ``desk`` fits a laptop; ``paper`` uses the full ensemble size."""
    if name not in PRESETS:
        raise ParameterError(f"unknown preset {name!r}")
    solver = SolverConfig(n_paths=200, dt=1.0, horizon=1500.0)
    sim = SimConfig(n_paths=2000 if name == "desk" else 6000)
    return ScenarioConfig(solver=solver, sim=sim)


def parse_ini(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParameterError(f"malformed config: {exc}") from exc
    cfg = base or preset("desk")
    parts = {}
    for name in cp.sections():
        if name == "output":
            continue
        if name not in _SECTIONS:
            raise ParameterError(f"unknown section [{name}]")
        parts[name] = _update(getattr(cfg, name), dict(cp[name]))
    out_dir = cp.get("output", "dir", fallback=cfg.output_dir)
    return dataclasses.replace(cfg, output_dir=out_dir, **parts)


def load_config(path=None, preset_name: str = "desk") -> ScenarioConfig:
    base = preset(preset_name)
    if path is None:
        return base
    return parse_ini(Path(path).read_text(), base)
