"""JSON run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .forms import ModelParams
from .time_solver import SolverConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Physical constants; ``None`` entries fall back to the scenario defaults."""

    nu: float | None = None
    kappa: float | None = None
    forch: float | None = None
    power: float | None = None
    a0: float | None = None
    a1: float | None = None
    phi_in: float | None = None
    dt: float | None = None
    t_final: float | None = None
    inlet_peak: float = 10.0

    def overrides(self) -> dict[str, float]:
        skip = {"inlet_peak"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip and getattr(self, f.name) is not None}


@dataclass
class MeshConfig:
    """Exactly one of ``builtin`` or ``file``.

    ``builtin`` is ``"unit_square"`` (uses ``n``, an int or strictly increasing list) or
    ``"channel"`` (uses ``nx``, ``ny``, ``length``, ``height``).
    """

    builtin: str | None = None
    file: str | None = None
    n: int | list[int] | None = None
    nx: int = 48
    ny: int = 6
    length: float | None = None
    height: float | None = None

    def n_list(self) -> list[int]:
        if self.n is None:
            return [8, 16, 32, 64]
        return [self.n] if isinstance(self.n, int) else list(self.n)


@dataclass
class OutputConfig:
    directory: str = "out"
    vtk: str = "final"  # "none", "final" or "every"
    vtk_interval: int = 1
    csv: bool = True


@dataclass
class RunConfig:
    scenario: str
    model: ModelConfig = field(default_factory=ModelConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    manufactured: bool = False

    def __post_init__(self):
        if self.scenario not in ("convergence", "simulate"):
            raise ConfigError(f"scenario must be 'convergence' or 'simulate', got {self.scenario!r}")
        m = self.mesh
        if (m.builtin is None) == (m.file is None):
            raise ConfigError("mesh needs exactly one of 'builtin' or 'file'")
        if m.builtin not in (None, "unit_square", "channel"):
            raise ConfigError(f"unknown builtin mesh {m.builtin!r}")
        if self.scenario == "convergence":
            if not self.manufactured:
                raise ConfigError("the convergence study needs 'manufactured': true")
            if m.builtin != "unit_square":
                raise ConfigError("the convergence study runs on the builtin unit_square mesh")
            ns = m.n_list()
            if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
                raise ConfigError(f"n-list must be non-empty and strictly increasing, got {ns}")
        if self.output.vtk not in ("none", "final", "every"):
            raise ConfigError(f"output.vtk must be 'none', 'final' or 'every', got {self.output.vtk!r}")
        if self.output.vtk_interval < 1:
            raise ConfigError("output.vtk_interval must be at least 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        if "scenario" not in raw:
            raise ConfigError("missing 'scenario'")
        try:
            return cls(
                scenario=raw["scenario"],
                model=_build(ModelConfig, raw.get("model", {}), "model"),
                mesh=_build(MeshConfig, raw.get("mesh", {}), "mesh"),
                solver=_build(SolverConfig, raw.get("solver", {}), "solver"),
                output=_build(OutputConfig, raw.get("output", {}), "output"),
                manufactured=bool(raw.get("manufactured", False)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(raw)


def _build(kind, raw, section: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"'{section}' must be an object")
    names = {f.name for f in fields(kind)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    try:
        return kind(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{section}' section: {exc}") from exc


def load_config(path) -> RunConfig:
    """Read a configuration file; I/O failures propagate as ``OSError``."""
    return RunConfig.from_json(Path(path).read_text())


def model_params(base: ModelParams, model: ModelConfig) -> ModelParams:
    """Apply the non-null config entries on top of ``base``."""
    kw = {f.name: getattr(base, f.name) for f in fields(base)}
    over = model.overrides()
    kw.update(over)
    try:
        return ModelParams.derived(
            **{k: v for k, v in kw.items() if k not in ("a2", "atilde0")}
        )
    except ValueError as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from exc
