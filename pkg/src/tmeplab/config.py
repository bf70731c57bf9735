"""Run configuration: TOML file with typed sections and strict keys.

Every section maps to a dataclass; unknown keys, wrong types and invalid
values raise :class:`ConfigError` naming the offending key path.  All
defaults are materialized by :meth:`RunConfig.to_dict` so that reports are
self-describing.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from dataclasses import field as _field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .errors import ConfigError

MODEL_KINDS = ("ebbm", "spin")
FORMATS = ("csv", "json", "both")


@dataclass
class EbbmSection:
    n_system: int = 1
    n_leads: int = 2
    system_onsite: list[float] = _field(default_factory=lambda: [0.0])
    system_hopping: float = 1.0
    lead_hopping: float = 1.0
    lead_onsite: float = 0.0
    lead_length: int = 0  # 0: unbounded chain
    coupling: list[float] = _field(default_factory=lambda: [0.5, 0.5])
    attach: list[int] = _field(default_factory=list)
    betas: list[float] = _field(default_factory=lambda: [1.0, 2.0])
    mus: list[float] = _field(default_factory=lambda: [0.0, 0.0])
    T_S: list[float] = _field(default_factory=list)  # diagonal; empty: 1/2
    interaction: list[list[float]] = _field(default_factory=list)  # [x, y, U]
    window: int = 1
    extra_couplings: list[list[Any]] = _field(default_factory=list)  # ["S0", "R1.0", value]


@dataclass
class SpinSection:
    n_left: int = 3
    n_system: int = 1
    n_right: int = 2
    J: float = 1.0
    field: float = 0.5
    coupling: float = 0.5
    betas: list[float] = _field(default_factory=lambda: [1.0, 2.0])
    lam: float = 1.0
    # explicit interaction; overrides the chain builder when non-empty
    n_sites: int = 0
    system: list[int] = _field(default_factory=list)
    reservoirs: list[list[int]] = _field(default_factory=list)
    terms: list[dict] = _field(default_factory=list)  # {sites = [...], matrix = [[[re, im], ...], ...]}


@dataclass
class ModelSection:
    kind: str = "ebbm"
    ebbm: EbbmSection = _field(default_factory=EbbmSection)
    spin: SpinSection = _field(default_factory=SpinSection)


@dataclass
class SweepSection:
    L_list: list[int] = _field(default_factory=lambda: [2, 3, 4])
    schemes: list[str] = _field(default_factory=lambda: ["compressed_hamiltonian", "restricted_state"])
    t_list: list[float] = _field(default_factory=lambda: [1.0])
    alpha_grid: list[list[float]] = _field(default_factory=lambda: [[0.0, 1.0]])  # [re, im]
    nu_spec: str = "reference"
    nu_time: float = 0.5
    nu_local_window: int = 1
    nu_local_density: list[float] = _field(default_factory=list)  # diagonal on the window
    s_list: list[float] = _field(default_factory=lambda: [0.5, 1.0, 2.0])
    L_ref: int = 0  # 0: 16 x max(L_list)
    nested_offset: int = 2  # spin restriction scheme: Lambda'_j has L + offset sites
    backend: str = "auto"


@dataclass
class NumericsSection:
    clustering_rtol: float = 1e-8
    quad_tol: float = 1e-10
    merge_atol: float = 1e-9
    route_tol: float = 1e-9
    R_list: list[float] = _field(default_factory=lambda: [1e2, 1e3, 1e4])
    max_modes: int = 12


@dataclass
class OutputSection:
    dir: str = "."
    format: str = "both"
    stem: str = ""


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelSection = _field(default_factory=ModelSection)
    sweep: SweepSection = _field(default_factory=SweepSection)
    numerics: NumericsSection = _field(default_factory=NumericsSection)
    output: OutputSection = _field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", key="seed")
        if self.model.kind not in MODEL_KINDS:
            raise ConfigError(f"expected one of {MODEL_KINDS}", key="model.kind")
        if self.output.format not in FORMATS:
            raise ConfigError(f"expected one of {FORMATS}", key="output.format")
        sw = self.sweep
        if not sw.L_list or any(L < 1 for L in sw.L_list):
            raise ConfigError("volumes must be positive integers", key="sweep.L_list")
        if not sw.t_list:
            raise ConfigError("need at least one time", key="sweep.t_list")
        for i, a in enumerate(sw.alpha_grid):
            if len(a) != 2:
                raise ConfigError("alpha entries are [re, im] pairs", key=f"sweep.alpha_grid[{i}]")
        if self.numerics.max_modes < 1:
            raise ConfigError("must be positive", key="numerics.max_modes")
        if any(R <= 0 for R in self.numerics.R_list):
            raise ConfigError("averaging lengths must be positive", key="numerics.R_list")
        return self

    @property
    def alphas(self) -> list[complex]:
        return [complex(re, im) for re, im in self.sweep.alpha_grid]


def _coerce(value, tp, path: str):
    origin = getattr(tp, "__origin__", None)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError("expected a table", key=path)
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected a boolean", key=path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key=path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key=path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=path)
        return value
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected an array, got {value!r}", key=path)
        (inner,) = tp.__args__
        return [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError("expected a table", key=path)
        return value
    return value  # Any


def _build(cls, table: dict, prefix: str = ""):
    import typing

    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in table.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(names))})", key=path)
        kwargs[key] = _coerce(value, hints[key], path)
    return cls(**kwargs)


def parse_config(text: str) -> RunConfig:
    try:
        table = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc), key="<toml>") from exc
    return _build(RunConfig, table).validate()


def load_config(path: str | Path | None) -> RunConfig:
    """Read a config file; ``None`` gives the all-defaults configuration."""
    if path is None:
        return RunConfig().validate()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(exc), key="--config") from exc
    return parse_config(text)
