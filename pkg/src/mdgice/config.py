"""Case configuration: TOML files mapped onto dataclasses."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .solver import SolverConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

CONFIG_VERSION = 1
CASES = ("advection_diffusion", "burgers", "viscous_shock")


class ConfigError(ValueError):
    """Malformed or inconsistent case configuration."""


@dataclass
class MeshSpec:
    """Uniform line grid (``ny = 0``) or triangulated ``nx x ny`` grid on ``domain``."""

    nx: int = 8
    ny: int = 0
    domain: tuple = (0.0, 1.0)


@dataclass
class CaseConfig:
    """One run: model and parameters, grid, degrees, solver and output settings.

    ``params`` holds model parameters: ``pe`` (advection-diffusion),
    ``eps`` / ``t_shock`` / ``y_inf`` / ``relax`` / ``inviscid`` (Burgers), ``mach`` / ``reynolds``
    (viscous shock).  ``p_sigma`` and ``p_u`` default to ``p_y`` when 0,
    except that ``p_u`` is 1 for the scalar cases.
    """

    name: str = "case"
    case: str = "advection_diffusion"
    version: int = CONFIG_VERSION
    p_y: int = 1
    p_sigma: int = 0
    p_u: int = 0
    params: dict = field(default_factory=dict)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    continuation: tuple = ()
    output_dir: str = "out"

    def __post_init__(self):
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; expected one of {', '.join(CASES)}")
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version} (expected {CONFIG_VERSION})")
        if self.p_y < 0 or self.p_sigma < 0 or self.p_u < 0:
            raise ConfigError("polynomial degrees must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mesh"]["domain"] = list(self.mesh.domain)
        d["continuation"] = list(self.continuation)
        d["solver"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d["solver"].items()}
        return d


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            v = data[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def parse_config(text: str, source: str = "<string>") -> CaseConfig:
    """Parse TOML text; syntax errors are reported with their line number."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    data = dict(data)
    mesh = _build(MeshSpec, data.pop("mesh", {}), "mesh")
    solver = _build(SolverConfig, data.pop("solver", {}), "solver")
    params = data.pop("params", {})
    case = _build(CaseConfig, data, "case")
    return replace(case, mesh=mesh, solver=solver, params=dict(params))


def load_config(path: str | Path) -> CaseConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dump_config(cfg: CaseConfig) -> str:
    """Serialize to TOML (round-trips through :func:`parse_config`)."""
    d = cfg.to_dict()
    lines = []
    for k in ("name", "case", "version", "p_y", "p_sigma", "p_u", "continuation", "output_dir"):
        lines.append(f"{k} = {_toml_value(d[k])}")
    for section in ("params", "mesh", "solver"):
        lines.append("")
        lines.append(f"[{section}]")
        for k, v in d[section].items():
            lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


TEMPLATES = {
    "advection_diffusion": CaseConfig(
        name="boundary_layer", case="advection_diffusion", p_y=1, params={"pe": 100.0},
        mesh=MeshSpec(8, 0, (0.0, 1.0)),
        solver=SolverConfig(lambda_u=1e-12, elastic_weight=1e-10, tol=1e-14, max_iter=3000),
        continuation=(10.0,)),
    "burgers": CaseConfig(
        name="burgers", case="burgers", p_y=3,
        params={"eps": 1e-3, "t_shock": 0.5, "y_inf": 0.2, "relax": [[1.0, 600], [1e-2, 600], [1e-4, 800]]},
        mesh=MeshSpec(10, 10, (0.0, 1.0, 0.0, 1.0)),
        solver=SolverConfig(lambda_y=1e-4, lambda_sigma=1e-4, lambda_u=1e-4, elastic_weight=1e-2,
                            tol=5e-8, max_iter=2000, refine=False),
        continuation=(1e-2,)),
    "viscous_shock": CaseConfig(
        name="viscous_shock", case="viscous_shock", p_y=4,
        params={"mach": 5.0, "reynolds": 1e3, "initial_width": 0.002},
        mesh=MeshSpec(16, 0, (-0.04, 0.01)),
        solver=SolverConfig(lambda_u=1e-8, elastic_weight=1e-8, tol=1e-12, rtol=1e-7, max_iter=3000)),
}
