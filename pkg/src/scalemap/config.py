"""Run configuration: a flat key-value file overridden by command-line flags."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .engine import MODEL_KINDS, FitPlan
from .laplace import LaplaceConfig


class ConfigError(ValueError):
    pass


def _parse_list(text, cast=str):
    text = str(text).strip()
    if not text:
        return ()
    return tuple(cast(t.strip()) for t in text.split(",") if t.strip())


@dataclass(frozen=True)
class RunConfig:
    # inputs
    graph: str | None = None
    ids: str | None = None
    data: str | None = None
    stratified: str | None = None
    centroids: str | None = None
    partition: str | None = None
    grid: str | None = None          # "ROWSxCOLS" partition over centroids
    lattice: str | None = None       # "ROWSxCOLS" synthetic map instead of graph files
    spacing: float = 10.0            # lattice cell size in km
    # model
    model: str = "global"
    family: str = "lcar"
    k: int = 0
    samples: int = 1000
    seed: int = 0
    workers: int | None = None
    step: float = 0.75
    log_drop: float = 6.0
    max_points: int = 400
    # simulation
    scenario: str = "scenario1"
    high_centers: tuple = ()
    low_centers: tuple = ()
    knots: int = 40
    kappa: float = 8.0
    levels: tuple = (1.0, 10.0, 50.0)
    replicates: int = 20
    models: tuple = ("global", "disjoint", "k1")
    # outputs
    out: str = "out"

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}")
        if self.family not in ("lcar", "icar"):
            raise ConfigError("family must be lcar or icar (bym has no inference)")
        if self.model == "k_order" and self.k < 1:
            raise ConfigError("k_order needs k >= 1")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        for m in self.models:
            parse_model_label(m)

    def laplace(self) -> LaplaceConfig:
        return LaplaceConfig(grid_step=self.step, grid_log_drop=self.log_drop,
                             max_grid_points=self.max_points)

    def plan(self, label: str | None = None) -> FitPlan:
        kind, k = parse_model_label(label) if label else (self.model, self.k)
        return FitPlan(kind, self.family, k, self.samples, self.seed, self.workers, self.laplace())

    def check_files(self, *names):
        for name in names:
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name} file not found: {path}")

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def parse_model_label(label: str) -> tuple[str, int]:
    """'global', 'disjoint' or 'k<N>' / 'k_order:<N>'."""
    s = str(label).strip()
    if s in ("global", "disjoint"):
        return s, 0
    for prefix in ("k_order:", "k"):
        if s.startswith(prefix) and s[len(prefix):].isdigit():
            k = int(s[len(prefix):])
            if k < 1:
                raise ConfigError("k-order models need k >= 1")
            return "k_order", k
    raise ConfigError(f"unknown model label {label!r}")


_CASTS = {
    "spacing": float, "k": int, "samples": int, "seed": int, "workers": int,
    "step": float, "log_drop": float, "max_points": int, "knots": int,
    "kappa": float, "replicates": int,
    "high_centers": lambda v: _parse_list(v, int),
    "low_centers": lambda v: _parse_list(v, int),
    "levels": lambda v: _parse_list(v, float),
    "models": lambda v: _parse_list(v, str),
}


def coerce(key: str, value):
    if value is None:
        return None
    cast = _CASTS.get(key)
    if cast is None:
        return str(value)
    if isinstance(value, (list, tuple)):
        value = ",".join(str(v) for v in value)
    try:
        return cast(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = coerce(key, value)
    return out


def build_config(file_values: dict, overrides: dict) -> RunConfig:
    """Merge file values with non-None overrides and validate."""
    known = {f.name for f in fields(RunConfig)}
    merged = dict(file_values)
    for key, value in overrides.items():
        if key in known and value is not None:
            merged[key] = coerce(key, value)
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

