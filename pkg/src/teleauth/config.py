"""Run configuration shared by the library pipeline and the CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class RunConfig:
    sample_rate: float = 60.0
    window_seconds: float = 1.0
    n_states: int = 4            # emitting states per gesture model
    n_mixtures: int = 2
    rel_tol: float = 1e-5
    max_iter: int = 100
    seed: int = 0
    normalization: bool = False
    skip_width: int = 0

    def __post_init__(self):
        for name in ("sample_rate", "window_seconds", "rel_tol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("n_states", "n_mixtures", "max_iter"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        if self.skip_width not in (0, 1):
            raise ConfigurationError(f"skip_width must be 0 or 1, got {self.skip_width!r}")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(name, raw, kind):
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigurationError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"{name}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment. Keys may use dashes."""
    kinds = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    kinds = {k: {"float": float, "int": int, "bool": bool}[v] for k, v in kinds.items()}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigurationError(f"config line {lineno}: expected key = value, got {raw!r}")
        if key not in kinds:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, value.strip(), kinds[key])
    return out


def load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())
