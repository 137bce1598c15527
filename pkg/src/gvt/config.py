"""Line-oriented ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .block import AblationFlags
from .errors import ConfigError
from .model import ModelConfig


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr0: float = 5e-4
    weight_decay: float = 0.05
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    out: str = "runs/default"
    flip: bool = False
    wall_clock: bool = True
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must lie in (0, 1)")


_FLAG_KEYS = {f.name for f in fields(AblationFlags)}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"flags"}
_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"model"}


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_pair(key: str, raw: str) -> tuple[int, int]:
    parts = raw.replace("x", ",").split(",")
    try:
        vals = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{key}: expected two integers, got {raw!r}") from None
    if len(vals) != 2:
        raise ConfigError(f"{key}: expected two integers, got {raw!r}")
    return vals


def _convert(key: str, raw: str, default):
    if key in ("pool_at", "embed_hidden", "strides") and raw.lower() in ("auto", "none", ""):
        return None
    if key in ("image_size", "strides"):
        return _parse_pair(key, raw)
    if isinstance(default, bool):
        return _parse_bool(key, raw)
    if isinstance(default, int) or key in ("pool_at", "embed_hidden"):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FLAG_KEYS | _MODEL_KEYS | _RUN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def run_config_from_dict(values: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    flag_kw, model_kw, run_kw = {}, {}, {}
    for key, raw in values.items():
        if key in _FLAG_KEYS:
            flag_kw[key] = _convert(key, raw, getattr(base.model.flags, key))
        elif key in _RUN_KEYS:
            run_kw[key] = _convert(key, raw, getattr(base, key))
        elif key in _MODEL_KEYS:
            model_kw[key] = _convert(key, raw, getattr(base.model, key))
        else:
            raise ConfigError(f"unknown key {key!r}")
    if "seed" in run_kw:
        model_kw["seed"] = run_kw["seed"]
    flags = replace(base.model.flags, **flag_kw)
    model = replace(base.model, flags=flags, **model_kw)
    return replace(base, model=model, **run_kw)


def load_run_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return run_config_from_dict(parse_config_text(text))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "auto"
    return repr(value) if isinstance(value, float) else str(value)


def dump_run_config(run: RunConfig) -> str:
    lines = []
    m = run.model
    for key in sorted(_MODEL_KEYS - {"seed"}):
        lines.append(f"{key} = {_fmt(getattr(m, key))}")
    for key in sorted(_FLAG_KEYS):
        lines.append(f"{key} = {_fmt(getattr(m.flags, key))}")
    for key in sorted(_RUN_KEYS):
        lines.append(f"{key} = {_fmt(getattr(run, key))}")
    return "\n".join(lines) + "\n"
