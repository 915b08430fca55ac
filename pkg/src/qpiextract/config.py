"""Plain-text key=value run configuration with override support.

A config file holds one ``key=value`` assignment per line; ``#`` starts a
comment and blank lines are skipped.  Overrides use the same syntax.  The
resolved configuration always covers every known key, so echoing it back
into a file reproduces the run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .rotation import FOLD_ANGLE_DEGREES

__all__ = ["CONFIG_KEYS", "ConfigError", "format_config", "load_config", "parse_assignment"]


class ConfigError(ValueError):
    """A config line, key, or value the run cannot proceed with."""


@dataclass(frozen=True)
class KeySpec:
    parse: Callable[[str], object]
    default: object
    describe: str
    check: Callable[[object], bool] = lambda value: True


def _choice(*options: str) -> Callable[[object], bool]:
    return lambda value: value in options


# epochs 0 is a sentinel: "use the per-step maximum" resolved at dispatch.
CONFIG_KEYS: dict[str, KeySpec] = {
    "seed": KeySpec(int, 0, "seed >= 0", lambda v: v >= 0),
    "alpha": KeySpec(float, 0.75, "alpha >= 0", lambda v: v >= 0),
    "lr": KeySpec(float, 1e-4, "lr > 0", lambda v: v > 0),
    "batch": KeySpec(int, 8, "batch >= 1", lambda v: v >= 1),
    "epochs": KeySpec(int, 0, "epochs >= 0 (0 = per-step maximum)", lambda v: v >= 0),
    "kl_weight": KeySpec(float, 0.0, "kl_weight >= 0", lambda v: v >= 0),
    "val_fraction": KeySpec(float, 0.1, "0 < val_fraction < 1", lambda v: 0 < v < 1),
    "patience": KeySpec(int, 0, "patience >= 0 (0 = off)", lambda v: v >= 0),
    "encoder_y_init": KeySpec(str, "from_step1", "from_step1 or random", _choice("from_step1", "random")),
    "fold_for_a0": KeySpec(int, 4, "fold in {2, 3, 4, 6}", lambda v: v in FOLD_ANGLE_DEGREES),
    "lam": KeySpec(float, 1e-8, "lam >= 0", lambda v: v >= 0),
    "max_iterations": KeySpec(int, 2000, "max_iterations >= 1", lambda v: v >= 1),
    "tolerance": KeySpec(float, 1e-12, "tolerance > 0", lambda v: v > 0),
    "support": KeySpec(int, 64, "support 64 or 127", _choice(64, 127)),
    "obs_per_solve": KeySpec(int, 10, "obs_per_solve >= 1", lambda v: v >= 1),
}


def parse_assignment(text: str, *, where: str = "override") -> tuple[str, object]:
    """Parse one ``key=value`` assignment, validating key and range."""
    if "=" not in text:
        raise ConfigError(f"{where}: expected key=value, got {text!r}")
    key, _, raw = text.partition("=")
    key, raw = key.strip(), raw.strip()
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    spec = CONFIG_KEYS[key]
    try:
        value = spec.parse(raw)
    except ValueError:
        raise ConfigError(f"{where}: invalid value for {key}: {raw!r}") from None
    if not spec.check(value):
        raise ConfigError(f"{where}: {key} out of range (expected {spec.describe}), got {raw}")
    return key, value


def load_config(path: str | Path | None = None, overrides: tuple[str, ...] = ()) -> dict:
    """Defaults, then the file's assignments, then overrides; fully validated."""
    config = {key: spec.default for key, spec in CONFIG_KEYS.items()}
    if path is not None:
        source = Path(path)
        if not source.is_file():
            raise ConfigError(f"config file not found: {source}")
        for lineno, line in enumerate(source.read_text().splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            key, value = parse_assignment(stripped, where=f"{source.name}:{lineno}")
            config[key] = value
    for text in overrides:
        key, value = parse_assignment(text)
        config[key] = value
    return config


def format_config(config: dict) -> str:
    """Render in file syntax, registry order; floats round-trip via repr."""
    lines = []
    for key in CONFIG_KEYS:
        value = config[key]
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    return "\n".join(lines) + "\n"
