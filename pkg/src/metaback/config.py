"""Flat key=value run-configuration files.

One `key = value` pair per line; blank lines and `#` comments are ignored.
Every key must appear in the schema below; unknown or duplicated keys are
errors so typos never silently fall back to defaults.
"""
from __future__ import annotations

from pathlib import Path
from typing import Callable

from .errors import InvalidConfigError

EXPERIMENTS = ("sinusoid", "mnist")
ALGORITHMS = ("meta_backward", "imaml", "avg_init", "random_init")


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _float_pair(raw: str) -> tuple[float, float]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'lo,hi', got {raw!r}")
    return float(parts[0]), float(parts[1])


def _choice(*options: str) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"must be one of {options}, got {raw!r}")
        return raw

    return parse


# key -> value parser. Defaults live on the config dataclasses; this file
# only validates and types what the user wrote.
SCHEMA: dict[str, Callable[[str], object]] = {
    "experiment": _choice(*EXPERIMENTS),
    "algorithm": _choice(*ALGORITHMS),
    "trials": int,
    "seed": int,
    "output_dir": str,
    "data_dir": str,
    "finetune.shots": int,
    "finetune.steps": int,
    "finetune.lr": float,
    "sinusoid.input_range": _float_pair,
    "sinusoid.phase_mode": _choice("fixed", "random"),
    "sinusoid.train_size": int,
    "backward.rounds": int,
    "backward.alpha": float,
    "backward.batch_size": int,
    "backward.gamma": float,
    "backward.delta_max": float,
    "local.steps": int,
    "local.lr": float,
    "local.grad_tol": float,
    "local.batch_size": int,
    "imaml.X": int,
    "imaml.Y": int,
    "imaml.cg_steps": int,
    "imaml.lambda": float,
    "imaml.inner_lr": float,
    "imaml.outer_lr": float,
    "imaml.batch_size": int,
    "channel.bandwidth_hz": float,
    "channel.tx_power_w": float,
    "channel.noise_psd": float,
    "channel.bits_per_element": int,
    "channel.per_agent_broadcast": _bool,
    "energy.device_watts": float,
    "energy.seconds_per_grad_eval": float,
    "energy.timing": _choice("analytic", "measured"),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse config text into a typed {key: value} mapping."""
    values: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in SCHEMA:
            raise InvalidConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise InvalidConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = SCHEMA[key](raw)
        except ValueError as exc:
            raise InvalidConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def parse_config_file(path: str | Path) -> dict[str, object]:
    path = Path(path)
    return parse_config_text(path.read_text(), source=str(path))
