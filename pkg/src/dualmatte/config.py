"""Flat key=value run configuration.

Config files hold lines like `train.learning_rate = 0.01`; the section
prefix names the subcommand the key belongs to. Precedence per key:
command-line flag, then config file, then built-in default. Every run
writes its fully resolved configuration next to its outputs so a run can
be reproduced from that file alone.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Union

from .errors import ConfigError, InputOutputError


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in str(text).split(","))
    except ValueError as exc:
        raise ConfigError(f"not a comma-separated integer list: {text!r}") from exc


def parse_float_tuple(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in str(text).split(","))
    except ValueError as exc:
        raise ConfigError(f"not a comma-separated number list: {text!r}") from exc


def parse_str_tuple(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def parse_fraction(text: str) -> Fraction:
    try:
        return Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a rational number: {text!r}") from exc


def _coerce(parser: Callable, value):
    if isinstance(value, str):
        try:
            return parser(value)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value {value!r}") from exc
    return value


@dataclass(frozen=True)
class Field:
    """One configurable key of a subcommand."""

    name: str
    parser: Callable
    default: object
    help: str

    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, Fraction):
        return str(value)
    if value is None:
        return ""
    return str(value)


def parse_config_file(path: Union[str, Path]) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise InputOutputError(f"{p}: cannot read config file: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if "." not in key or not key.split(".", 1)[1]:
            raise ConfigError(
                f"{p}:{lineno}: key {key!r} must be prefixed with its "
                f"command section, like 'train.seed'"
            )
        if key in values:
            raise ConfigError(f"{p}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def resolve(
    command: str,
    fields: list[Field],
    file_values: dict[str, str],
    cli_values: dict[str, object],
    known_commands: Optional[set[str]] = None,
) -> dict[str, object]:
    """Merge flag > file > default, validating file keys for this command."""
    by_name = {f.name: f for f in fields}
    for key in file_values:
        section, _, name = key.partition(".")
        if known_commands is not None and section not in known_commands:
            raise ConfigError(f"config section {section!r} is not a command")
        if section == command and name not in by_name:
            raise ConfigError(
                f"unknown config key {key!r}; valid {command} keys: "
                + ", ".join(sorted(by_name))
            )
    resolved: dict[str, object] = {}
    for f in fields:
        value = cli_values.get(f.name)
        if value is None:
            file_key = f"{command}.{f.name}"
            if file_key in file_values:
                value = _coerce(f.parser, file_values[file_key])
            else:
                value = f.default
        else:
            value = _coerce(f.parser, value)
        resolved[f.name] = value
    return resolved


def emit_resolved(
    path: Union[str, Path], command: str, resolved: dict[str, object]
) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"{command}.{name} = {format_value(value)}"
        for name, value in sorted(resolved.items())
    ]
    try:
        p.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise InputOutputError(f"{p}: cannot write resolved config: {exc}") from exc
