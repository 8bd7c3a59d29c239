"""Flat ``key = value`` run configuration with precise failure diagnostics.

A config file is plain text: one assignment per line, ``#`` comments and blank
lines ignored.  Values are parsed as Python literals where possible (ints,
floats, tuples like ``40,40``) and fall back to the bare string otherwise, so
``family = sinusoid`` needs no quoting.  Parse and validation errors name the
file, line, and field — a run should never die on an unexplained KeyError
three stack frames into an experiment.

Merging order is fixed: built-in defaults, then the config file, then explicit
command-line flags.  The merged result travels as a :class:`RunConfig`, whose
``snapshot()`` line is stamped as a ``#`` comment at the top of every output
file so any artifact can be traced back to the exact settings that made it.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config",
           "merge_options", "format_value"]


class ConfigError(ValueError):
    """Malformed config text, or a field that doesn't fit its command."""


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines into a dict; diagnostics carry line numbers."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        value = value.strip()
        try:
            out[key] = ast.literal_eval(value)
        except (SyntaxError, ValueError):
            out[key] = value  # bare string (paths, family names, ...)
    return out


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from e
    return parse_config(text, source=str(p))


def _fit(key: str, value, default, source: str):
    """Check a config-file value against the type of its default."""
    def bad(expected):
        raise ConfigError(
            f"{source}: field {key!r} expects {expected}, got {value!r}")

    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            bad("a bool")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            bad("an int")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad("a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            bad("a string")
        return value
    if isinstance(default, tuple):
        if isinstance(value, (int, float)):
            value = (value,)
        if not isinstance(value, (list, tuple)):
            bad("a comma-separated sequence")
        return tuple(value)
    raise AssertionError(f"unhandled default type for {key!r}: {type(default)}")


def merge_options(subcommand: str, defaults: dict, file_values: dict,
                  flag_values: dict, source: str = "<config>") -> dict:
    """Defaults <- config file <- explicit flags, rejecting unknown fields.

    ``flag_values`` entries that are None mean "flag not given" and are
    skipped; the caller guarantees flag types (argparse already coerced them).
    """
    merged = dict(defaults)
    for key, value in file_values.items():
        if key not in defaults:
            raise ConfigError(
                f"{source}: unknown field {key!r} for command {subcommand!r} "
                f"(valid: {', '.join(sorted(defaults))})")
        merged[key] = _fit(key, value, defaults[key], source)
    for key, value in flag_values.items():
        if key not in defaults:
            raise AssertionError(f"flag {key!r} has no default for {subcommand!r}")
        if value is not None:
            merged[key] = value
    return merged


def format_value(v) -> str:
    """Render one config value for the snapshot line; floats round-trip exactly."""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    """One resolved invocation: command, seed, output dir, trials, knobs.

    ``out`` is where artifacts land, not part of what they contain, so it is
    deliberately absent from the snapshot — the same run written to two
    directories produces identical files.
    """

    subcommand: str
    seed: int
    out: Path
    trials: int
    params: dict

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        object.__setattr__(self, "out", Path(self.out))

    def snapshot(self) -> str:
        parts = [f"subcommand={self.subcommand}", f"seed={self.seed}",
                 f"trials={self.trials}"]
        parts += [f"{k}={format_value(v)}" for k, v in sorted(self.params.items())
                  if v is not None]
        return " ".join(parts)

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name
