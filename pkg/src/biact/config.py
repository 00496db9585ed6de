"""``key = value`` configuration files.

Blank lines and ``#`` comments are skipped. Keys must belong to the schema
the caller passes; values are converted with the schema's type.
"""
from __future__ import annotations

from pathlib import Path

from .errors import ConfigurationError, UsageError


def _to_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _to_int_tuple(text: str) -> tuple:
    return tuple(int(x) for x in text.split(","))


CONVERTERS = {bool: _to_bool, int: int, float: float, str: str, tuple: _to_int_tuple}


def parse_config(text: str, schema: dict, source: str = "<config>") -> dict:
    """Parse ``text`` against ``schema`` (key -> python type)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in schema:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigurationError(f"{source}:{lineno}: key {key!r} given twice")
        try:
            out[key] = CONVERTERS[schema[key]](value)
        except ValueError:
            raise ConfigurationError(
                f"{source}:{lineno}: {key} expects {schema[key].__name__}, got {value!r}") from None
    return out


def load_config(path, schema: dict) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ConfigurationError(f"{path}: config file is not UTF-8") from None
    return parse_config(text, schema, str(path))
