"""Flat ``key = value`` config files (grammar in docs/config-grammar.md).

Each non-blank line that is not a ``#`` comment holds one assignment. A
value is parsed as JSON when possible (numbers, true/false, null, quoted
strings, lists); anything else is taken as a bare string. Duplicate keys
are an error. Command-line overrides are applied on top of the file.
"""

import json
import os
import re
from dataclasses import fields

from .errors import ConfigError

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
SEED_ENV = "POEMLAB_SEED"


def parse_text(text, source="<string>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}", field=key or None)
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}", field=key)
        out[key] = parse_value(value)
    return out


def parse_value(text):
    if text == "":
        return ""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        # trailing comments are allowed after a bare value
        if " #" in text:
            return parse_value(text.split(" #", 1)[0].strip())
        return text


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    return parse_text(text, source=str(path))


def format_value(value):
    if isinstance(value, tuple):
        value = list(value)
    return json.dumps(value)


def dump(values):
    return "".join(f"{k} = {format_value(v)}\n" for k, v in values.items())


def _coerce(name, value, default):
    """Cast `value` to the type of the dataclass default, naming the field on failure."""
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            raise TypeError
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                value = [value]
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot use {value!r} as {type(default).__name__}", field=name) from None
    return value


def build(cls, values, ignore=()):
    """Instantiate dataclass `cls` from a flat dict; unknown keys raise ConfigError."""
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, value in values.items():
        if key in ignore:
            continue
        if key not in known:
            raise ConfigError(f"{key}: unknown setting", field=key)
        kwargs[key] = _coerce(key, value, getattr(defaults, key))
    return cls(**kwargs)


def env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"seed: {SEED_ENV}={raw!r} is not an integer", field="seed") from None


def merge(file_values, overrides):
    """File values, then POEMLAB_SEED if the file sets no seed, then non-None overrides."""
    values = dict(file_values)
    if "seed" not in values:
        seed = env_seed()
        if seed is not None:
            values["seed"] = seed
    values.update({k: v for k, v in overrides.items() if v is not None})
    return values
