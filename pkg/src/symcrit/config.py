"""Flat structured-text run configuration.

One `section.key = value` assignment per line, exactly one dot per key,
and one scalar type per value (boolean, integer, real, or string), so a
config is parseable with nothing more than a line splitter.  The
serializer is canonical (sorted keys, exact float repr), which makes
parse -> serialize -> parse the identity and gives the content hash a
stable preimage.
"""

import hashlib

from .errors import ConfigurationError

_MISSING = object()


def parse_config(text: str) -> dict:
    """Parse config text to a flat {"section.key": value} mapping."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, val = line.partition("=")
        if not eq:
            raise ConfigurationError(
                f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key = key.strip()
        parts = key.split(".")
        if len(parts) != 2 or not all(parts) or " " in key:
            raise ConfigurationError(
                f"line {lineno}: key must be 'section.key', got {key!r}")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _parse_value(val.strip(), lineno)
    return out


def _parse_value(val: str, lineno: int):
    if not val:
        raise ConfigurationError(f"line {lineno}: empty value")
    if val == "true":
        return True
    if val == "false":
        return False
    try:
        return int(val)
    except ValueError:
        pass
    try:
        num = float(val)
    except ValueError:
        return val
    if num != num or num in (float("inf"), float("-inf")):
        raise ConfigurationError(
            f"line {lineno}: non-finite numbers are not allowed")
    return num


def _format_value(value) -> str:
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        # repr keeps the '.'/exponent marker, so the value reparses as a
        # float and round-trips bit-exactly
        return repr(value)
    return str(value)


def serialize_config(cfg: dict) -> str:
    """Canonical text: sorted keys, blank line between sections."""
    lines = []
    last_section = None
    for key in sorted(cfg):
        section = key.split(".", 1)[0]
        if last_section is not None and section != last_section:
            lines.append("")
        last_section = section
        lines.append(f"{key} = {_format_value(cfg[key])}")
    return "\n".join(lines) + "\n"


def read_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def write_config(cfg: dict, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_config(cfg))


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical serialization."""
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def take(cfg: dict, key: str, kind: str, default=_MISSING):
    """Typed lookup; missing keys fall back to default or fail loudly."""
    if key not in cfg:
        if default is _MISSING:
            raise ConfigurationError(f"missing required config key {key!r}")
        return default
    val = cfg[key]
    if kind == "bool":
        if isinstance(val, bool):
            return val
    elif kind == "int":
        if isinstance(val, int) and not isinstance(val, bool):
            return val
    elif kind == "float":
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            return float(val)
    elif kind == "str":
        if isinstance(val, str):
            return val
    else:
        raise ConfigurationError(f"unknown config kind {kind!r}")
    raise ConfigurationError(
        f"config key {key!r} must be a {kind}, got {val!r}")
