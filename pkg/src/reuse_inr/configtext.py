"""Versioned key-value text documents.

This is the on-disk config format and the architecture block embedded in
bitstream headers: one ``key: value`` pair per line, ``#`` comments, a
mandatory ``config_version`` key. Unknown or duplicate keys are errors, so a
config never silently falls back to defaults.
"""

from __future__ import annotations

from .errors import ConfigurationError

CONFIG_VERSION = 1


def dumps(pairs: dict[str, str]) -> str:
    lines = [f"config_version: {CONFIG_VERSION}"]
    for key, value in pairs.items():
        lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key: value', got {raw!r}")
        key, value = line.split(":", 1)
        key = key.strip()
        if key in pairs:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()
    version = pairs.pop("config_version", None)
    if version is None:
        raise ConfigurationError("missing config_version")
    if version != str(CONFIG_VERSION):
        raise ConfigurationError(f"unsupported config_version {version!r}")
    return pairs


def take(pairs: dict[str, str], key: str) -> str:
    if key not in pairs:
        raise ConfigurationError(f"missing config key {key!r}")
    return pairs.pop(key)


def finish(pairs: dict[str, str]) -> None:
    """Reject leftover keys once a consumer has taken everything it knows."""
    if pairs:
        names = ", ".join(sorted(pairs))
        raise ConfigurationError(f"unknown config keys: {names}")


def parse_ints(value: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(part.strip()) for part in value.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"key {key!r}: expected comma-separated integers") from exc


def parse_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigurationError(f"key {key!r}: expected an integer") from exc
