"""Minimal TOML-subset reader for manifests and experiment configs.

Supported: ``[section]`` headers, ``key = value`` lines with string
("..."/'...'), integer, float, boolean values, and ``#`` comments. That is
all the package's config files need; it avoids an external TOML dependency on
Python 3.10.
"""

from __future__ import annotations

from .errors import ConfigError


def parse(text: str) -> dict:
    root: dict = {}
    current = root
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {line_no}: malformed section header {line!r}")
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {line_no}: empty section name")
            current = root.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        current[key] = _parse_value(value.strip(), line_no)
    return root


def _parse_value(text: str, line_no: int):
    if not text:
        raise ConfigError(f"line {line_no}: empty value")
    if text[0] in "\"'":
        quote = text[0]
        # allow a trailing comment after the closing quote
        end = text.find(quote, 1)
        if end < 0:
            raise ConfigError(f"line {line_no}: unterminated string")
        rest = text[end + 1 :].strip()
        if rest and not rest.startswith("#"):
            raise ConfigError(f"line {line_no}: trailing characters after string")
        return text[1:end]
    text = text.split("#", 1)[0].strip()
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"line {line_no}: cannot parse value {text!r}") from None


def parse_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
