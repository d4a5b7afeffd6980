"""Flat, sectioned key-value text files.

Used for both arena files and run configs::

    # comment
    arena.width_mm = 3600
    obstacle = [900, 2300, 1750, 2700]

    [train]
    gamma = 0.99
    method = "dacoop"

Values are JSON literals (numbers, quoted strings, lists, true/false).
A bare word that is not valid JSON is kept as a string. Repeated keys
are preserved in order; callers decide whether repetition is legal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any


class KVSyntaxError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Entry:
    section: str
    key: str
    value: Any
    lineno: int

    @property
    def qualified(self) -> str:
        return f"{self.section}.{self.key}" if self.section else self.key


def _parse_value(raw: str, lineno: int) -> Any:
    raw = raw.strip()
    if not raw:
        raise KVSyntaxError(lineno, "missing value")
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if raw[0] in "[{\"":
            raise KVSyntaxError(lineno, f"malformed value {raw!r}") from None
        return raw


def parse(text: str) -> list[Entry]:
    entries = []
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise KVSyntaxError(lineno, f"bad section header {line!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise KVSyntaxError(lineno, f"expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if not key:
            raise KVSyntaxError(lineno, "empty key")
        entries.append(Entry(section, key, _parse_value(raw, lineno), lineno))
    return entries


def format_value(value: Any) -> str:
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, float):
        return repr(value)
    return json.dumps(value)


def dump(sections: dict[str, dict[str, Any]]) -> str:
    """Inverse of :func:`parse` for the non-repeated case.

    The ``""`` section is written first, without a header.
    """
    lines = []
    for name in sorted(sections, key=lambda s: (s != "", s)):
        if name:
            if lines:
                lines.append("")
            lines.append(f"[{name}]")
        for key, value in sections[name].items():
            lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"
