"""Plain-text ``key = value`` files.  Values are JSON when they parse as JSON, else bare strings."""
from __future__ import annotations

import json


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_kv(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key] = parse_value(value)
    return out


def format_kv(d: dict) -> str:
    """One ``key = json`` line per key, keys sorted."""
    return "".join(f"{k} = {json.dumps(d[k], sort_keys=True)}\n" for k in sorted(d))


def write_kv(path, d: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_kv(d))
