"""Flat key=value config files and run provenance.

The config format is one ``key = value`` pair per line; ``#`` starts a
comment. Values parse as bool/int/float when they look like one, else
string. Dotted keys are allowed and kept verbatim.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__


def parse_value(raw: str):
    text = raw.strip().strip('"').strip("'")
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def load_config(path) -> dict:
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, raw = stripped.split("=", 1)
        out[key.strip()] = parse_value(raw)
    return out


def save_config(path, values: dict) -> None:
    lines = []
    for key, value in values.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def config_hash(values: dict) -> str:
    blob = json.dumps(values, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_meta(seed: int, values: dict) -> dict:
    """Provenance block embedded in every artifact: exact-rerun coordinates."""
    return {
        "seed": seed,
        "config_hash": config_hash(values),
        "code_version": __version__,
        "config": dict(values),
    }


def write_run_meta(path, seed: int, values: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(run_meta(seed, values), indent=1) + "\n")
