"""JSON serialization helpers for model state.

Arrays travel as base64-encoded little-endian float64 buffers inside versioned
JSON documents. Loaders refuse unknown versions instead of guessing.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any

import numpy as np

FORMAT_VERSION = 1


def encode_array(a: np.ndarray) -> dict[str, Any]:
    arr = np.ascontiguousarray(a, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "dtype": "f8",
        "byte_order": "little",
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(obj: dict[str, Any]) -> np.ndarray:
    if obj.get("dtype") != "f8" or obj.get("byte_order") != "little":
        raise ValueError(f"unsupported array encoding: {obj.get('dtype')}/{obj.get('byte_order')}")
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(obj["shape"])


def dump_json(doc: dict[str, Any], path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_json(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text())


def check_version(doc: dict[str, Any], kind: str) -> None:
    if doc.get("kind") != kind:
        raise ValueError(f"expected serialized {kind!r}, found {doc.get('kind')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported {kind} version {doc.get('version')!r}")
