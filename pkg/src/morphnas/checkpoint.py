"""JSON checkpoints with base64 array payloads and a sha256 integrity field."""
from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

FORMAT = "morphnas-checkpoint/1"


class CheckpointError(RuntimeError):
    """Missing, unreadable or corrupted checkpoint."""


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"].encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").reshape(blob["shape"]).astype(np.float64)


def _digest(body: dict) -> str:
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_checkpoint(path, payload: dict[str, Any], arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"format": FORMAT, "payload": payload,
            "arrays": {k: encode_array(v) for k, v in sorted(arrays.items())}}
    doc = dict(body, sha256=_digest(body))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        doc = json.loads(path.read_text())
        stored = doc.pop("sha256")
    except (ValueError, KeyError, AttributeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {doc.get('format')!r}")
    if _digest(doc) != stored:
        raise CheckpointError(f"{path}: integrity check failed")
    try:
        arrays = {k: decode_array(v) for k, v in doc["arrays"].items()}
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad array payload ({exc})") from exc
    return doc["payload"], arrays
