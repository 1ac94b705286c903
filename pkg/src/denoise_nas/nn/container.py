"""Flat named-tensor container: one raw little-endian blob plus a JSON manifest.

Manifest layout::

    {"format": "denoise-nas-params", "version": 1,
     "blob": "<file name of the blob>",
     "tensors": [{"name": ..., "shape": [...], "dtype": "float32",
                  "offset": <byte offset>, "nbytes": <byte count>}, ...]}

Tensors appear in insertion order and are packed without padding.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "denoise-nas-params"


def save_params(state: dict[str, np.ndarray], path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>.bin`` and ``<path>.json``; returns both paths."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    manifest_path = path.with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name, arr in state.items():
            arr = np.ascontiguousarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = le.tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name,
                            "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    manifest = {"format": FORMAT, "version": 1, "blob": blob_path.name, "tensors": entries}
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return blob_path, manifest_path


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    """Read a container written by :func:`save_params` (either file path works)."""
    path = Path(path)
    manifest_path = path.with_suffix(".json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{manifest_path} is not a {FORMAT} manifest")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    out = {}
    for e in manifest["tensors"]:
        dtype = np.dtype(e["dtype"]).newbyteorder("<")
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise ValueError(f"tensor {e['name']} runs past the end of the blob")
        arr = np.frombuffer(blob[e["offset"]:end], dtype=dtype).reshape(e["shape"])
        out[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return out
