"""Param-set persistence: JSON manifest plus a raw little-endian sidecar.

``<stem>.json`` lists every array (name, dtype, shape, byte offset) and free
form metadata; ``<stem>.bin`` holds the concatenated array bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union

import numpy as np

PathLike = Union[str, os.PathLike]
_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "|u1"}


def _kind(a: np.ndarray) -> str:
    if a.dtype == np.bool_ or a.dtype == np.uint8:
        return "u1"
    if np.issubdtype(a.dtype, np.integer):
        return "i8"
    return "f8"


def save_arrays(stem: PathLike, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> Tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        kind = _kind(a)
        raw = np.ascontiguousarray(a, dtype=_DTYPES[kind]).tobytes()
        entries.append({"name": name, "dtype": kind, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": "roto-params/1",
        "arrays": entries,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    with open(bin_path, "wb") as fh:
        fh.write(blob)
    with open(json_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return json_path, bin_path


def load_arrays(stem: PathLike) -> Tuple[Dict[str, np.ndarray], dict]:
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    if not json_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f"missing manifest or sidecar for {stem}")
    try:
        with open(json_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt manifest {json_path}: {exc}") from exc
    blob = bin_path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest.get("sha256"):
        raise ValueError(f"checksum mismatch for {bin_path}")
    arrays = {}
    for e in manifest["arrays"]:
        raw = blob[e["offset"]: e["offset"] + e["nbytes"]]
        a = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
        if e["dtype"] == "f8":
            a = a.astype(np.float64)
        elif e["dtype"] == "i8":
            a = a.astype(np.int64)
        arrays[e["name"]] = a
    return arrays, manifest.get("meta", {})


def prefixed(prefix: str, params: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in params.items()}


def unprefixed(prefix: str, arrays: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    p = prefix + "/"
    return {k[len(p):]: v for k, v in arrays.items() if k.startswith(p)}
