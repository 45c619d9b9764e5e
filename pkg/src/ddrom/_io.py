"""Directory bundles: a JSON manifest plus raw little-endian float64 blobs.

Each array is written column-major (Fortran order) to ``<name>.bin``; the
manifest records shape and dtype under ``"arrays"``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"


def save_bundle(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, a in arrays.items():
        a = np.asarray(a)
        dtype = "<i8" if np.issubdtype(a.dtype, np.integer) else "<f8"
        a.astype(dtype).ravel(order="F").tofile(path / f"{name}.bin")
        index[name] = {"shape": list(a.shape), "dtype": dtype, "order": "F", "file": f"{name}.bin"}
    manifest = dict(meta)
    manifest["arrays"] = index
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_bundle(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest_file = path / MANIFEST
    if not manifest_file.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {path}")
    meta = json.loads(manifest_file.read_text())
    arrays = {}
    for name, info in meta.pop("arrays").items():
        flat = np.fromfile(path / info["file"], dtype=info["dtype"])
        arrays[name] = flat.reshape(info["shape"], order="F").astype(np.dtype(info["dtype"]).newbyteorder("="))
    return arrays, meta
