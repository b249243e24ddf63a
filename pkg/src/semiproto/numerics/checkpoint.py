"""Parameter checkpoints: a JSON manifest plus a flat little-endian blob.

``<stem>.json`` holds ``{"params": [{name, shape, dtype, byte_offset}, ...]}``
in blob order; ``<stem>.bin`` holds the raw values.
"""
import json
import os
from pathlib import Path

import numpy as np

from semiproto.errors import DatasetFormatError

_DTYPES = {"float64": "<f8", "float32": "<f4"}


def _paths(stem):
    stem = Path(stem)
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_checkpoint(params, stem, dtype="float64", extra=None):
    """Write ``params`` (mapping name -> array or Tensor) atomically."""
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported checkpoint dtype {dtype!r}")
    manifest_path, blob_path = _paths(stem)
    entries, chunks, offset = [], [], 0
    for name, value in params.items():
        arr = np.asarray(getattr(value, "data", value), dtype=_DTYPES[dtype])
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "byte_offset": offset})
        raw = arr.tobytes(order="C")
        chunks.append(raw)
        offset += len(raw)
    manifest = {"params": entries}
    if extra:
        manifest["extra"] = extra
    tmp_blob = blob_path.with_name(blob_path.name + ".tmp")
    tmp_manifest = manifest_path.with_name(manifest_path.name + ".tmp")
    tmp_blob.write_bytes(b"".join(chunks))
    tmp_manifest.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp_blob, blob_path)
    os.replace(tmp_manifest, manifest_path)
    return manifest_path, blob_path


def load_checkpoint(stem):
    """Return ``(params, extra)`` with params as an ordered dict of float64 arrays."""
    manifest_path, blob_path = _paths(stem)
    manifest = json.loads(manifest_path.read_text())
    blob = blob_path.read_bytes()
    params = {}
    for entry in manifest["params"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["byte_offset"]
        end = start + count * dt.itemsize
        if end > len(blob):
            raise DatasetFormatError(f"checkpoint blob truncated for {entry['name']}", offset=len(blob))
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=start)
        params[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return params, manifest.get("extra", {})
