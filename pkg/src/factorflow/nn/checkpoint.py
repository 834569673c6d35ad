"""Parameter checkpoint files.

Layout (version 1)::

    FFCKPT 1\\n
    <one line of UTF-8 JSON manifest>\\n
    <row-major little-endian float64 payload>

The manifest holds ``{"version": 1, "meta": {...}, "nets": {name: {...}}}``
where each net records ``activation``, ``layer_norm`` and an ordered list of
array shapes (weights, biases, norm gains, norm offsets). The payload is the
concatenation of those arrays in manifest order, nets sorted by name.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .mlp import MlpParams

MAGIC = b"FFCKPT 1\n"
VERSION = 1


def save_checkpoint(path, nets: dict[str, MlpParams], meta: dict | None = None) -> None:
    manifest = {"version": VERSION, "meta": meta or {}, "nets": {}}
    chunks = []
    for name in sorted(nets):
        params = nets[name]
        arrays = [np.asarray(a, dtype=np.float64) for a in params.arrays()]
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise ValueError(f"refusing to checkpoint non-finite parameters in {name!r}")
        manifest["nets"][name] = {
            "activation": params.activation,
            "layer_norm": params.layer_norm,
            "n_layers": len(params.weights),
            "shapes": [list(a.shape) for a in arrays],
        }
        chunks.extend(a.astype("<f8").tobytes(order="C") for a in arrays)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, MlpParams], dict]:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic line)")
        manifest = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    if manifest.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    nets = {}
    offset = 0
    for name in sorted(manifest["nets"]):
        entry = manifest["nets"][name]
        arrays = []
        for shape in entry["shapes"]:
            count = int(np.prod(shape)) if shape else 1
            nbytes = 8 * count
            if offset + nbytes > len(payload):
                raise ValueError(f"{path}: payload truncated while reading {name!r}")
            arrays.append(np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64))
            offset += nbytes
        n = entry["n_layers"]
        h = (len(arrays) - 2 * n) // 2
        nets[name] = MlpParams(
            weights=tuple(arrays[:n]),
            biases=tuple(arrays[n : 2 * n]),
            ln_gains=tuple(arrays[2 * n : 2 * n + h]),
            ln_offsets=tuple(arrays[2 * n + h :]),
            activation=entry["activation"],
            layer_norm=entry["layer_norm"],
        )
    if offset != len(payload):
        raise ValueError(f"{path}: {len(payload) - offset} trailing bytes after payload")
    return nets, manifest["meta"]
