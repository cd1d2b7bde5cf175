"""Model checkpoints: one flat binary file.

Byte layout (all integers little-endian):

    magic     8 bytes  b"TCKPT001"
    hdr_len   uint32
    header    hdr_len bytes of UTF-8 JSON with sorted keys:
              {"kind": ..., "model_config": {...}, "experiment": {...}}
    n_tensors uint32
    per tensor:
        name_len uint16, name UTF-8 (prefixes: "param/", "fixed/", "opt/")
        ndim     uint8
        dims     ndim * uint32
        data     float64 little-endian, row-major

Tensors are written in insertion order of the model's parameter dicts,
so identical runs produce identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..models import build_model, config_dict

MAGIC = b"TCKPT001"


def save_checkpoint(path: str, model, experiment: dict, extra_tensors: dict | None = None):
    """Write model (and optional optimizer) tensors with a JSON header."""
    header = {
        "kind": model.kind,
        "model_config": config_dict(model),
        "experiment": experiment,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tensors: dict[str, np.ndarray] = {}
    for name, arr in model.params.items():
        tensors[f"param/{name}"] = arr
    for name, arr in model.fixed.items():
        tensors[f"fixed/{name}"] = arr
    for name, arr in (extra_tensors or {}).items():
        tensors[f"opt/{name}"] = arr
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str):
    """Read a checkpoint back: (model, experiment dict, optimizer tensors)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic {data[:8]!r})")
    pos = 8
    (hdr_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos : pos + hdr_len].decode("utf-8"))
    pos += hdr_len
    (n_tensors,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        tensors[name] = arr.astype(np.float64)

    model_config = dict(header["model_config"])
    if "alpha" in model_config and model_config["alpha"] is not None:
        model_config["alpha"] = list(model_config["alpha"])
    model = build_model(header["kind"], **model_config)
    for name in list(model.params):
        model.params[name] = tensors[f"param/{name}"].copy()
    for name in list(model.fixed):
        model.fixed[name] = tensors[f"fixed/{name}"].copy()
    opt_tensors = {
        name[len("opt/"):]: arr for name, arr in tensors.items() if name.startswith("opt/")
    }
    return model, header["experiment"], opt_tensors
