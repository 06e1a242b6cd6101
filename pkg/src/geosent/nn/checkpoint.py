"""Self-describing model archives.

A checkpoint is a zip file holding ``spec.json``, ``meta.json`` and one
``params/<name>.bin`` per tensor. Each tensor file is a little-endian uint32
rank, the uint32 dimensions, then the float64 values in row-major order.
"""

import json
import struct
import zipfile

import numpy as np

from ..errors import FormatError, InputError
from .model import ModelSpec, build_model


def tensor_bytes(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    header = struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + arr.tobytes()


def tensor_from_bytes(buf):
    (ndim,) = struct.unpack_from("<I", buf, 0)
    shape = struct.unpack_from(f"<{ndim}I", buf, 4)
    offset = 4 + 4 * ndim
    data = np.frombuffer(buf, dtype="<f8", offset=offset)
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise FormatError(f"tensor payload has {data.size} values, shape {shape}")
    return data.reshape(shape).copy()


def save_checkpoint(path, model, meta=None):
    meta = dict(meta or {})
    meta["seq_len"] = model.seq_len
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("spec.json", json.dumps(model.spec.to_dict(), sort_keys=True, indent=2))
        zf.writestr("meta.json", json.dumps(meta, sort_keys=True, indent=2))
        for name, arr in model.parameters().items():
            zf.writestr(f"params/{name}.bin", tensor_bytes(arr))


def load_checkpoint(path, dtype=np.float32):
    """Rebuild ``(model, meta)`` from an archive written by :func:`save_checkpoint`."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as e:
        raise InputError(f"cannot open checkpoint {path}: {e}") from e
    with zf:
        spec = ModelSpec.from_dict(json.loads(zf.read("spec.json")))
        meta = json.loads(zf.read("meta.json"))
        tensors = {
            n[len("params/"):-len(".bin")]: tensor_from_bytes(zf.read(n))
            for n in zf.namelist() if n.startswith("params/")
        }
    model = build_model(spec, meta["seq_len"], tensors["embedding.E"], dtype=dtype)
    params = model.parameters()
    if set(params) != set(tensors):
        raise FormatError(f"checkpoint tensors {sorted(tensors)} do not match spec")
    for name, arr in params.items():
        if arr.shape != tensors[name].shape:
            raise FormatError(f"{name}: shape {tensors[name].shape}, expected {arr.shape}")
        arr[...] = tensors[name]
    return model, meta
