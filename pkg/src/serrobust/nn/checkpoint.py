"""Versioned binary container for named float64 tensors plus JSON metadata.

Layout: ``b"SERCKPT\\0"``, uint32 version, uint32 header length, UTF-8 JSON
header, then each tensor's little-endian bytes in header order.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"SERCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    index = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        a = np.ascontiguousarray(tensors[name], dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"tensors": index, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)


def load_tensors(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise DataError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise DataError(f"{path}: checkpoint version {version}, expected {VERSION}")
    header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    base = _PREFIX.size + hlen
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = base + entry["offset"]
        if start + 8 * n > len(data):
            raise DataError(f"{path}: tensor {entry['name']} runs past end of file")
        tensors[entry["name"]] = np.frombuffer(data, dtype="<f8", count=n,
                                               offset=start).reshape(entry["shape"]).copy()
    return tensors, header["meta"]


def save_model(path, model, extra: dict | None = None) -> None:
    meta = {"model_config": model.cfg.to_dict()}
    if extra:
        meta.update(extra)
    save_tensors(path, model.params, meta)


def load_model(path):
    from .model import Model, ModelConfig
    tensors, meta = load_tensors(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    params = {k: v for k, v in tensors.items() if "/" not in k}
    return Model(cfg, params), meta
