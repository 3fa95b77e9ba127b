"""Named-tensor checkpoint container.

Layout::

    b"TSCKPT\\x00\\x01"            8-byte magic
    uint64 little-endian           manifest length in bytes
    manifest                       UTF-8 JSON, keys sorted
    tensor data                    little-endian float32, concatenated

The manifest holds ``version``, ``dtype``, the model ``config``, free-form
``meta`` and a ``tensors`` list of ``{name, shape, offset}`` entries with
byte offsets relative to the start of the tensor data.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import CorruptFile, IoFailure, UnsupportedFormat
from .model import ModelConfig, param_shapes

MAGIC = b"TSCKPT\x00\x01"
VERSION = 1


def dumps(params: dict[str, np.ndarray], cfg: ModelConfig, meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "version": VERSION,
        "dtype": "float32-le",
        "config": cfg.to_dict(),
        "meta": meta or {},
        "tensors": entries,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    if data[:8] != MAGIC:
        raise UnsupportedFormat("not a tilescope checkpoint")
    if len(data) < 16:
        raise CorruptFile("truncated checkpoint header")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        manifest = json.loads(data[16 : 16 + n])
    except ValueError as exc:
        raise CorruptFile(f"bad manifest: {exc}") from None
    if manifest.get("version") != VERSION:
        raise UnsupportedFormat(f"checkpoint version {manifest.get('version')!r}")
    cfg = ModelConfig(**manifest["config"])
    body = data[16 + n :]
    params = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        raw = body[start : start + 4 * count]
        if len(raw) != 4 * count:
            raise CorruptFile(f"tensor {entry['name']} truncated")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    expected = param_shapes(cfg)
    if set(expected) != set(params) or any(params[k].shape != v for k, v in expected.items()):
        raise CorruptFile("tensor names or shapes disagree with the stored config")
    return params, cfg, manifest.get("meta", {})


def save_checkpoint(path: str | os.PathLike, params, cfg: ModelConfig, meta: dict | None = None) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(dumps(params, cfg, meta))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_checkpoint(path: str | os.PathLike):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return loads(data)
