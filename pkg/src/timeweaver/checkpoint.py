"""Binary checkpoint container.

Layout (all integers little-endian)::

    offset   size   field
    0        4      magic  b"TWCK"
    4        2      format version, uint16 (currently 1)
    6        4      manifest length M, uint32
    10       M      manifest, UTF-8 JSON with sorted keys
    10+M     4      tensor count N, uint32
    then N records:
             2      name length n, uint16
             n      tensor name, UTF-8 (``<section>.<parameter path>``)
             1      dtype code: 0 float32, 1 float64, 2 int64
             1      ndim d
             4*d    shape, uint32 each
             ...    raw C-order little-endian data

The manifest always carries ``kind`` (``diffusion`` or ``extractor``) and
``sections`` (tensor count per top-level section, e.g. ``encoder`` and
``denoiser``).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"TWCK"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


def save(path, manifest: dict, tensors: dict[str, torch.Tensor]) -> None:
    manifest = dict(manifest)
    sections: dict[str, int] = {}
    for name in tensors:
        sections[name.split(".", 1)[0]] = sections.get(name.split(".", 1)[0], 0) + 1
    manifest["sections"] = sections
    manifest["format_version"] = FORMAT_VERSION
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        arr = t.detach().cpu().contiguous().numpy()
        if arr.dtype not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load(path) -> tuple[dict, dict[str, torch.Tensor]]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: {e}") from None
    try:
        return _parse(path, data)
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({type(e).__name__}: {e})") from None


def _parse(path, data: bytes) -> tuple[dict, dict[str, torch.Tensor]]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, mlen = struct.unpack_from("<HI", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 10
    manifest = json.loads(data[pos : pos + mlen].decode("utf-8"))
    pos += mlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: tensor {name} runs past the end of the file")
        arr = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
        pos += nbytes
        tensors[name] = torch.from_numpy(arr.copy())
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return manifest, tensors


def expect_kind(manifest: dict, kind: str, path="checkpoint") -> None:
    if manifest.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {manifest.get('kind')!r}")
