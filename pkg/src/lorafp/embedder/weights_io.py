"""Versioned binary weight container.

Layout: magic "LFPW", u32 format version, u64 header length, UTF-8 JSON
header (config echo, seed, tensor manifest), raw little-endian float32
tensors in manifest order, then a sha256 digest of everything before it.
The sha256 of the whole file doubles as the extractor fingerprint that
registries and reports are locked against.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import IntegrityError
from .model import EmbedderConfig, RffExtractor

MAGIC = b"LFPW"
FORMAT_VERSION = 1


def save_weights(path, model: RffExtractor, extra_meta=None) -> str:
    """Write the model weights; returns the file's sha256 fingerprint."""
    params = model.params()
    manifest = [
        {"name": name, "shape": list(arr.shape), "dtype": "float32"}
        for name, arr in params.items()
    ]
    # No timestamp: the same training run must reproduce the same bytes
    # (and therefore the same extractor fingerprint).
    header = {
        "format": "lorafp-weights",
        "config": model.config.to_dict(),
        "seed": model.seed,
        "tensors": manifest,
    }
    if extra_meta:
        header["meta"] = {k: str(v) for k, v in extra_meta.items()}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    for arr in params.values():
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()

    Path(path).write_bytes(bytes(blob))
    return hashlib.sha256(bytes(blob)).hexdigest()


def load_weights(path):
    """Read a weight file; returns (tensors OrderedDict, EmbedderConfig, header)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 + 8 + 32 or raw[:4] != MAGIC:
        raise IntegrityError(f"{path}: not a weight file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (corrupt or truncated)")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != FORMAT_VERSION:
        raise IntegrityError(f"{path}: unsupported weight format version {version}")
    header_len = struct.unpack_from("<Q", raw, 8)[0]
    off = 16
    header = json.loads(raw[off:off + header_len].decode("utf-8"))
    off += header_len

    tensors = OrderedDict()
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = 4 * count
        if off + nbytes > len(body):
            raise IntegrityError(f"{path}: truncated tensor data")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(spec["shape"])
        tensors[spec["name"]] = arr.copy()
        off += nbytes
    if off != len(body):
        raise IntegrityError(f"{path}: trailing bytes after tensor data")
    return tensors, EmbedderConfig.from_dict(header["config"]), header


def load_model(path) -> RffExtractor:
    """Rebuild an extractor from a weight file."""
    tensors, config, header = load_weights(path)
    model = RffExtractor(config, seed=int(header.get("seed", 0)), dtype=np.float32)
    params = model.params()
    if list(params.keys()) != list(tensors.keys()):
        raise IntegrityError(f"{path}: tensor names do not match the architecture")
    for name, arr in tensors.items():
        if params[name].shape != arr.shape:
            raise IntegrityError(f"{path}: shape mismatch for {name}")
        params[name][...] = arr
    return model


def weight_file_hash(path) -> str:
    """sha256 of the weight file; the extractor fingerprint."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
