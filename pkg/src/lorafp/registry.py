"""The RFF database: enroll and revoke devices without retraining; persist to disk.

The registry file is a checksummed binary container (magic "LFPR") holding
unit-norm float32 template vectors per device; a human-readable JSON
manifest with the same header is written alongside for inspection. Every
record carries the fingerprint (sha256) of the weight file that produced
its vectors, and one registry refuses to mix fingerprints.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, IntegrityError, VersionMismatchError
from .validation import check_unit_norm

MAGIC = b"LFPR"
FORMAT_VERSION = 1
DEFAULT_K_NEIGHBORS = 15


@dataclass
class RegistryRecord:
    device_id: str
    vectors: np.ndarray  # (n, dim) float32, unit L2 norm
    enrolled_at: str
    extractor_fingerprint: str

    def __eq__(self, other):
        return (
            isinstance(other, RegistryRecord)
            and self.device_id == other.device_id
            and self.enrolled_at == other.enrolled_at
            and self.extractor_fingerprint == other.extractor_fingerprint
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors, other.vectors)
        )


@dataclass
class Registry:
    k_neighbors: int = DEFAULT_K_NEIGHBORS
    rogue_threshold: float | None = None
    records: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")

    # -- bookkeeping ------------------------------------------------------

    @property
    def device_ids(self) -> list:
        return sorted(self.records.keys())

    @property
    def n_vectors(self) -> int:
        return sum(r.vectors.shape[0] for r in self.records.values())

    @property
    def extractor_fingerprint(self) -> str | None:
        for r in self.records.values():
            return r.extractor_fingerprint
        return None

    @property
    def dim(self) -> int | None:
        for r in self.records.values():
            return r.vectors.shape[1]
        return None

    def template_matrix(self):
        """All templates stacked in canonical (device id, enrollment) order.

        Returns (vectors, owner_ids); canonical ordering makes every query
        independent of enrollment order.
        """
        if not self.records:
            raise ContractError("registry is empty")
        mats, owners = [], []
        for dev in self.device_ids:
            vec = self.records[dev].vectors
            mats.append(vec)
            owners.extend([dev] * vec.shape[0])
        return np.vstack(mats).astype(np.float64), np.array(owners)

    # -- mutation ---------------------------------------------------------

    def enroll(self, device_id: str, vectors, extractor_fingerprint: str,
               enrolled_at: str | None = None) -> "Registry":
        """Add one device's template vectors; other records are untouched."""
        if device_id in self.records:
            raise ContractError(f"device {device_id!r} already enrolled")
        vec = check_unit_norm(vectors, name=f"templates for {device_id}").astype(np.float32)
        existing = self.extractor_fingerprint
        if existing is not None and existing != extractor_fingerprint:
            raise VersionMismatchError(
                f"registry was built with extractor {existing[:12]}..., "
                f"got {extractor_fingerprint[:12]}..."
            )
        if self.dim is not None and vec.shape[1] != self.dim:
            raise ContractError(f"vector dim {vec.shape[1]} != registry dim {self.dim}")
        self.records[device_id] = RegistryRecord(
            device_id=device_id,
            vectors=vec,
            enrolled_at=enrolled_at or datetime.now(timezone.utc).isoformat(),
            extractor_fingerprint=extractor_fingerprint,
        )
        return self

    def revoke(self, device_id: str) -> "Registry":
        if device_id not in self.records:
            raise ContractError(f"device {device_id!r} is not enrolled")
        del self.records[device_id]
        return self

    def __eq__(self, other):
        return (
            isinstance(other, Registry)
            and self.k_neighbors == other.k_neighbors
            and self.rogue_threshold == other.rogue_threshold
            and set(self.records) == set(other.records)
            and all(self.records[k] == other.records[k] for k in self.records)
        )

    # -- persistence ------------------------------------------------------

    def save(self, path) -> str:
        """Write binary registry + JSON manifest; returns the file sha256."""
        path = Path(path)
        header = {
            "format": "lorafp-registry",
            "k_neighbors": self.k_neighbors,
            "rogue_threshold": self.rogue_threshold,
            "extractor_fingerprint": self.extractor_fingerprint,
            "devices": [
                {
                    "device_id": dev,
                    "n_vectors": int(self.records[dev].vectors.shape[0]),
                    "dim": int(self.records[dev].vectors.shape[1]),
                    "enrolled_at": self.records[dev].enrolled_at,
                }
                for dev in self.device_ids
            ],
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        blob = bytearray()
        blob += MAGIC
        blob += struct.pack("<I", FORMAT_VERSION)
        blob += struct.pack("<Q", len(header_bytes))
        blob += header_bytes
        for dev in self.device_ids:
            blob += np.ascontiguousarray(self.records[dev].vectors, dtype="<f4").tobytes()
        blob += hashlib.sha256(bytes(blob)).digest()
        path.write_bytes(bytes(blob))
        path.with_suffix(path.suffix + ".manifest.json").write_text(
            json.dumps(header, indent=2, sort_keys=True)
        )
        return hashlib.sha256(bytes(blob)).hexdigest()

    @classmethod
    def load(cls, path, expected_extractor: str | None = None,
             force: bool = False) -> "Registry":
        raw = Path(path).read_bytes()
        if len(raw) < 4 + 4 + 8 + 32 or raw[:4] != MAGIC:
            raise IntegrityError(f"{path}: not a registry file")
        body, digest = raw[:-32], raw[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise IntegrityError(f"{path}: checksum mismatch (corrupt or truncated)")
        version = struct.unpack_from("<I", raw, 4)[0]
        if version != FORMAT_VERSION:
            raise IntegrityError(f"{path}: unsupported registry version {version}")
        header_len = struct.unpack_from("<Q", raw, 8)[0]
        off = 16
        header = json.loads(raw[off:off + header_len].decode("utf-8"))
        off += header_len

        fingerprint = header.get("extractor_fingerprint")
        if (expected_extractor is not None and fingerprint is not None
                and fingerprint != expected_extractor and not force):
            raise VersionMismatchError(
                f"registry extractor {fingerprint[:12]}... does not match "
                f"expected {expected_extractor[:12]}... (use force to override)"
            )
        reg = cls(k_neighbors=header["k_neighbors"],
                  rogue_threshold=header["rogue_threshold"])
        for dev in header["devices"]:
            count = dev["n_vectors"] * dev["dim"]
            nbytes = 4 * count
            if off + nbytes > len(body):
                raise IntegrityError(f"{path}: truncated vector data")
            vec = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(
                dev["n_vectors"], dev["dim"]
            )
            off += nbytes
            reg.records[dev["device_id"]] = RegistryRecord(
                device_id=dev["device_id"],
                vectors=vec.copy(),
                enrolled_at=dev["enrolled_at"],
                extractor_fingerprint=fingerprint,
            )
        if off != len(body):
            raise IntegrityError(f"{path}: trailing bytes after vector data")
        return reg
