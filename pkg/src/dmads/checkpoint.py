"""Binary checkpoint format.

All integers little-endian::

    b"DMAD"                      magic
    u32                          format version (1)
    32 bytes                     SHA-256 digest of the architecture config
    u32                          entry count
    per entry:
        u32 + bytes              UTF-8 name
        u8                       dtype tag (0 float32, 1 float64, 2 uint8)
        u32 + u64 * rank         rank and dims
        bytes                    raw little-endian elements
    u64                          BLAKE2b-64 checksum of every preceding byte

The model config travels as a uint8 entry named ``__config__`` holding JSON.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import ModelConfig
from .nn import ParameterStore
from .tensor import Tensor

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "CheckpointError",
    "NotACheckpointError",
    "CorruptCheckpointError",
    "UnsupportedVersionError",
    "IncompatibleConfigError",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
]

MAGIC = b"DMAD"
FORMAT_VERSION = 1
CONFIG_ENTRY = "__config__"

_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


class CheckpointError(Exception):
    pass


class NotACheckpointError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class IncompatibleConfigError(CheckpointError):
    pass


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def checkpoint_bytes(params, cfg: ModelConfig, version: int = FORMAT_VERSION) -> bytes:
    entries = [(CONFIG_ENTRY, np.frombuffer(json.dumps(cfg.to_dict(), sort_keys=True).encode(), dtype=np.uint8))]
    for name, t in params.items():
        entries.append((name, np.asarray(getattr(t, "data", t))))
    out = bytearray(MAGIC)
    out += struct.pack("<I", version)
    out += cfg.digest()
    out += struct.pack("<I", len(entries))
    for name, arr in entries:
        dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
        if dt not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<BI", _DTYPE_TAGS[dt], arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=dt).tobytes()
    out += _checksum(bytes(out))
    return bytes(out)


def save_checkpoint(params, cfg: ModelConfig, path) -> None:
    """Write atomically (temp file + rename)."""
    data = checkpoint_bytes(params, cfg)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError("corrupt checkpoint: unexpected end of data")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(buf: bytes) -> tuple[ParameterStore, ModelConfig, bytes]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise NotACheckpointError("not a checkpoint (bad magic)")
    if len(buf) < 4 + 4 + 32 + 4 + 8:
        raise CorruptCheckpointError("corrupt checkpoint: file too short")
    body, stored = buf[:-8], buf[-8:]
    if _checksum(body) != stored:
        raise CorruptCheckpointError("corrupt checkpoint: checksum mismatch")
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<I")
    if version > FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version} (reader supports <= {FORMAT_VERSION})")
    digest = r.take(32)
    (count,) = r.unpack("<I")
    store = ParameterStore()
    cfg = None
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BI")
        if tag not in _TAG_DTYPES:
            raise CorruptCheckpointError(f"corrupt checkpoint: unknown dtype tag {tag}")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        dt = _TAG_DTYPES[tag]
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        arr = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(dims)
        if name == CONFIG_ENTRY:
            cfg = ModelConfig.from_dict(json.loads(arr.tobytes().decode("utf-8")))
        else:
            store[name] = Tensor(arr.astype(arr.dtype.newbyteorder("=")), requires_grad=True)
    if r.pos != len(body):
        raise CorruptCheckpointError("corrupt checkpoint: trailing bytes after entries")
    if cfg is None:
        raise CorruptCheckpointError("corrupt checkpoint: missing config entry")
    if cfg.digest() != digest:
        raise CorruptCheckpointError("corrupt checkpoint: stored config does not match its digest")
    return store, cfg, digest


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[ParameterStore, ModelConfig]:
    """Read and validate a checkpoint.

    When ``expected`` is given, its architecture digest must match the file's
    or :class:`IncompatibleConfigError` is raised.
    """
    store, cfg, digest = parse_checkpoint(Path(path).read_bytes())
    if expected is not None and expected.digest() != digest:
        raise IncompatibleConfigError("checkpoint was written for an incompatible model config (digest mismatch)")
    return store, cfg
