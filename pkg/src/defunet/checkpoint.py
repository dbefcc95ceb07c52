"""Binary checkpoint container.

Layout, all integers little-endian:

    magic "DEFU" | u32 version | u32 epoch
    u32 config-length | config text (the [model] INI section, utf-8)
    u32 tensor-count | tensor records for every parameter and buffer
    u8 optimizer-present | [u32 count | tensor records]
    u32 crc32 of everything above

A tensor record is: u16 name-length, name utf-8, u8 dtype tag (0=f32,
1=f64, 2=i64), u8 rank, rank x u32 dims, then the raw little-endian
payload.  Record order follows the model's deterministic registry, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .config import model_config_from_ini, model_config_to_ini
from .model import build

__all__ = [
    "CheckpointFormatError",
    "CheckpointIntegrityError",
    "save_checkpoint",
    "load_checkpoint",
    "MAGIC",
    "VERSION",
]

MAGIC = b"DEFU"
VERSION = 1

_TAG_FOR_DTYPE = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_DTYPE_FOR_TAG = {v: k for k, v in _TAG_FOR_DTYPE.items()}


class CheckpointFormatError(ValueError):
    """Not a checkpoint, wrong version, or contents contradict the config."""


class CheckpointIntegrityError(ValueError):
    """File is truncated or its checksum does not match."""


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _TAG_FOR_DTYPE:
        arr = arr.astype(np.float64)
    encoded = name.encode("utf-8")
    head = struct.pack("<H", len(encoded)) + encoded
    head += struct.pack("<BB", _TAG_FOR_DTYPE[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return head + little.tobytes()


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointIntegrityError(
                f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, "
                f"file body ends at {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _unpack_tensor(cur: _Cursor):
    name = cur.take(cur.u16()).decode("utf-8")
    tag = cur.u8()
    if tag not in _DTYPE_FOR_TAG:
        raise CheckpointFormatError(f"tensor {name!r} has unknown dtype tag {tag}")
    rank = cur.u8()
    dims = tuple(cur.u32() for _ in range(rank))
    dtype = _DTYPE_FOR_TAG[tag]
    count = 1
    for d in dims:
        count *= d
    raw = cur.take(count * dtype.itemsize)
    arr = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    return name, arr


def save_checkpoint(path, model, optimizer=None, epoch: int = 0) -> None:
    body = bytearray()
    body += MAGIC
    body += struct.pack("<II", VERSION, int(epoch))
    config_text = model_config_to_ini(model.config).encode("utf-8")
    body += struct.pack("<I", len(config_text)) + config_text
    state = model.state_dict()
    body += struct.pack("<I", len(state))
    for name, arr in state.items():
        body += _pack_tensor(name, arr)
    if optimizer is None:
        body += struct.pack("<B", 0)
    else:
        opt_state = optimizer.state_dict()
        body += struct.pack("<BI", 1, len(opt_state))
        for name, arr in opt_state.items():
            body += _pack_tensor(name, arr)
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path):
    """Returns ``(model, optimizer_state_or_None, epoch)``.

    The model is rebuilt from the embedded config and then overwritten
    with the stored tensors; any mismatch aborts before a model escapes.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 12:
        raise CheckpointIntegrityError(f"file too short to be a checkpoint ({len(blob)} bytes)")
    body, stored_crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if body[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"bad magic {body[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if zlib.crc32(body) != stored_crc:
        raise CheckpointIntegrityError("checksum mismatch: file is corrupt or truncated")
    cur = _Cursor(body)
    cur.take(len(MAGIC))
    version = cur.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    epoch = cur.u32()
    config_text = cur.take(cur.u32()).decode("utf-8")
    config = model_config_from_ini(config_text)
    state = dict(_unpack_tensor(cur) for _ in range(cur.u32()))
    opt_state = None
    if cur.u8():
        opt_state = dict(_unpack_tensor(cur) for _ in range(cur.u32()))
    model = build(config)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as e:
        raise CheckpointFormatError(f"checkpoint does not fit its own config: {e}") from e
    return model, opt_state, epoch
