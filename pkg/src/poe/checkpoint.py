"""Binary panel checkpoints.

Layout, all integers little-endian::

    b"POE1"  u32 version
    u64 n  + n bytes UTF-8 JSON   config (PanelConfig fields plus "domains")
    u64 n  + n bytes UTF-8 JSON   vocabulary token list
    u32 tensor count
    per tensor: u16 name length, name, u8 ndim, ndim x u64 dims, raw <f8 payload
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .panel import Panel, PanelConfig, Vocab, param_shapes

MAGIC = b"POE1"
VERSION = 1


class CheckpointError(Exception):
    pass


class VersionError(CheckpointError):
    pass


class ShapeError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


def _block(obj) -> bytes:
    raw = json.dumps(obj, sort_keys=True).encode()
    return struct.pack("<Q", len(raw)) + raw


def to_bytes(panel: Panel) -> bytes:
    shapes = param_shapes(panel.config)
    if set(shapes) != set(panel.params):
        raise ShapeError("parameter names do not match the configuration")
    parts = [MAGIC, struct.pack("<I", VERSION),
             _block({**panel.config.to_dict(), "domains": list(panel.domains)}),
             _block(panel.vocab.tokens), struct.pack("<I", len(shapes))]
    for name in sorted(shapes):
        a = np.ascontiguousarray(panel.params[name], dtype="<f8")
        if a.shape != shapes[name]:
            raise ShapeError(f"{name}: shape {a.shape}, config expects {shapes[name]}")
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"file ends inside {what} (offset {self.pos}, need {n} bytes)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def json(self, what: str):
        (n,) = self.unpack("<Q", what)
        try:
            return json.loads(self.take(n, what).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt {what}: {exc}") from None


def from_bytes(buf: bytes) -> Panel:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a panel checkpoint (bad magic)")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionError(f"checkpoint version {version}, this build reads {VERSION}")
    meta = r.json("config block")
    tokens = r.json("vocab block")
    try:
        domains = meta.pop("domains")
        cfg = PanelConfig(**meta)
        vocab = Vocab(tokens)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad config or vocab block: {exc}") from None
    if cfg.vocab_size != len(vocab):
        raise ShapeError(f"config vocab_size {cfg.vocab_size} but vocab has {len(vocab)} tokens")
    expected = param_shapes(cfg)
    (count,) = r.unpack("<I", "tensor count")
    params = {}
    for _ in range(count):
        (n,) = r.unpack("<H", "tensor name")
        name = r.take(n, "tensor name").decode()
        (ndim,) = r.unpack("<B", f"{name} header")
        dims = r.unpack(f"<{ndim}Q", f"{name} header")
        if name not in expected:
            raise ShapeError(f"unexpected tensor {name}")
        if tuple(dims) != expected[name]:
            raise ShapeError(f"{name}: stored shape {tuple(dims)}, config expects {expected[name]}")
        size = int(np.prod(dims, dtype=np.int64))
        payload = r.take(8 * size, f"{name} payload")
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    missing = set(expected) - set(params)
    if missing:
        raise ShapeError(f"missing tensors: {sorted(missing)[:5]}")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after tensor table")
    return Panel(cfg, vocab, params, list(domains))


def save(panel: Panel, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(panel))
    tmp.replace(path)


def load(path: str | os.PathLike) -> Panel:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc.strerror}") from None
    return from_bytes(buf)
