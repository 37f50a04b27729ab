import struct

import numpy as np
import pytest

from poe import checkpoint as ckpt
from poe.records import ContextResponsePair


def probe_pairs(n=12):
    words = ["the", "cat", "sat", "on", "a", "mat", "hello", "there"]
    rng = np.random.default_rng(0)
    return [ContextResponsePair([" ".join(rng.choice(words, 4))], " ".join(rng.choice(words, 3)), "a")
            for _ in range(n)]


def test_round_trip_is_bitwise(tiny_panel, tmp_path):
    path = tmp_path / "p.ckpt"
    ckpt.save(tiny_panel, path)
    back = ckpt.load(path)
    assert back.config == tiny_panel.config and back.vocab == tiny_panel.vocab
    assert back.domains == tiny_panel.domains
    assert set(back.params) == set(tiny_panel.params)
    assert all(back.params[k].tobytes() == tiny_panel.params[k].tobytes() for k in back.params)
    pairs = probe_pairs()
    for n in range(3):
        assert np.array_equal(back.predict(pairs, n), tiny_panel.predict(pairs, n))


def test_bytes_are_deterministic(tiny_panel):
    assert ckpt.to_bytes(tiny_panel) == ckpt.to_bytes(tiny_panel.copy())


def test_truncated_file(tiny_panel):
    buf = ckpt.to_bytes(tiny_panel)
    for cut in (3, 10, 40, len(buf) // 2, len(buf) - 1):
        with pytest.raises(ckpt.CheckpointError):
            ckpt.from_bytes(buf[:cut])
    with pytest.raises(ckpt.TruncatedError):
        ckpt.from_bytes(buf[: len(buf) - 1])


def test_version_mismatch(tiny_panel):
    buf = bytearray(ckpt.to_bytes(tiny_panel))
    buf[4:8] = struct.pack("<I", 99)
    with pytest.raises(ckpt.VersionError):
        ckpt.from_bytes(bytes(buf))


def test_bad_magic(tiny_panel):
    with pytest.raises(ckpt.CheckpointError):
        ckpt.from_bytes(b"XXXX" + ckpt.to_bytes(tiny_panel)[4:])


def _first_tensor_dims_offset(buf: bytes) -> int:
    pos = 8
    for _ in range(2):
        (n,) = struct.unpack_from("<Q", buf, pos)
        pos += 8 + n
    pos += 4
    (name_len,) = struct.unpack_from("<H", buf, pos)
    return pos + 2 + name_len + 1


def test_tampered_shape_header(tiny_panel):
    buf = bytearray(ckpt.to_bytes(tiny_panel))
    off = _first_tensor_dims_offset(bytes(buf))
    (d0,) = struct.unpack_from("<Q", buf, off)
    struct.pack_into("<Q", buf, off, d0 + 1)
    with pytest.raises(ckpt.ShapeError):
        ckpt.from_bytes(bytes(buf))


def test_trailing_bytes_rejected(tiny_panel):
    with pytest.raises(ckpt.CheckpointError):
        ckpt.from_bytes(ckpt.to_bytes(tiny_panel) + b"\0")


def test_save_rejects_params_inconsistent_with_config(tiny_panel):
    tiny_panel.params["exp0.head.b"] = np.zeros(2)
    with pytest.raises(ckpt.ShapeError):
        ckpt.to_bytes(tiny_panel)


def test_missing_file(tmp_path):
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(tmp_path / "nope.ckpt")
