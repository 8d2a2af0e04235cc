import struct

import numpy as np
import pytest

from tokpress.dumpio import (
    load_weight_matrix,
    read_dump,
    read_matrix,
    read_weight_dump,
    write_dump,
    write_matrix,
    write_weight_dump,
)
from tokpress.errors import (
    BadMagic,
    ChecksumMismatch,
    NonFiniteValue,
    ShapeMismatch,
    TruncatedDump,
    VersionMismatch,
)
from tokpress.model import AttentionBundle, ReductionPlan, apply_plan

from conftest import make_tokens


def test_roundtrip_zeros(tmp_path):
    t = make_tokens(np.zeros((4, 3)), frames=1, grid=(2, 2))
    path = tmp_path / "zeros.tokd"
    write_dump(path, t)
    back, bundle = read_dump(path)
    assert bundle is None
    assert np.array_equal(back.data, t.data)
    assert back.frames == 1 and back.grid == (2, 2)


def test_roundtrip_with_attention_bit_exact(tmp_path, rng):
    t = make_tokens(rng.normal(size=(12, 5)).astype(np.float32), frames=3, grid=(2, 2))
    cls = rng.dirichlet(np.ones(12))
    text = rng.dirichlet(np.ones(12), size=2)
    bundle = AttentionBundle(cls_to_patch=cls, text_to_visual=text)
    path = tmp_path / "full.tokd"
    write_dump(path, t, bundle)
    back, back_bundle = read_dump(path)
    assert np.array_equal(back.data, t.data)
    assert np.array_equal(back_bundle.cls_to_patch, cls.astype(np.float32).astype(np.float64))
    assert np.array_equal(
        back_bundle.text_to_visual, text.astype(np.float32).astype(np.float64)
    )


def test_corrupt_payload_byte(tmp_path):
    t = make_tokens(np.ones((4, 2)), grid=(2, 2))
    path = tmp_path / "x.tokd"
    write_dump(path, t)
    raw = bytearray(path.read_bytes())
    raw[40] ^= 0xFF  # inside the payload
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumMismatch):
        read_dump(path)


def test_bad_magic(tmp_path):
    t = make_tokens(np.ones((4, 2)), grid=(2, 2))
    path = tmp_path / "x.tokd"
    write_dump(path, t)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        read_dump(path)


def test_version_mismatch(tmp_path):
    t = make_tokens(np.ones((4, 2)), grid=(2, 2))
    path = tmp_path / "x.tokd"
    write_dump(path, t)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        read_dump(path)


def test_truncation_detected(tmp_path):
    t = make_tokens(np.ones((4, 2)), grid=(2, 2))
    path = tmp_path / "x.tokd"
    write_dump(path, t)
    raw = path.read_bytes()
    # drop 8 payload bytes but keep a syntactically complete file + crc
    path.write_bytes(raw[:-12] + raw[-4:])
    with pytest.raises((TruncatedDump, ChecksumMismatch)):
        read_dump(path)


def test_nonfinite_rejected_on_write(tmp_path):
    t = make_tokens(np.array([[np.inf, 0], [0, 0], [0, 0], [0, 0]]), grid=(2, 2))
    with pytest.raises(NonFiniteValue):
        write_dump(tmp_path / "bad.tokd", t)


def test_reduced_set_not_dumpable(tmp_path):
    t = make_tokens(np.ones((4, 2)), grid=(2, 2))
    reduced = apply_plan(t, ReductionPlan(4, (0, 1), (), "prune"))
    with pytest.raises(ShapeMismatch):
        write_dump(tmp_path / "reduced.tokd", reduced)


def test_weight_blob_roundtrip(tmp_path, rng):
    w = rng.normal(size=(6, 4)).astype(np.float32)
    path = tmp_path / "w.tokd"
    write_weight_dump(path, w)
    assert np.array_equal(read_weight_dump(path), w)
    assert np.array_equal(load_weight_matrix(path), w)
    with pytest.raises(ShapeMismatch):
        read_dump(path)


def test_token_dump_is_not_a_weight_blob(tmp_path):
    t = make_tokens(np.ones((4, 2)), grid=(2, 2))
    path = tmp_path / "t.tokd"
    write_dump(path, t)
    with pytest.raises(ShapeMismatch):
        read_weight_dump(path)


def test_matrix_roundtrip(tmp_path, rng):
    m = rng.normal(size=(5, 7)).astype(np.float32)
    path = tmp_path / "m.bin"
    write_matrix(path, m)
    assert np.array_equal(read_matrix(path), m)
    assert np.array_equal(load_weight_matrix(path), m)


def test_matrix_truncation(tmp_path):
    path = tmp_path / "m.bin"
    write_matrix(path, np.ones((3, 3), dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TruncatedDump):
        read_matrix(path)
