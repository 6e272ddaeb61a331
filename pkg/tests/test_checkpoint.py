import struct
import zlib

import numpy as np
import pytest

from aublend.checkpoint import (CHECKPOINT_MAGIC, KIND_CODEBOOK, KIND_STYLE,
                                load_checkpoint, save_checkpoint)
from aublend.errors import FormatError
from aublend.model import CodebookAutoencoder, HyperParams, StylePredictor

HP = HyperParams(vertex_count=4, token_dim=4, codebook_size=3, layers=1,
                 heads=2, mlp_ratio=2, tcn_channels=4, style_dim=4)


def test_codebook_round_trip(tmp_path):
    cb = CodebookAutoencoder(HP, seed=1)
    cb.trained = True
    path = tmp_path / "cb.aubm"
    save_checkpoint(cb, path)
    back = load_checkpoint(path)
    assert isinstance(back, CodebookAutoencoder)
    assert back.trained is True
    assert back.hp == HP
    for name, t in cb.params.items():
        assert np.array_equal(back.params[name].values, t.values), name


def test_style_round_trip_preserves_hyperparams(tmp_path):
    hp = HyperParams(vertex_count=4, token_dim=4, codebook_size=5, layers=2,
                     heads=2, mlp_ratio=3, tcn_channels=6, tcn_kernel=2,
                     dilations=(1, 3), style_dim=8, beta=0.25)
    sp = StylePredictor(hp, seed=2)
    path = tmp_path / "sp.aubm"
    save_checkpoint(sp, path)
    back = load_checkpoint(path)
    assert isinstance(back, StylePredictor)
    assert back.hp == hp
    assert back.trained is False
    tmpl = np.random.default_rng(3).normal(size=hp.width)
    # lossless parameters: the reloaded forward pass agrees bit for bit
    assert np.array_equal(back.tokens(tmpl).values, sp.tokens(tmpl).values)


def test_save_load_save_is_byte_stable(tmp_path):
    cb = CodebookAutoencoder(HP, seed=4)
    a, b = tmp_path / "a.aubm", tmp_path / "b.aubm"
    save_checkpoint(cb, a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_expected_kind_guard(tmp_path):
    path = tmp_path / "cb.aubm"
    save_checkpoint(CodebookAutoencoder(HP, seed=5), path)
    load_checkpoint(path, expected_kind=KIND_CODEBOOK)
    with pytest.raises(FormatError, match="wrong model kind"):
        load_checkpoint(path, expected_kind=KIND_STYLE)


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "x.aubm"
    path.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_rejects_corrupted_payload(tmp_path):
    path = tmp_path / "cb.aubm"
    save_checkpoint(CodebookAutoencoder(HP, seed=6), path)
    data = bytearray(path.read_bytes())
    data[40] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="checksum"):
        load_checkpoint(path)


def test_rejects_truncation(tmp_path):
    path = tmp_path / "cb.aubm"
    save_checkpoint(CodebookAutoencoder(HP, seed=7), path)
    path.write_bytes(path.read_bytes()[:30])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_rejects_unknown_version(tmp_path):
    path = tmp_path / "cb.aubm"
    save_checkpoint(CodebookAutoencoder(HP, seed=8), path)
    data = bytearray(path.read_bytes())
    payload = bytearray(data[4:-4])
    payload[0:4] = struct.pack("<I", 999)
    crc = zlib.crc32(bytes(payload)) & 0xFFFFFFFF
    path.write_bytes(CHECKPOINT_MAGIC + bytes(payload) + struct.pack("<I", crc))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(path)


def test_rejects_empty_file(tmp_path):
    path = tmp_path / "x.aubm"
    path.write_bytes(b"")
    with pytest.raises(FormatError):
        load_checkpoint(path)
