import numpy as np
import pytest

from repcali.checkpoint import (
    IntegrityError,
    MagicError,
    MissingTensorError,
    TensorShapeError,
    TruncatedError,
    UnknownTensorError,
    VersionError,
    load_checkpoint,
    load_tensors,
    restore_model,
    save_checkpoint,
    save_tensors,
)
from repcali.model import ModelConfig, Seq2SeqModel

CFG = ModelConfig(layers=1, d_h=8, heads=2, ffn_mult=2, vocab=10, n_max=6, dropout=0.0)


def test_roundtrip_is_bitwise(tmp_path):
    model = Seq2SeqModel(CFG, 1)
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p, config_text="[x]\nk = 1", step=17)
    other = Seq2SeqModel(CFG, 2)
    ckpt = load_checkpoint(p, other)
    assert ckpt.step == 17
    assert ckpt.config_text == "[x]\nk = 1"
    for (n1, t1), (n2, t2) in zip(model.named_params(), other.named_params()):
        assert n1 == n2
        assert t1.data.tobytes() == t2.data.tobytes()


def test_save_load_save_is_byte_identical(tmp_path):
    model = Seq2SeqModel(CFG, 1)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, p1, step=3)
    fresh = Seq2SeqModel(CFG, 9)
    load_checkpoint(p1, fresh)
    save_checkpoint(fresh, p2, step=3)
    assert p1.read_bytes() == p2.read_bytes()


def test_tensor_records_sorted_by_name(tmp_path):
    p = tmp_path / "t.ckpt"
    save_tensors(p, {"b": np.ones(2, dtype=np.float32),
                     "a": np.zeros(3, dtype=np.float32)})
    blob = p.read_bytes()
    assert blob.find(b"\x01\x00a") < blob.find(b"\x01\x00b")


def test_corrupted_payload_detected(tmp_path):
    model = Seq2SeqModel(CFG, 1)
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    blob = bytearray(p.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError):
        load_tensors(p)


def test_bad_magic_and_version(tmp_path):
    import struct
    import zlib

    p = tmp_path / "m.ckpt"
    save_tensors(p, {"a": np.ones(1, dtype=np.float32)})
    blob = p.read_bytes()
    p.write_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(MagicError):
        load_tensors(p)

    # flip the version field and refresh the trailing crc
    v = tmp_path / "v.ckpt"
    save_tensors(v, {"a": np.ones(1, dtype=np.float32)})
    raw = bytearray(v.read_bytes())
    raw[8:12] = struct.pack("<I", 99)
    body = bytes(raw[:-4])
    v.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(VersionError):
        load_tensors(v)


def test_truncated_file(tmp_path):
    p = tmp_path / "m.ckpt"
    save_tensors(p, {"a": np.ones(4, dtype=np.float32)})
    p.write_bytes(p.read_bytes()[:10])
    with pytest.raises((TruncatedError, IntegrityError)):
        load_tensors(p)


def test_unknown_tensor_rejected(tmp_path):
    model = Seq2SeqModel(CFG, 1)
    named = {n: t.data for n, t in model.named_params()}
    named["ghost.w"] = np.zeros(3, dtype=np.float32)
    p = tmp_path / "m.ckpt"
    save_tensors(p, named)
    with pytest.raises(UnknownTensorError):
        restore_model(model, load_tensors(p))


def test_missing_tensor_rejected(tmp_path):
    model = Seq2SeqModel(CFG, 1)
    named = {n: t.data for n, t in model.named_params()}
    named.pop("tok_emb")
    p = tmp_path / "m.ckpt"
    save_tensors(p, named)
    with pytest.raises(MissingTensorError):
        restore_model(model, load_tensors(p))


def test_cross_config_shape_error_names_tensor(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(Seq2SeqModel(CFG, 1), p)
    other_cfg = ModelConfig(layers=1, d_h=8, heads=2, ffn_mult=2, vocab=12,
                            n_max=6, dropout=0.0)
    other = Seq2SeqModel(other_cfg, 1)
    with pytest.raises(TensorShapeError) as exc:
        restore_model(other, load_tensors(p))
    assert "tok_emb" in str(exc.value) or "out_proj" in str(exc.value)
