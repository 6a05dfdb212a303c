import struct

import numpy as np
import pytest

from curriswap.checkpoint import MAGIC, checkpoint_bytes, load_checkpoint, read_header, save_checkpoint
from curriswap.errors import CorruptCheckpointError, FormatVersionError, IncompatibleError
from curriswap.models import ModelConfig, build_model, compose_slow_track, make_transcoder, swap_component
from curriswap.optim import OptimizerState, adam_step


def model(task, **kw):
    return build_model(ModelConfig(task, src_vocab=12, tgt_vocab=13, embed=4, hidden=5, seed=2, **kw))


def test_save_load_save_is_byte_identical(tmp_path):
    m = model("ST")
    m.meta["src_vocab"] = "abc"
    a = save_checkpoint(m, tmp_path / "a.ckpt")
    b = save_checkpoint(load_checkpoint(a), tmp_path / "b.ckpt")
    assert a.read_bytes() == b.read_bytes()


def test_optimizer_state_round_trip(tmp_path):
    m = model("MT")
    opt = OptimizerState(lr=0.0005)
    params = m.params()
    adam_step(opt, params, {k: np.ones_like(t.data) for k, t in params.items()})
    path = save_checkpoint(m, tmp_path / "m.ckpt", opt)
    m2, opt2 = load_checkpoint(path, with_optimizer=True)
    assert opt2.step == 1 and opt2.lr == 0.0005 and opt2.best_dev == float("inf")
    for k in opt.m:
        np.testing.assert_array_equal(opt.m[k], opt2.m[k])
        np.testing.assert_array_equal(opt.v[k], opt2.v[k])
    assert checkpoint_bytes(m2, opt2) == checkpoint_bytes(m, opt)


def test_composed_assembly_round_trip(tmp_path):
    asr, mt = model("ASR"), model("MT")
    st = compose_slow_track(asr, make_transcoder(asr, 10), mt)
    back = load_checkpoint(save_checkpoint(st, tmp_path / "st.ckpt"))
    assert back.provenance == st.provenance
    assert list(back.parts) == ["encoder", "bridge", "transcoder", "mt_bridge", "mt_decoder"]


def test_header_records_names_and_dims(tmp_path):
    h = read_header(save_checkpoint(model("ASR"), tmp_path / "a.ckpt"))
    assert h["task"] == "ASR"
    assert [p["name"] for p in h["parts"]] == ["asr/encoder", "asr/bridge", "asr/decoder"]
    assert h["dims"]["D"] == 23


def test_truncated_payload(tmp_path):
    path = save_checkpoint(model("MT"), tmp_path / "m.ckpt")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_trailing_bytes(tmp_path):
    path = save_checkpoint(model("MT"), tmp_path / "m.ckpt")
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\0" * 20)
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_future_version(tmp_path):
    path = save_checkpoint(model("MT"), tmp_path / "m.ckpt")
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, len(MAGIC), 2)
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatVersionError):
        load_checkpoint(path)


def test_mt_checkpoint_into_asr_slot_with_wrong_dims(tmp_path):
    mt = build_model(ModelConfig("MT", src_vocab=12, tgt_vocab=13, embed=4, hidden=7, seed=2))
    loaded = load_checkpoint(save_checkpoint(mt, tmp_path / "mt.ckpt"))
    with pytest.raises(IncompatibleError):
        swap_component(model("ASR"), "decoder", loaded)
