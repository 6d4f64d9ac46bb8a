import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ptdit.checkpoint import Checkpoint, describe, load_checkpoint, read_header, save_checkpoint
from ptdit.io import FormatError, read_tensor, render_latents, to_uint8, write_image, write_tensor
from ptdit.model import ModelConfig, build_model


@settings(max_examples=30, deadline=None)
@given(
    hnp.arrays(
        st.sampled_from([np.float32, np.float64, np.int64]),
        hnp.array_shapes(min_dims=0, max_dims=5, min_side=0, max_side=4),
        elements=st.integers(-1000, 1000),
    )
)
def test_tensor_round_trip(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("t") / "a.ptt"
    write_tensor(path, a)
    b = read_tensor(path)
    assert b.dtype == a.dtype and b.shape == a.shape
    np.testing.assert_array_equal(a, b)


def test_tensor_rejects_bad_files(tmp_path):
    p = tmp_path / "x.ptt"
    p.write_bytes(b"NOTATENS" + bytes(20))
    with pytest.raises(FormatError):
        read_tensor(p)
    write_tensor(p, np.ones(3))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError, match="payload"):
        read_tensor(p)
    with pytest.raises(FormatError):
        write_tensor(p, np.ones(2, dtype=np.complex64))


def test_image_rendering(tmp_path):
    assert to_uint8(np.full((2, 2), 3.0)).max() == 0
    u = to_uint8(np.array([[0.0, 1.0], [2.0, 4.0]]))
    assert u.min() == 0 and u.max() == 255
    canvas = render_latents(np.random.default_rng(0).standard_normal((3, 1, 2, 4, 5)))
    assert canvas.shape == (8, 15) and canvas.dtype == np.uint8
    assert render_latents(np.zeros((1, 3, 1, 4, 4))).shape == (4, 4, 3)
    write_image(tmp_path / "s.png", np.zeros((2, 1, 1, 4, 4)))
    assert (tmp_path / "s.png").stat().st_size > 0
    with pytest.raises(FormatError):
        render_latents(np.zeros((4, 4)))


def make_ckpt():
    m = build_model(ModelConfig(), seed=3)
    params = m.state_dict()
    rng = np.random.default_rng(0)
    ema = {k: v + 0.01 for k, v in params.items()}
    optim = {f"m.{k}": rng.standard_normal(v.shape) for k, v in params.items()}
    meta = {"step": 17, "note": "x", "nested": {"a": [1, 2]}}
    return Checkpoint(m.cfg, params, ema, optim, meta)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    ck = make_ckpt()
    save_checkpoint(tmp_path / "c.ptck", ck)
    back = load_checkpoint(tmp_path / "c.ptck")
    assert back.config == ck.config and back.meta == ck.meta and back.step == 17
    for group in ("params", "ema", "optim"):
        a, b = getattr(ck, group), getattr(back, group)
        assert list(a) == list(b)
        for k in a:
            assert a[k].dtype == b[k].dtype and a[k].tobytes() == b[k].tobytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_checkpoint_restores_identical_model(tmp_path):
    ck = make_ckpt()
    save_checkpoint(tmp_path / "c.ptck", ck)
    back = load_checkpoint(tmp_path / "c.ptck")
    m = build_model(back.config, seed=99)
    m.load_state_dict(back.params)
    assert all(np.array_equal(m.state_dict()[k], ck.params[k]) for k in ck.params)


def test_checkpoint_rejects_bad_input(tmp_path):
    p = tmp_path / "c.ptck"
    p.write_bytes(b"garbage" * 4)
    with pytest.raises(FormatError):
        load_checkpoint(p)
    save_checkpoint(p, make_ckpt())
    p.write_bytes(p.read_bytes()[:-100])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(p)


def test_describe_lists_parameters(tmp_path):
    save_checkpoint(tmp_path / "c.ptck", make_ckpt())
    text = describe(tmp_path / "c.ptck")
    header, _ = read_header(tmp_path / "c.ptck")
    assert "meta.step = 17" in text and "config.hidden_dim" in text
    assert sum(1 for e in header["tensors"] if e["group"] == "params") == sum(1 for line in text.splitlines() if line.startswith("  params/"))
