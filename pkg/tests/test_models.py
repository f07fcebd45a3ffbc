import numpy as np
import numpy.testing as npt
import pytest

from ncconv.conv import NCConv2d
from ncconv.errors import CheckpointError, GeometryError
from ncconv.im2col import conv_geometry
from ncconv.models import (BlockItem, ConvItem, ModelSpec, build, cnn4_spec,
                           load_checkpoint, resnet8_spec, save_checkpoint)


def test_empty_spec_is_identity():
    spec = ModelSpec(3, (8, 8), items=(), pool="none", classes=None)
    model = build(spec, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((2, 3, 8, 8)).astype(np.float32)
    npt.assert_array_equal(model.forward(x, training=False), x)
    assert model.param_count == 0


def test_single_nc_layer_spec_equals_layer_forward():
    spec = ModelSpec(2, (6, 6), (ConvItem("nc", 4, 3, 1, 1, "none", "none"),),
                     pool="none", classes=None)
    model = build(spec, np.random.default_rng(5), dtype="float64")
    g = conv_geometry(2, 4, 3, 1, 1, (6, 6))
    ref = NCConv2d(g, np.random.default_rng(5), dtype="float64")
    x = np.random.default_rng(6).standard_normal((2, 2, 6, 6))
    npt.assert_array_equal(model.forward(x, training=False),
                           ref.forward(x, training=False))


@pytest.mark.parametrize("conv,norm", [("nc", "none"), ("std", "gn")])
def test_resnet8_output_shape(conv, norm):
    model = build(resnet8_spec(conv=conv, norm=norm), np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((2, 3, 32, 32)).astype(np.float32)
    assert model.forward(x, training=False).shape == (2, 10)
    assert model.param_count > 0


def test_cnn4_output_shape():
    model = build(cnn4_spec(conv="nc"), np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((4, 3, 32, 32)).astype(np.float32)
    assert model.forward(x, training=False).shape == (4, 10)


def test_build_error_cites_layer_index():
    spec = ModelSpec(1, (4, 4), (ConvItem("nc", 2, 3, 1, 1),
                                 ConvItem("nc", 2, 9, 1, 0)), pool="gap", classes=2)
    with pytest.raises(GeometryError, match="layer 1"):
        build(spec, np.random.default_rng(0))


def test_residual_block_backward_flows():
    spec = ModelSpec(3, (8, 8), (BlockItem("nc", 8, 2, "gn", "relu"),),
                     pool="gap", classes=4)
    model = build(spec, np.random.default_rng(2), dtype="float64")
    x = np.random.default_rng(3).standard_normal((2, 3, 8, 8))
    y = model.forward(x, training=True)
    gx = model.backward(np.ones_like(y))
    assert gx.shape == x.shape
    names = [n for n, _ in model.named_grads()]
    assert any("short" in n for n in names)  # projection shortcut has grads too


def test_describe_reports_groups_and_shortcut():
    model = build(resnet8_spec(conv="std", norm="gn"), np.random.default_rng(0))
    desc = model.describe()
    assert desc["param_count"] == model.param_count
    blocks = [l for l in desc["layers"] if l["type"] == "ResidualBlock"]
    assert blocks[0]["shortcut"] == "identity"
    assert blocks[1]["shortcut"] == "conv1x1_std"
    assert all(g >= 1 for l in blocks for g in l["groups"])


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = build(cnn4_spec(conv="nc", widths=(4, 4, 8, 8), input_hw=(16, 16)),
                  np.random.default_rng(7))
    x = np.random.default_rng(8).standard_normal((2, 3, 16, 16)).astype(np.float32)
    y0 = model.forward(x, training=False)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)

    other = build(cnn4_spec(conv="nc", widths=(4, 4, 8, 8), input_hw=(16, 16)),
                  np.random.default_rng(99))  # different init
    load_checkpoint(other, path)
    npt.assert_array_equal(other.forward(x, training=False), y0)
    for (n1, p1), (n2, p2) in zip(model.named_params(), other.named_params()):
        assert n1 == n2
        npt.assert_array_equal(p1, p2)


def test_checkpoint_truncated_file_clean_error(tmp_path):
    model = build(cnn4_spec(conv="std", widths=(2, 2, 2, 2), input_hw=(8, 8)),
                  np.random.default_rng(0))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    data = path.read_bytes()
    before = [p.copy() for _, p in model.named_params()]
    path.write_bytes(data[:-1])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(model, path)
    # no partial mutation
    for (_, p), b in zip(model.named_params(), before):
        npt.assert_array_equal(p, b)


def test_checkpoint_cross_element_type_rejected(tmp_path):
    spec = cnn4_spec(conv="std", widths=(2, 2, 2, 2), input_hw=(8, 8))
    m64 = build(spec, np.random.default_rng(0), dtype="float64")
    path = tmp_path / "m64.ckpt"
    save_checkpoint(m64, path)
    m32 = build(spec, np.random.default_rng(0), dtype="float32")
    with pytest.raises(CheckpointError, match="element type"):
        load_checkpoint(m32, path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"JUNKJUNKJUNKJUNK")
    model = build(ModelSpec(1, (4, 4), (), pool="flatten", classes=2),
                  np.random.default_rng(0))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(model, path)


def test_checkpoint_shape_mismatch(tmp_path):
    spec_a = cnn4_spec(conv="std", widths=(2, 2, 2, 2), input_hw=(8, 8))
    spec_b = cnn4_spec(conv="std", widths=(2, 2, 2, 4), input_hw=(8, 8))
    a = build(spec_a, np.random.default_rng(0))
    b = build(spec_b, np.random.default_rng(0))
    path = tmp_path / "a.ckpt"
    save_checkpoint(a, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(b, path)
