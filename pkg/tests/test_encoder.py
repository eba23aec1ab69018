import numpy as np
import pytest

from dmads import functional as F
from dmads.encoder import Encoder, EncoderConfig
from dmads.nn import count_parameters, init_parameters
from dmads.tensor import GradTape, ShapeError, Tensor, TensorError, no_grad


def _image(size, channels=3):
    rng = np.random.default_rng(size)
    return Tensor(rng.random((1, channels, size, size)).astype(np.float32))


@pytest.mark.parametrize(
    "size,expected",
    [
        (256, [(1, 64, 256, 256), (1, 128, 128, 128), (1, 256, 64, 64)]),
        (128, [(1, 64, 128, 128), (1, 128, 64, 64), (1, 256, 32, 32)]),
    ],
)
def test_default_width_shapes(size, expected):
    enc = Encoder(EncoderConfig("R18"))
    init_parameters(enc, 0)
    with no_grad():
        feats = enc(_image(size))
    assert [f.shape for f in feats] == expected


@pytest.mark.parametrize("variant", ["R18", "R34"])
def test_stage_sizes_halve(variant):
    enc = Encoder(EncoderConfig(variant, (8, 16, 32)))
    init_parameters(enc, 1)
    feats = enc(_image(32))
    assert [f.shape[2:] for f in feats] == [(32, 32), (16, 16), (8, 8)]
    assert enc.macs(32, 32)[0] == [(32, 32), (16, 16), (8, 8)]


def test_r34_has_more_parameters():
    r18 = Encoder(EncoderConfig("R18"))
    r34 = Encoder(EncoderConfig("R34"))
    init_parameters(r18, 0)
    init_parameters(r34, 0)
    assert count_parameters(r34) > count_parameters(r18)


def test_blocks_per_stage():
    assert EncoderConfig("R18").blocks_per_stage == (2, 2, 2)
    assert EncoderConfig("R34").blocks_per_stage == (3, 4, 6)
    enc = Encoder(EncoderConfig("R34", (4, 8, 16)))
    assert [len(s) for s in (enc.stage1, enc.stage2, enc.stage3)] == [3, 4, 6]


def test_no_pooling_only_strided_convs_shrink():
    enc = Encoder(EncoderConfig("R34", (4, 8, 16)))
    init_parameters(enc, 0)
    with GradTape() as tape:
        enc(_image(16))
    names = set(tape.op_names())
    assert not any("pool" in n for n in names)
    for op, inputs, out in tape.records:
        if out.ndim == 4 and inputs[0].ndim == 4 and out.shape[2:] != inputs[0].shape[2:]:
            assert op == "conv2d"
    shrinking = [
        r for r in tape.records if r[0] == "conv2d" and r[2].shape[2] < r[1][0].shape[2]
    ]
    # two DownBlocks, each with a 3x3 main path and a 1x1 projection
    assert len(shrinking) == 4


def test_channels_preserved_within_stage():
    enc = Encoder(EncoderConfig("R34", (4, 8, 16)))
    for stage, c in ((enc.stage1, 4), (enc.stage2, 8), (enc.stage3, 16)):
        for block in list(stage)[1:]:
            assert block.channels == c


def test_deterministic():
    enc = Encoder(EncoderConfig("R18", (4, 8, 16)))
    init_parameters(enc, 5)
    a = [f.data.tobytes() for f in enc(_image(16))]
    b = [f.data.tobytes() for f in enc(_image(16))]
    assert a == b


@pytest.mark.parametrize("shape,match", [((1, 3, 18, 16), "divisible"), ((1, 3, 12, 12), ">= 16"), ((1, 1, 16, 16), "image channels")])
def test_bad_inputs_rejected_before_compute(shape, match):
    enc = Encoder(EncoderConfig("R18", (4, 8, 16)))
    with GradTape() as tape:
        with pytest.raises(ShapeError, match=match):
            enc(Tensor(np.zeros(shape, np.float32)))
    assert tape.records == []


def test_unknown_variant():
    with pytest.raises(TensorError, match="R50"):
        EncoderConfig("R50")
