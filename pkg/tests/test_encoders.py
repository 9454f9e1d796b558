import numpy as np
import pytest

from grounding.config import ModelConfig
from grounding.encoders import TextEncoder, VisualEncoder
from grounding.numeric import Tensor

SMALL = ModelConfig(stem_channels=8, c1=8, c2=8, c3=8, channels=16, text_width=12)


def test_small_fused_shape():
    enc = VisualEncoder(SMALL, np.random.default_rng(0))
    out = enc(np.random.default_rng(1).random((64, 64, 3)))
    assert out.features.shape == (4, 4, 16)
    assert out.stride == 16
    assert out.height * out.stride == 64


def test_pyramid_extents_at_640():
    enc = VisualEncoder(ModelConfig(stem_channels=2, c1=2, c2=2, c3=2, channels=8), np.random.default_rng(0))
    f8, f16, f32 = enc.pyramid(Tensor(np.zeros((640, 640, 3))))
    assert [(f.height, f.width, f.stride) for f in (f8, f16, f32)] == [(80, 80, 8), (40, 40, 16), (20, 20, 32)]


def test_zero_image_zero_features():
    enc = VisualEncoder(SMALL, np.random.default_rng(0))
    assert not enc(np.zeros((64, 96, 3))).features.data.any()


def test_batched_matches_single():
    enc = VisualEncoder(SMALL, np.random.default_rng(0))
    images = np.random.default_rng(2).random((3, 32, 64, 3))
    batched = enc(images).features.data
    for i in range(3):
        np.testing.assert_allclose(batched[i], enc(images[i]).features.data, atol=1e-13)


@pytest.mark.parametrize("shape", [(48, 64, 3), (64, 40, 3), (16, 16, 3)])
def test_rejects_non_multiple_of_32(shape):
    with pytest.raises(ValueError, match="multiples of 32"):
        VisualEncoder(SMALL, np.random.default_rng(0))(np.zeros(shape))


def test_fusion_arithmetic_by_hand():
    enc = VisualEncoder(SMALL, np.random.default_rng(3))
    image = np.random.default_rng(4).random((64, 64, 3))
    f8, f16, f32 = (f.features.data for f in enc.pyramid(Tensor(image)))
    pooled = f8.reshape(4, 2, 4, 2, 8).mean(axis=(1, 3))
    up = f32.repeat(2, axis=0).repeat(2, axis=1)
    cat = np.concatenate([pooled, f16, up], axis=-1)
    expected = cat @ enc.fuse_weight.data + enc.fuse_bias.data
    np.testing.assert_allclose(enc(image).features.data, expected, atol=1e-12)


def text_encoder(seed=0):
    enc = TextEncoder(SMALL, np.random.default_rng(seed))
    enc.proj_bias.assign(np.random.default_rng(seed + 1).standard_normal(16))
    return enc


def test_single_token_span_is_projection():
    enc = text_encoder()
    out = enc([5, 9, 11], [(1, 2)]).features.data
    expected = enc.embedding.data[9] @ enc.proj_weight.data + enc.proj_bias.data
    np.testing.assert_allclose(out[0], expected, atol=1e-12)


def test_repeated_token_span_equals_single():
    enc = text_encoder()
    a = enc([7, 7], [(0, 2)]).features.data
    b = enc([7], [(0, 1)]).features.data
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_three_token_mean_then_project():
    enc = text_encoder(5)
    ids = [3, 14, 15, 9, 2]
    out = enc(ids, [(1, 4), (0, 5)]).features.data
    for row, (s, e) in zip(out, [(1, 4), (0, 5)]):
        mean = sum(enc.embedding.data[i] for i in ids[s:e]) / (e - s)
        np.testing.assert_allclose(row, mean @ enc.proj_weight.data + enc.proj_bias.data, atol=1e-12)


def test_permutation_invariant_within_span():
    enc = text_encoder()
    a = enc([1, 2, 3], [(0, 3)]).features.data
    b = enc([3, 1, 2], [(0, 3)]).features.data
    np.testing.assert_allclose(a, b, atol=1e-13)


@pytest.mark.parametrize("spans", [[(0, 1), (2, 2)], [(0, 1), (1, 9)], [(0, 1), (-1, 1)]])
def test_bad_span_names_index(spans):
    with pytest.raises(ValueError, match="span 1"):
        text_encoder()([1, 2, 3], spans)


def test_encoders_are_deterministic():
    a, b = VisualEncoder(SMALL, np.random.default_rng(9)), VisualEncoder(SMALL, np.random.default_rng(9))
    image = np.random.default_rng(0).random((32, 32, 3))
    np.testing.assert_array_equal(a(image).features.data, b(image).features.data)
