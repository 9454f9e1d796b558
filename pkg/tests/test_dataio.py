import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grounding.dataio import (VOCABULARY, DatasetError, SyntheticConfig, generate_synthetic, load_dataset,
                         read_ppm, rle_decode, rle_encode, save_dataset)

FIXTURE = Path(__file__).parent / "fixtures" / "two_samples"


def test_rle_all_zeros():
    assert rle_encode(np.zeros((2, 2), dtype=int)) == [4]


def test_rle_all_ones():
    assert rle_encode(np.ones((2, 2), dtype=int)) == [0, 4]


def test_rle_alternating_trace():
    assert rle_encode([1, 0, 0, 1]) == [0, 1, 2, 1]


def test_rle_rejects_non_binary():
    with pytest.raises(ValueError):
        rle_encode([0, 2, 1])


def test_rle_decode_examples():
    assert rle_decode([4], 4).tolist() == [0, 0, 0, 0]
    assert rle_decode([0, 4], 4).tolist() == [1, 1, 1, 1]


def test_rle_decode_sum_mismatch():
    with pytest.raises(ValueError, match="sum"):
        rle_decode([1, 2], 4)


def test_rle_round_trip_1000_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        mask = (rng.random(n) < rng.random()).astype(np.uint8)
        runs = rle_encode(mask)
        assert sum(runs) == n
        np.testing.assert_array_equal(rle_decode(runs, n), mask)


@settings(max_examples=300)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=300))
def test_rle_round_trip_property(bits):
    runs = rle_encode(bits)
    assert all(r > 0 for r in runs[1:])
    assert rle_decode(runs, len(bits)).tolist() == bits


# -- generator ---------------------------------------------------------------

def test_vocabulary_has_64_words():
    assert len(VOCABULARY) == 64


def test_every_pixel_covered_seed0():
    (sample,) = generate_synthetic(0, SyntheticConfig(image_size=64, n_samples=1))
    cover = np.zeros((64, 64), dtype=int)
    for p in sample.phrases:
        cover |= p.mask
    assert cover.all()


def test_generated_samples_are_well_formed():
    samples = generate_synthetic(3, SyntheticConfig(image_size=96, n_samples=25, max_shapes=5))
    kinds_seen = set()
    for s in samples:
        s.validate()
        assert s.image.shape == (96, 96, 3)
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
        instances = [p for p in s.phrases if p.is_thing and not p.is_plural
                     and s.tokens[p.span[0]] not in ("round", "boxy", "pointy")]
        assert 1 <= len(instances) <= 5
        for p in s.phrases:
            assert p.mask.any(), "every phrase mask must be nonempty"
            assert p.mask.shape == (96, 96)
        for p in s.phrases:
            if p.is_plural:
                word = s.tokens[p.span[0]]
                kinds_seen.add(word)
                members = [q.mask for q in instances if q.span[1] - q.span[0] == 2
                           and s.tokens[q.span[1] - 1] + "s" == word]
                assert len(members) >= 2
                np.testing.assert_array_equal(p.mask, np.bitwise_or.reduce(members))
        # a category phrase and an instance phrase share one region
        for p in s.phrases:
            if s.tokens[p.span[0]] in ("round", "boxy", "pointy"):
                assert any(np.array_equal(p.mask, q.mask) for q in instances)
        background = [p for p in s.phrases if not p.is_thing]
        assert len(background) == 1
        union = np.bitwise_or.reduce([q.mask for q in instances])
        np.testing.assert_array_equal(background[0].mask, 1 - union)
    assert kinds_seen, "expected at least one plural phrase across 25 samples"


def test_generator_rejects_bad_size():
    with pytest.raises(ValueError):
        generate_synthetic(0, SyntheticConfig(image_size=48))


def test_same_seed_gives_identical_bytes(tmp_path):
    cfg = SyntheticConfig(image_size=64, n_samples=4)
    save_dataset(generate_synthetic(7, cfg), tmp_path / "a")
    save_dataset(generate_synthetic(7, cfg), tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_different_seeds_differ():
    cfg = SyntheticConfig(image_size=64, n_samples=2)
    a, b = generate_synthetic(0, cfg), generate_synthetic(1, cfg)
    assert a != b


# -- dataset directories -----------------------------------------------------

def test_save_load_round_trip(tmp_path):
    samples = generate_synthetic(1, SyntheticConfig(image_size=64, n_samples=5))
    save_dataset(samples, tmp_path)
    assert (tmp_path / "annotations.jsonl").is_file()
    assert sorted(p.name for p in (tmp_path / "images").iterdir()) == [f"{i:06d}.ppm" for i in range(5)]
    assert load_dataset(tmp_path) == samples


def test_golden_fixture_fields():
    s0, s1 = load_dataset(FIXTURE)
    assert s0.tokens == ["the", "background", "."]
    assert s0.image.shape == (32, 32, 3)
    np.testing.assert_allclose(s0.image[5, 7], np.array([10, 20, 30]) / 255.0)
    assert s0.phrases[0].span == (1, 2) and not s0.phrases[0].is_thing
    assert s0.phrases[0].mask.all()

    assert s1.tokens[1:3] == ["red", "rectangle"]
    np.testing.assert_allclose(s1.image[0, 0], [1.0, 0.0, 128 / 255.0])
    np.testing.assert_allclose(s1.image[0, 16], [0.0, 0.0, 128 / 255.0])
    left, right = s1.phrases
    assert left.is_thing and not left.is_plural and left.span == (1, 3)
    assert left.mask[:, :16].all() and not left.mask[:, 16:].any()
    np.testing.assert_array_equal(right.mask, 1 - left.mask)


def _copy_fixture(tmp_path):
    dst = tmp_path / "ds"
    shutil.copytree(FIXTURE, dst)
    return dst


def test_missing_image_is_named(tmp_path):
    ds = _copy_fixture(tmp_path)
    (ds / "images" / "000001.ppm").unlink()
    with pytest.raises(DatasetError, match=r"record 1.*000001\.ppm"):
        load_dataset(ds)


def test_malformed_line_reports_record(tmp_path):
    ds = _copy_fixture(tmp_path)
    lines = (ds / "annotations.jsonl").read_text().splitlines()
    lines[1] = lines[1][:-5]
    (ds / "annotations.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"annotations\.jsonl record 1.*malformed"):
        load_dataset(ds)


def test_rle_length_mismatch_reports_record(tmp_path):
    ds = _copy_fixture(tmp_path)
    lines = (ds / "annotations.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["phrases"][0]["rle"] = [0, 1000]
    lines[0] = json.dumps(rec)
    (ds / "annotations.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"record 0.*RLE length"):
        load_dataset(ds)


def test_image_count_mismatch(tmp_path):
    ds = _copy_fixture(tmp_path)
    shutil.copy(ds / "images" / "000000.ppm", ds / "images" / "000002.ppm")
    with pytest.raises(DatasetError, match="2 records but 3 image files"):
        load_dataset(ds)


def test_ppm_reader_matches_fixture_bytes():
    img = read_ppm(FIXTURE / "images" / "000000.ppm")
    assert img.shape == (32, 32, 3)
    assert np.all(img == np.array([10, 20, 30]) / 255.0)
