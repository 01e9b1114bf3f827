import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image as PILImage

from dualfit.errors import (
    CorruptImageError,
    DimensionMismatchError,
    InvalidLabelError,
    UnsupportedImageError,
)
from dualfit.imaging import (
    AuxInputs,
    Label,
    as_image,
    load_image,
    load_mask,
    load_parsing_map,
    mask_from_labels,
    overlay,
    quantize,
    save_image,
    save_mask,
    save_parsing_map,
)
from oracles import select_loop


def test_load_rgb_samples(tmp_path):
    px = np.array([[[0, 0, 0], [255, 0, 0]], [[0, 255, 0], [0, 0, 255]]], dtype=np.uint8)
    PILImage.fromarray(px).save(tmp_path / "a.png")
    img = load_image(tmp_path / "a.png")
    assert img.shape == (2, 2, 3)
    assert np.array_equal(quantize(img), px)
    assert img[0, 1, 0] == 1.0


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3)])
def test_png_round_trip_is_bit_exact(tmp_path, rng, shape):
    px = rng.integers(0, 256, shape, dtype=np.uint8)
    PILImage.fromarray(px).save(tmp_path / "a.png")
    first = load_image(tmp_path / "a.png")
    save_image(tmp_path / "b.png", first)
    second = load_image(tmp_path / "b.png")
    assert np.array_equal(first, second)
    assert np.array_equal(quantize(second).reshape(shape), px)


def test_sixteen_bit_png_rejected(tmp_path):
    PILImage.fromarray(np.full((4, 4), 1000, dtype=np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(UnsupportedImageError, match="bit depth 16"):
        load_image(tmp_path / "deep.png")


def test_alpha_png_rejected(tmp_path):
    PILImage.new("RGBA", (3, 3)).save(tmp_path / "rgba.png")
    with pytest.raises(UnsupportedImageError, match="color type"):
        load_image(tmp_path / "rgba.png")


def test_missing_and_corrupt_files_are_distinct(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")
    (tmp_path / "junk.png").write_bytes(b"not a png at all, just some bytes!!")
    with pytest.raises(CorruptImageError):
        load_image(tmp_path / "junk.png")
    PILImage.fromarray(np.zeros((32, 32, 3), np.uint8) + 7).save(tmp_path / "ok.png")
    raw = (tmp_path / "ok.png").read_bytes()
    (tmp_path / "cut.png").write_bytes(raw[: len(raw) - 30])
    with pytest.raises(CorruptImageError):
        load_image(tmp_path / "cut.png")


def test_quantize_rounds_half_away_from_zero():
    vals = np.array([0.5 / 255, 1.5 / 255, 254.49 / 255, -0.2, 1.3])
    assert quantize(vals).tolist() == [1, 2, 254, 0, 255]


def test_parsing_all_background(tmp_path):
    save_parsing_map(tmp_path / "p.png", np.zeros((4, 6), np.uint8))
    parsing = load_parsing_map(tmp_path / "p.png")
    assert parsing.shape == (4, 6) and not parsing.any()


def test_parsing_invalid_label_reports_first_pixel(tmp_path):
    raw = np.zeros((3, 4), np.uint8)
    raw[1, 2] = 9
    raw[2, 3] = 200
    PILImage.fromarray(raw).save(tmp_path / "p.png")
    with pytest.raises(InvalidLabelError) as err:
        load_parsing_map(tmp_path / "p.png")
    assert err.value.code == 9
    assert err.value.index == 1 * 4 + 2


def test_parsing_garment_regions(tmp_path):
    raw = np.zeros((4, 6), np.uint8)
    raw[:, 0:2] = 5
    raw[:, 2:4] = 7
    raw[:, 4:6] = 6
    save_parsing_map(tmp_path / "p.png", raw)
    parsing = load_parsing_map(tmp_path / "p.png")
    assert (parsing[:, :2] == Label.LEFT_GARMENT).all()
    assert (parsing[:, 2:4] == Label.TORSO_GARMENT).all()
    assert (parsing[:, 4:] == Label.RIGHT_GARMENT).all()


def test_mask_round_trip(tmp_path, rng):
    m = rng.random((9, 11)) < 0.5
    save_mask(tmp_path / "m.png", m)
    assert np.array_equal(load_mask(tmp_path / "m.png"), m)


def test_mask_from_labels_examples(rng):
    torso = np.full((5, 5), Label.TORSO_GARMENT, np.uint8)
    assert mask_from_labels(torso, {Label.TORSO_GARMENT}).all()
    assert not mask_from_labels(torso, set()).any()

    mixed = rng.integers(0, 9, (12, 10)).astype(np.uint8)
    got = mask_from_labels(mixed, {Label.LEFT_HAND, Label.RIGHT_HAND})
    expected = np.zeros_like(got)
    for y in range(12):
        for x in range(10):
            expected[y, x] = mixed[y, x] in (2, 3)
    assert np.array_equal(got, expected)


labels_st = st.sets(st.sampled_from(list(Label)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), labels_st, labels_st)
def test_mask_from_labels_union(seed, a, b):
    parsing = np.random.default_rng(seed).integers(0, 9, (8, 8)).astype(np.uint8)
    assert np.array_equal(
        mask_from_labels(parsing, a | b),
        mask_from_labels(parsing, a) | mask_from_labels(parsing, b),
    )


def test_overlay_examples(rng):
    base = rng.random((6, 8, 3))
    top = rng.random((6, 8, 3))
    assert np.array_equal(overlay(base, top, np.zeros((6, 8), bool)), base)
    assert np.array_equal(overlay(base, top, np.ones((6, 8), bool)), top)
    checker = (np.indices((6, 8)).sum(0) % 2).astype(bool)
    assert np.array_equal(overlay(base, top, checker), select_loop(base, top, checker))


def test_overlay_properties(rng):
    for _ in range(20):
        base, top = rng.random((2, 7, 5, 1))
        m = rng.random((7, 5)) < 0.4
        assert np.array_equal(overlay(base, base, m), as_image(base))
        once = overlay(base, top, m)
        assert np.array_equal(overlay(once, top, m), once)


def test_overlay_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        overlay(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), np.zeros((4, 4), bool))
    with pytest.raises(DimensionMismatchError):
        overlay(np.zeros((4, 4, 3)), np.zeros((4, 4, 1)), np.zeros((4, 4), bool))


def test_aux_inputs_must_match_person():
    aux = AuxInputs(np.zeros((4, 4, 3)), np.zeros((4, 4)))
    aux.check_matches(np.zeros((4, 4, 3)))
    with pytest.raises(DimensionMismatchError):
        aux.check_matches(np.zeros((5, 4, 3)))
