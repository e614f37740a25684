import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pseudosal.core import (
    BinaryMask,
    Dataset,
    Image,
    SaliencyMap,
    SampleRecord,
    binarize_pseudo_label,
    normalize_minmax,
    pseudo_label_threshold,
    resize_array,
    resize_bilinear,
)
from pseudosal.errors import InvalidArgument, ValidationError


def test_image_validation():
    with pytest.raises((InvalidArgument, ValidationError)):
        Image(np.zeros((4, 4)))
    with pytest.raises((InvalidArgument, ValidationError)):
        Image(np.full((4, 4, 3), 2.0, np.float32))
    im = Image(np.zeros((4, 6, 3), np.float32))
    assert (im.height, im.width) == (4, 6)


def test_mask_must_be_binary():
    with pytest.raises((InvalidArgument, ValidationError)):
        BinaryMask(np.array([[0, 2]], np.uint8))


def test_resize_2x2_to_1x1_is_mean():
    # half-pixel centres put the single output sample at the middle of the 2x2 block
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert resize_array(a, 1, 1)[0, 0] == pytest.approx(0.5)


def test_resize_identity_and_range(rng):
    im = Image(rng.random((10, 12, 3)).astype(np.float32))
    np.testing.assert_array_equal(resize_bilinear(im, 12, 10).pixels, im.pixels)
    out = resize_bilinear(im, 7, 5)
    assert out.pixels.shape == (5, 7, 3)
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1
    with pytest.raises(InvalidArgument):
        resize_array(im.pixels, 0, 3)


def test_normalize_constant_is_degenerate():
    m = normalize_minmax(np.full((3, 3), 0.4))
    assert m.degenerate and not m.values.any()
    m = normalize_minmax(np.array([[1.0, 3.0]]))
    np.testing.assert_allclose(m.values, [[0.0, 1.0]])


def test_binarization_rule_exhaustive():
    r = np.random.default_rng(0)
    for _ in range(1000):
        v = r.random((r.integers(2, 12), r.integers(2, 12))).astype(np.float32)
        if r.random() < 0.2:
            v = np.round(v * 4) / 4     # ties at the threshold
        mask = binarize_pseudo_label(SaliencyMap(v)).values
        gamma = 1.5 * np.mean(v, dtype=np.float64)
        assert np.array_equal(mask == 1, v.astype(np.float64) > gamma)


def test_threshold_override():
    v = SaliencyMap(np.array([[0.1, 0.5]], np.float32))
    assert pseudo_label_threshold(v, mean=0.2) == pytest.approx(0.3)
    assert binarize_pseudo_label(v, mean=0.2).values.tolist() == [[0, 1]]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (5, 5), elements=st.floats(0, 1, width=32)))
def test_binarized_mask_never_covers_everything(v):
    # nothing can exceed 1.5x the mean everywhere unless the map is all zero
    mask = binarize_pseudo_label(SaliencyMap(v)).values
    assert mask.sum() < v.size


def test_dataset_indexing_and_splits():
    im = Image(np.zeros((4, 4, 3), np.float32))
    ds = Dataset([SampleRecord("a", im, split="train"), SampleRecord("b", im, split="test")])
    assert ds.ids == ["a", "b"] and len(ds) == 2
    assert ds.subset("test").ids == ["b"]
    assert not ds.has_gt()
    with pytest.raises(ValidationError):
        Dataset([SampleRecord("a", im), SampleRecord("a", im)])
    with pytest.raises(ValidationError):
        SampleRecord("c", im, gt=BinaryMask(np.zeros((3, 4), np.uint8)))
