import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damagefv import formats
from damagefv.descriptors import (
    COMPONENTS, DIM, DescriptorSet, FilterBankParams, ZERO_MEAN_COMPONENTS,
    dense_descriptors, descriptors_from_bytes, descriptors_to_bytes, pixel_descriptors,
    read_descriptors, write_descriptors,
)


def test_constant_image_zero_responses():
    ds = dense_descriptors(np.full((20, 24), 0.37), FilterBankParams(7, 2))
    assert np.all(ds.vectors[:, list(ZERO_MEAN_COMPONENTS)] == 0.0)
    assert np.allclose(ds.vectors[:, COMPONENTS.index("mean")], 0.37)


def test_vertical_step_edge_sign():
    img = np.zeros((9, 9))
    img[:, 5:] = 1.0          # dark to bright along +x
    ds = dense_descriptors(img, FilterBankParams(3, 1))
    centre = ds.within(np.pad(np.ones((1, 1), bool), ((4, 4), (4, 4))))
    gx = centre.vectors[0, COMPONENTS.index("grad_0")]
    # window cols 3..5; central differences 0, .5, .5 averaged over 9 pixels
    assert gx == pytest.approx(1.0 / 3.0, rel=1e-6)
    flipped = dense_descriptors(img[:, ::-1].copy(), FilterBankParams(3, 1))
    assert flipped.within(np.pad(np.ones((1, 1), bool), ((4, 4), (4, 4)))).vectors[0, 2] < 0


@pytest.mark.parametrize("w,h,p,s", [(48, 48, 7, 2), (30, 17, 5, 3), (7, 7, 7, 1), (20, 11, 9, 4)])
def test_grid_count(w, h, p, s):
    ds = dense_descriptors(np.zeros((h, w)), FilterBankParams(p, s))
    assert len(ds) == ((w - p) // s + 1) * ((h - p) // s + 1)
    assert ds.dim == DIM
    assert ds.coords[:, 0].max() < w and ds.coords[:, 1].max() < h


def test_too_small_image():
    with pytest.raises(ValueError):
        dense_descriptors(np.zeros((5, 5)), FilterBankParams(7, 1))


def test_params_validation():
    with pytest.raises(ValueError):
        FilterBankParams(4, 1)
    with pytest.raises(ValueError):
        FilterBankParams(5, 0)


def test_translation_consistency():
    rng = np.random.default_rng(5)
    img = rng.random((40, 40))
    s = 2
    shifted = np.empty_like(img)
    shifted[:, s:] = img[:, :-s]
    shifted[:, :s] = img[:, :1]
    p = FilterBankParams(5, s)
    a, b = dense_descriptors(img, p), dense_descriptors(shifted, p)
    lookup = {(int(x), int(y)): v for (x, y), v in zip(b.coords, b.vectors)}
    checked = 0
    for (x, y), v in zip(a.coords, a.vectors):
        if 12 <= x <= 26 and 12 <= y <= 28:
            np.testing.assert_allclose(lookup[(int(x) + s, int(y))], v, rtol=1e-5, atol=1e-6)
            checked += 1
    assert checked > 20


def test_pixel_descriptors_shape():
    f = pixel_descriptors(np.random.default_rng(0).random((12, 15)), 5)
    assert f.shape == (12, 15, DIM)


def sample_set(n, d, seed=0):
    rng = np.random.default_rng(seed)
    return DescriptorSet(rng.integers(0, 100, (n, 2)), rng.standard_normal((n, d)))


def test_roundtrip_small_and_empty(tmp_path):
    for ds in (sample_set(3, 4), DescriptorSet(np.zeros((0, 2)), np.zeros((0, 5)))):
        path = tmp_path / "d.nzrd"
        write_descriptors(ds, path)
        assert read_descriptors(path) == ds


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 30), st.integers(1, 20), st.integers(0, 1000))
def test_roundtrip_property(n, d, seed):
    ds = sample_set(n, d, seed)
    assert descriptors_from_bytes(descriptors_to_bytes(ds)) == ds


def test_layout():
    ds = sample_set(2, 3)
    raw = descriptors_to_bytes(ds)
    assert raw[:4] == b"NZRD"
    assert len(raw) == 4 + 2 + 4 + 4 + 2 * 2 * 4 + 2 * 3 * 4


def test_format_errors():
    raw = descriptors_to_bytes(sample_set(3, 4))
    with pytest.raises(formats.BadMagicError):
        descriptors_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(formats.TruncatedError):
        descriptors_from_bytes(raw[:-1])
    huge = raw[:6] + (2**20).to_bytes(4, "little") + (2**20).to_bytes(4, "little") + raw[14:]
    with pytest.raises(formats.SizeOverflowError):
        descriptors_from_bytes(huge)
    with pytest.raises(formats.VersionError):
        descriptors_from_bytes(raw[:4] + (9).to_bytes(2, "little") + raw[6:])
    with pytest.raises(formats.FormatError):
        descriptors_from_bytes(raw + b"\0")
