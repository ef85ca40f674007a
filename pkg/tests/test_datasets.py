import numpy as np
import pytest

from bwgan import datasets


@pytest.mark.parametrize("name", sorted(datasets.SAMPLERS))
def test_sampler_shapes_and_determinism(name):
    sampler = datasets.make_sampler(name)
    dim = datasets.dataset_dim(name)
    a = sampler(np.random.default_rng(7), 100)
    b = sampler(np.random.default_rng(7), 100)
    assert a.shape == (100, dim)
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a))


def test_eight_gaussians_on_ring():
    pts = datasets.eight_gaussians(np.random.default_rng(0), 2000)
    radii = np.linalg.norm(pts, axis=1)
    np.testing.assert_allclose(radii, 2.0, atol=0.15)
    # all 8 modes visited
    angles = np.arctan2(pts[:, 1], pts[:, 0])
    mode = np.round(angles / (np.pi / 4)).astype(int) % 8
    assert len(np.unique(mode)) == 8


def test_rectangles_layout():
    imgs = datasets.rectangles(np.random.default_rng(1), 20)
    assert imgs.shape == (20, 256)
    # every image has zero background and a nonzero rectangle
    for row in imgs:
        assert np.any(row == 0.0) and np.any(row != 0.0)


def test_unknown_dataset_rejected():
    with pytest.raises(ValueError):
        datasets.make_sampler("mnist")
