import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from csfusion.synthetic import class_signatures, synthetic_scene


def test_shapes_and_labels():
    F, gt = synthetic_scene(32, 24, 8, classes=3, regions=9, seed=1)
    assert F.shape == (32, 24, 8)
    assert gt.labels.shape == (32, 24)
    assert gt.class_count == 3
    assert set(np.unique(gt.labels)) == {1, 2, 3}


def test_deterministic():
    a = synthetic_scene(16, 16, 4, seed=5)
    b = synthetic_scene(16, 16, 4, seed=5)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert a[1].labels.tobytes() == b[1].labels.tobytes()
    c = synthetic_scene(16, 16, 4, seed=6)
    assert c[0].data.tobytes() != a[0].data.tobytes()


def test_non_negative():
    F, _ = synthetic_scene(16, 16, 8, pixel_noise=0.5, seed=0)
    assert F.data.min() >= 0


def test_noiseless_pixels_follow_class_signature():
    F, gt = synthetic_scene(16, 16, 8, classes=2, regions=4, pixel_noise=0.0, seed=3)
    sig = class_signatures(8, 2, seed=4)
    for r, c in [(0, 0), (7, 9), (15, 15)]:
        ratio = F.data[r, c] / sig[gt.labels[r, c] - 1]
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)


def test_signatures_distinct():
    sig = class_signatures(16, 5, seed=0)
    assert sig.shape == (5, 16)
    d = np.linalg.norm(sig[:, None] - sig[None], axis=2)
    assert d[np.triu_indices(5, 1)].min() > 0.1


@given(st.integers(1, 6), st.integers(0, 10**6), st.integers(4, 14))
def test_every_class_has_two_pixels(classes, seed, side):
    _, gt = synthetic_scene(side, side, 4, classes=classes, regions=2 * classes, seed=seed)
    counts = np.bincount(gt.labels.ravel(), minlength=classes + 1)[1:]
    assert counts.min() >= 2
    assert gt.labels.min() >= 1
