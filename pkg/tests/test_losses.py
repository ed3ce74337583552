import numpy as np
import pytest

from e1d3.errors import InvalidLabel, ShapeMismatch
from e1d3.layers import softmax_channels
from e1d3.losses import (
    class_indices,
    combined_loss,
    cross_entropy_loss,
    region_targets,
    soft_dice_loss,
)


def _fd(f, arr, ix, h=1e-6):
    old = arr[ix]
    arr[ix] = old + h
    up = f()
    arr[ix] = old - h
    dn = f()
    arr[ix] = old
    return (up - dn) / (2 * h)


def test_dice_by_hand():
    p = np.array([[0.5, 0.5, 0.0, 1.0]])
    g = np.array([[1.0, 0.0, 0.0, 1.0]])
    loss, _ = soft_dice_loss(p, g, eps=0.0)
    # 2 * 1.5 / (2 + 2)
    assert loss == pytest.approx(1 - 0.75)
    assert soft_dice_loss(g, g, eps=1e-5)[0] == pytest.approx(0.0, abs=1e-12)
    assert soft_dice_loss(np.zeros((1, 4)), np.zeros((1, 4)))[0] == 0.0


def test_dice_is_per_sample_mean():
    p = np.array([[1.0, 0.0], [0.0, 0.0]])
    g = np.array([[1.0, 0.0], [1.0, 0.0]])
    # sample 0 perfect, sample 1 misses everything
    loss, _ = soft_dice_loss(p, g, eps=0.0)
    assert loss == pytest.approx(0.5)


def test_dice_gradient(rng):
    p = rng.uniform(size=(2, 3, 3, 3))
    g = (rng.uniform(size=p.shape) > 0.5).astype(float)
    _, grad = soft_dice_loss(p, g)
    for ix in [(0, 0, 0, 0), (1, 2, 1, 0), (0, 1, 2, 2)]:
        num = _fd(lambda: soft_dice_loss(p, g)[0], p, ix)
        assert grad[ix] == pytest.approx(num, rel=1e-6, abs=1e-10)


def test_cross_entropy_by_hand_and_gradient(rng):
    z = np.log(np.array([0.25, 0.75]))[None, :, None]
    loss, grad = cross_entropy_loss(softmax_channels(z[..., None, None]), np.array([[[[1]]]]))
    assert loss == pytest.approx(-np.log(0.75))
    np.testing.assert_allclose(grad.ravel(), [0.25, -0.25])

    z = rng.standard_normal((2, 3, 2, 2, 2))
    t = rng.integers(0, 3, (2, 2, 2, 2))
    _, grad = cross_entropy_loss(softmax_channels(z), t)
    for ix in [(0, 0, 0, 0, 0), (1, 2, 1, 1, 0)]:
        num = _fd(lambda: cross_entropy_loss(softmax_channels(z), t)[0], z, ix)
        assert grad[ix] == pytest.approx(num, rel=1e-6, abs=1e-10)


def test_cross_entropy_clamps_log():
    p = np.zeros((1, 2, 1, 1, 1))
    p[0, 0] = 1.0
    loss, _ = cross_entropy_loss(p, np.ones((1, 1, 1, 1), int))
    assert loss == pytest.approx(-np.log(1e-12))
    with pytest.raises(InvalidLabel):
        cross_entropy_loss(p, np.full((1, 1, 1, 1), 2))


def test_region_and_class_maps():
    lab = np.array([0, 1, 2, 4])
    wt, tc, en = region_targets(lab)
    assert wt.tolist() == [0, 1, 1, 1]
    assert tc.tolist() == [0, 1, 0, 1]
    assert en.tolist() == [0, 0, 0, 1]
    assert class_indices(lab).tolist() == [0, 1, 2, 3]


def _logits(rng, n_heads, k, shape=(2, 4, 4, 4)):
    return [rng.standard_normal((shape[0], k) + shape[1:]) for _ in range(n_heads)]


@pytest.mark.parametrize("variant,n_heads,k", [("E1D3", 3, 2), ("E1D1", 1, 4), ("E1D3Ens", 3, 4)])
def test_combined_gradient_wrt_logits(variant, n_heads, k, rng):
    z = _logits(rng, n_heads, k)
    lab = rng.choice(np.array([0, 1, 2, 4]), size=(2, 1, 4, 4, 4))

    def total():
        return combined_loss([softmax_channels(a) for a in z], lab, variant)[0].total

    report, grads = combined_loss([softmax_channels(a) for a in z], lab, variant)
    assert len(report.per_head) == n_heads
    assert report.total == pytest.approx(np.mean([d + c for d, c in report.per_head]))
    for h in range(n_heads):
        for ix in [(0, 0, 0, 0, 0), (1, k - 1, 3, 2, 1), (0, 1, 2, 2, 2)]:
            assert grads[h][ix] == pytest.approx(_fd(total, z[h], ix), rel=1e-5, abs=1e-10)


def test_e1d3_heads_use_regions(rng):
    lab = rng.choice(np.array([0, 1, 2, 4]), size=(1, 4, 4, 4))
    perfect = []
    for t in region_targets(lab):
        p = np.stack([1 - t, t], axis=1)
        perfect.append(p)
    report, _ = combined_loss(perfect, lab, "E1D3")
    assert report.total == pytest.approx(0.0, abs=1e-6)
    # swapping heads must hurt: the order is WT, TC, EN
    report, _ = combined_loss(perfect[::-1], lab, "E1D3")
    assert report.total > 1.0


def test_four_class_dice_averages_foreground():
    lab = np.zeros((1, 2, 2, 2), int)
    lab[0, 0, 0, 0] = 1
    lab[0, 1, 1, 1] = 4
    p = np.zeros((1, 4, 2, 2, 2))
    idx = class_indices(lab)
    np.put_along_axis(p, idx[:, None], 1.0, axis=1)
    p[0, :, 1, 1, 1] = [1, 0, 0, 0]  # EN voxel predicted as background
    report, _ = combined_loss([p], lab, "E1D1", eps=1e-5)
    dice_term, _ = report.per_head[0]
    # class 1 perfect, class 2 empty in both (loss 0), class 4 missed (loss ~1)
    assert dice_term == pytest.approx(1.0 / 3.0, abs=1e-4)


def test_label_checks(rng):
    heads = [softmax_channels(a) for a in _logits(rng, 3, 2, (1, 2, 2, 2))]
    with pytest.raises(InvalidLabel):
        combined_loss(heads, np.full((1, 1, 2, 2, 2), 3), "E1D3")
    with pytest.raises(ShapeMismatch):
        combined_loss(heads, np.zeros((1, 1, 2, 2, 3), int), "E1D3")
    with pytest.raises(ShapeMismatch):
        combined_loss(heads[:2], np.zeros((1, 1, 2, 2, 2), int), "E1D3")
    with pytest.raises(ShapeMismatch):
        combined_loss(heads, np.zeros((1, 2, 2, 2, 2), int), "E1D3")
