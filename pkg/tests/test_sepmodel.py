import numpy as np
import pytest

from adhoc_css import nn
from adhoc_css.checkpoint import load_checkpoint, load_into, save_model
from adhoc_css.sepmodel import SepModel, SepModelConfig

TINY = SepModelConfig(num_blocks=1, d_model=8, num_heads=2, rnn_cells=4, num_bins=9)


@pytest.fixture(scope="module")
def tiny_model():
    return SepModel(TINY, seed=1)


def test_masks_nonnegative(tiny_model, rng):
    masks = tiny_model.forward(np.abs(rng.standard_normal((2, 6, 9))))
    assert masks.shape == (2, 6, 9)
    assert np.all(masks >= 0)


def test_forward_deterministic(tiny_model, rng):
    x = np.abs(rng.standard_normal((2, 6, 9)))
    np.testing.assert_array_equal(tiny_model.forward(x), tiny_model.forward(x))


def test_channel_permutation_invariance(tiny_model, rng):
    x = np.abs(rng.standard_normal((3, 6, 9)))
    base = tiny_model.forward(x)
    for perm in ([1, 0, 2], [2, 1, 0], [1, 2, 0]):
        assert np.max(np.abs(tiny_model.forward(x[perm]) - base)) < 1e-6


def test_variable_channel_count(tiny_model, rng):
    for c in (1, 3):
        masks = tiny_model.forward(np.abs(rng.standard_normal((c, 6, 9))))
        assert masks.shape == (2, 6, 9)


def test_bad_bin_count(tiny_model):
    with pytest.raises(nn.NnError, match="bin count"):
        tiny_model.forward(np.zeros((2, 6, 10)))


def test_zero_loss_gradient_gives_zero_grads(tiny_model, rng):
    tiny_model.forward(np.abs(rng.standard_normal((2, 6, 9))))
    tiny_model.zero_grad()
    tiny_model.backward(np.zeros((2, 6, 9)))
    for p in tiny_model.named_params().values():
        np.testing.assert_array_equal(p.grad, 0)


def test_gradient_linearity(tiny_model, rng):
    x = np.abs(rng.standard_normal((2, 6, 9)))
    g1 = rng.standard_normal((2, 6, 9))
    g2 = rng.standard_normal((2, 6, 9))

    def grads_for(g):
        tiny_model.forward(x)
        tiny_model.zero_grad()
        tiny_model.backward(g)
        return {k: p.grad.copy() for k, p in tiny_model.named_params().items()}

    a, b, s = grads_for(g1), grads_for(g2), grads_for(g1 + g2)
    for k in a:
        np.testing.assert_allclose(a[k] + b[k], s[k], atol=1e-10)


def test_end_to_end_gradient_check(rng):
    """Analytic gradients vs central finite differences on the tiny config."""
    model = SepModel(TINY, seed=3)
    x = np.abs(rng.standard_normal((2, 6, 9)))
    w = rng.standard_normal((2, 6, 9))

    def loss():
        return float(np.sum(model.forward(x) * w))

    model.forward(x)
    model.zero_grad()
    model.backward(w)
    params = model.named_params()
    h = 1e-5
    sampler = np.random.default_rng(4)
    worst = 0.0
    for name, p in params.items():
        flat = p.value.ravel()
        g = p.grad.ravel()
        idx = (range(flat.size) if flat.size <= 40
               else sampler.choice(flat.size, 40, replace=False))
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp = loss()
            flat[i] = old - h
            lm = loss()
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            rel = abs(fd - g[i]) / max(abs(fd) + abs(g[i]), 1e-6)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_nan_input_detected(tiny_model):
    x = np.zeros((2, 6, 9))
    x[0, 0, 0] = np.nan
    with pytest.raises(nn.NnError, match="non-finite"):
        tiny_model.forward(x)


def test_checkpoint_roundtrip_bit_identical(tmp_path, rng):
    model = SepModel(TINY, seed=5)
    x = np.abs(rng.standard_normal((2, 6, 9)))
    masks = model.forward(x)
    path = tmp_path / "m.ckpt"
    save_model(path, model, "separation")
    config, tensors = load_checkpoint(path)
    assert config["kind"] == "separation"
    clone = SepModel(TINY, seed=99)
    load_into(clone, tensors)
    np.testing.assert_array_equal(clone.forward(x), masks)


def test_checkpoint_bytes_deterministic(tmp_path):
    model = SepModel(TINY, seed=6)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_model(p1, model, "separation")
    save_model(p2, model, "separation")
    assert p1.read_bytes() == p2.read_bytes()
