from __future__ import annotations

import numpy as np
import pytest

from vqadiff.denoiser import (
    DenoiserArch,
    DenoiserParams,
    ShapeError,
    denoiser_backward,
    denoiser_forward,
    init_denoiser,
    sinusoidal_embed,
)
from vqadiff.selftest import central_difference
from vqadiff.tasks import N_PARAMS

SMALL = DenoiserArch(input_dim=4, hidden=8, blocks=1, time_dim=4, cond_dim=4)


def _perturbed(arch, seed, scale=0.1):
    p = init_denoiser(arch, seed)
    return p.with_flat(p.flat + scale * np.random.default_rng(seed + 100).normal(size=p.size))


def test_embed_examples():
    e = sinusoidal_embed(0, 8)
    assert np.array_equal(e[0::2], np.zeros(4)) and np.array_equal(e[1::2], np.ones(4))
    assert np.array_equal(sinusoidal_embed(1, 2), [np.sin(1.0), np.cos(1.0)])
    with pytest.raises(ValueError):
        sinusoidal_embed(1, 3)
    with pytest.raises(ValueError):
        sinusoidal_embed(101, 32, T=100)


def test_embed_distinct_over_schedule():
    E = sinusoidal_embed(np.arange(101), 32, T=100)
    diffs = np.max(np.abs(E[:, None, :] - E[None, :, :]), axis=-1)
    np.fill_diagonal(diffs, np.inf)
    assert diffs.min() > 1e-9


def test_fresh_output_is_zero():
    p = init_denoiser(DenoiserArch(8), 0)
    x = np.random.default_rng(0).normal(size=(5, 8))
    assert not denoiser_forward(p, x, np.arange(1, 6), np.ones((5, 16))).any()
    assert not denoiser_forward(p, x, 3).any()


@pytest.mark.parametrize("dim", sorted(set(N_PARAMS.values())))
def test_output_length_matches_input(dim):
    p = _perturbed(DenoiserArch(dim, hidden=16, blocks=2), 1)
    out = denoiser_forward(p, np.zeros((3, dim)), 5, np.zeros(16))
    assert out.shape == (3, dim)


def test_init_properties():
    arch = DenoiserArch(8)
    a, b = init_denoiser(arch, 3), init_denoiser(arch, 3)
    assert np.array_equal(a.flat, b.flat)
    assert not a["W_out"].any() and not a["b_out"].any() and not a["b_in"].any()
    w = a["W1_0"]
    assert w.shape == (128, 128)
    assert abs(w.var() / (2 / 128) - 1) < 0.2


def test_shape_errors():
    p = init_denoiser(SMALL, 0)
    with pytest.raises(ShapeError):
        p.predict(np.zeros((2, 5)), 1, np.zeros(16))
    with pytest.raises(ShapeError):
        DenoiserParams(SMALL, np.zeros(3))
    _, cache = p.predict(np.zeros((2, 4)), 1, np.zeros(16))
    with pytest.raises(ShapeError):
        p.grad(cache, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        DenoiserArch(4, time_dim=5)


def test_backward_zero_upstream():
    p = _perturbed(SMALL, 0)
    x = np.ones((2, 4))
    assert not denoiser_backward(p, x, 3, np.ones(16), np.zeros((2, 4))).any()


def test_null_gradient_only_when_used():
    p = _perturbed(SMALL, 1)
    rng = np.random.default_rng(0)
    x, c, up = rng.normal(size=(3, 4)), rng.normal(size=(3, 16)), rng.normal(size=(3, 4))
    _, cache = p.predict(x, [1, 2, 3], c, [False, False, False])
    g = p.grad(cache, up)
    assert not p.view(g, "null").any()
    _, cache = p.predict(x, [1, 2, 3], c, [True, True, True])
    g = p.grad(cache, up)
    assert p.view(g, "null").any() and not p.view(g, "W_cond").any()


@pytest.mark.parametrize("null", [[False, False, False], [True, False, True]])
def test_gradient_matches_finite_differences(null):
    p = _perturbed(SMALL, 2)
    rng = np.random.default_rng(1)
    x, c, up = rng.normal(size=(3, 4)), rng.normal(size=(3, 16)), rng.normal(size=(3, 4))
    t = np.array([1, 50, 100])
    _, cache = p.predict(x, t, c, null)
    g = p.grad(cache, up)
    f = lambda w: float(np.sum(up * p.with_flat(w).predict(x, t, c, null)[0]))  # noqa: E731
    fd = central_difference(f, p.flat, 1e-6)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-4


def test_directional_derivative():
    p = _perturbed(DenoiserArch(8, hidden=32, blocks=4), 3)
    rng = np.random.default_rng(2)
    x, c, up = rng.normal(size=(4, 8)), rng.normal(size=(4, 16)), rng.normal(size=(4, 8))
    g = denoiser_backward(p, x, 7, c, up)
    d = rng.normal(size=p.size)
    h = 1e-6
    f = lambda w: float(np.sum(up * denoiser_forward(p.with_flat(w), x, 7, c)))  # noqa: E731
    fd = (f(p.flat + h * d) - f(p.flat - h * d)) / (2 * h)
    assert abs(fd - g @ d) / abs(fd) < 1e-4


def test_forward_backward_deterministic():
    p = _perturbed(SMALL, 4)
    x = np.ones((2, 4))
    assert np.array_equal(denoiser_forward(p, x, 2, np.ones(16)), denoiser_forward(p, x, 2, np.ones(16)))
    up = np.ones((2, 4))
    assert np.array_equal(denoiser_backward(p, x, 2, None, up), denoiser_backward(p, x, 2, None, up))
