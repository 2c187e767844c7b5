import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from trialdesign import ValidationError, eval_tps, fit_tps, grad_tps


def _sites(seed, n=100, d=2, lo=0.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, (n, d))


def test_affine_data_gives_affine_surface():
    x = _sites(0)
    y = 0.3 + 2.0 * x[:, 0] - 1.5 * x[:, 1]
    for lam in (0.0, 1e-3, "auto"):
        s = fit_tps(x, y, lam)
        assert np.max(np.abs(s.weights)) < 1e-9
        probe = np.array([[0.37, 0.81], [1.4, -0.2]])
        np.testing.assert_allclose(s(probe), 0.3 + 2.0 * probe[:, 0] - 1.5 * probe[:, 1],
                                   atol=1e-10)
        np.testing.assert_allclose(grad_tps(s, [0.2, 0.9]), [2.0, -1.5], atol=1e-9)


def test_interpolation_quadratic():
    x = _sites(1)
    y = x[:, 0] ** 2 + x[:, 1] ** 2
    s = fit_tps(x, y, 0.0)
    np.testing.assert_allclose(s(x), y, atol=1e-8)
    assert eval_tps(s, x[17]) == pytest.approx(y[17], abs=1e-8)


def test_smoothing_beats_nearest_neighbour():
    gen = np.random.default_rng(2)
    x = gen.uniform(0, 1, (200, 2))
    f = lambda p: np.sin(3 * p[:, 0]) + p[:, 1] ** 2
    y = f(x) + gen.normal(0, 1e-2, 200)
    s = fit_tps(x, y, "auto")
    assert s.lam > 0
    test = gen.uniform(0.1, 0.9, (300, 2))
    nearest = y[np.argmin(((test[:, None, :] - x[None]) ** 2).sum(-1), axis=1)]
    rms_tps = np.sqrt(np.mean((s(test) - f(test)) ** 2))
    rms_nn = np.sqrt(np.mean((nearest - f(test)) ** 2))
    assert rms_tps < rms_nn


@given(st.integers(0, 2 ** 31), st.sampled_from([1, 2, 3]))
def test_interpolation_property(seed, d):
    x = _sites(seed, n=30, d=d)
    # near-coincident sites make lam=0 hit the singular-pivot guard by design
    gaps = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1)) + np.eye(30)
    assume(gaps.min() > 1e-2)
    y = np.random.default_rng(seed + 1).normal(size=30)
    s = fit_tps(x, y, 0.0)
    np.testing.assert_allclose(s(x), y, atol=1e-7 * (1 + np.abs(y).max()))


@given(st.integers(0, 2 ** 31), st.sampled_from([1, 2, 3]))
def test_gradient_matches_finite_differences(seed, d):
    gen = np.random.default_rng(seed)
    x = gen.uniform(0, 1, (40, d))
    y = np.cos(2 * x).sum(axis=1) + gen.normal(0, 0.05, 40)
    s = fit_tps(x, y, 1e-4)
    p = gen.uniform(0.1, 0.9, d)
    h = 1e-6
    fd = np.array([(eval_tps(s, p + h * e) - eval_tps(s, p - h * e)) / (2 * h)
                   for e in np.eye(d)])
    g = grad_tps(s, p)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_symmetric_data_has_flat_centre():
    # a symmetric lattice about c with radially symmetric values
    ax = np.linspace(-1, 1, 9)
    x = np.stack(np.meshgrid(ax, ax), -1).reshape(-1, 2) + 0.5
    y = np.exp(-((x - 0.5) ** 2).sum(1))
    s = fit_tps(x, y, "auto")
    np.testing.assert_allclose(grad_tps(s, [0.5, 0.5]), 0.0, atol=1e-8)


def test_residual_nondecreasing_in_lambda():
    gen = np.random.default_rng(4)
    x = gen.uniform(0, 1, (80, 2))
    y = np.sin(4 * x[:, 0]) * x[:, 1] + gen.normal(0, 0.05, 80)
    rss = [np.sum((fit_tps(x, y, lam).fitted() - y) ** 2) for lam in np.logspace(-8, 1, 12)]
    assert np.all(np.diff(rss) >= -1e-12)


def test_small_scale_coordinates():
    # alpha-like coordinates in (0, 0.025) are z-scored before the kernel
    x = _sites(5, n=60, d=2, hi=0.025)
    y = -((x[:, 0] - 0.01) ** 2 + (x[:, 1] - 0.005) ** 2) * 1e3
    s = fit_tps(x, y, 0.0)
    np.testing.assert_allclose(s(x), y, atol=1e-9)


def test_near_duplicate_sites_need_smoothing():
    x = np.array([[0.0], [0.3], [0.3 + 1e-7], [0.6], [1.0]])
    y = np.array([0.0, 1.0, 1.0, 0.5, 0.2])
    with pytest.raises(ValidationError, match="singular"):
        fit_tps(x, y, 0.0)
    fit_tps(x, y, 1e-3)


def test_auto_lambda_on_dense_one_dimensional_sites():
    # hundreds of close 1-D sites make the kernel nearly singular; GCV must stay well posed
    gen = np.random.default_rng(4)
    x = np.sort(gen.choice(np.linspace(0.0, 0.025, 1000), 500, replace=False))[:, None]
    y = 0.7 - 300.0 * (x[:, 0] - 0.015) ** 2 + gen.normal(0, 1e-3, 500)
    s = fit_tps(x, y, "auto")
    assert s.lam > 0
    assert abs(s([[0.015]])[0] - 0.7) < 2e-3


def test_hull():
    x = _sites(6, n=50)
    s = fit_tps(x, x[:, 0], 0.0)
    inside = s.inside_hull(np.array([[0.5, 0.5], [5.0, 5.0]]))
    assert inside.tolist() == [True, False]


@pytest.mark.parametrize("sites, values, match", [
    (np.zeros((3, 2)), np.zeros(3), "at least"),
    (np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]), np.zeros(4), "duplicate"),
    (np.column_stack([np.linspace(0, 1, 6), np.full(6, 0.3)]), np.zeros(6), "rank"),
    (np.column_stack([np.linspace(0, 1, 6), 2 * np.linspace(0, 1, 6)]), np.zeros(6), "rank"),
    (np.array([[0, 0], [1, 0], [0, 1], [1, 1.0]]), np.array([0, 1, np.nan, 0]), "finite"),
])
def test_validation(sites, values, match):
    with pytest.raises(ValidationError, match=match):
        fit_tps(sites, values, 0.0)
