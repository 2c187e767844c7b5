import importlib
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trialdesign import (SCENARIOS, AlphaVector, McConfig, RGrid, SweepError, ValidationError,
                         build_prior, compare_methods, comparison_stats, design_for,
                         relative_difference, sweep)
from trialdesign.errors import InsufficientCandidatesError
from trialdesign.optimize import AlphaOptimum
from trialdesign.power import GridConfig, PowerEstimate

sweep_module = importlib.import_module("trialdesign.sweep")


@pytest.mark.parametrize("step, n, count", [(0.05, 3, 171), (0.1, 3, 36), (0.1, 4, 84),
                                            (0.1, 2, 9)])
def test_rgrid_count(step, n, count):
    grid = RGrid(step, n)
    assert len(grid) == count == math.comb(round(1 / step) - 1, n - 1)
    for r in grid:
        assert all(a > b for a, b in zip(r, r[1:]))
        assert 0 < r[-1] and r[0] < 1
        assert all(abs(v / step - round(v / step)) < 1e-9 for v in r)


def test_rgrid_validation():
    with pytest.raises(ValidationError):
        RGrid(0.3)
    with pytest.raises(ValidationError):
        RGrid(0.1, n=1)


@given(st.lists(st.floats(0, 0.025), min_size=3, max_size=3),
       st.lists(st.floats(0, 0.025), min_size=3, max_size=3))
def test_relative_difference_range(a, b):
    R = relative_difference(a, b)
    assert np.all(np.abs(R) <= 2.0)
    assert np.all(R[(np.array(a) == 0) & (np.array(b) == 0)] == 0)


def test_self_comparison():
    alpha = [0.002, 0.013, 0.0133]
    s = comparison_stats((0.4, 0.2), alpha, alpha, 0.97, 0.97, 0.969, 0.969)
    np.testing.assert_array_equal(s.R, 0.0)
    assert s.Q == 0.0


def test_q_sign():
    s = comparison_stats((0.4, 0.2), [0.01, 0, 0], [0.01, 0, 0], 0.90, 0.95, 0.951, 0.951)
    assert s.Q == pytest.approx(abs(0.90 - 0.951) - abs(0.95 - 0.951))
    assert s.Q > 0


def _fake_optimizer(fail=()):
    """Stand-in for optimize_alpha with a smooth, known optimal-power law over r."""
    def fake(design, prior, n3, grid_m, mc, seed):
        r = tuple(design.r[1:])
        if r in fail:
            raise InsufficientCandidatesError("forced")
        if design.n == 3:
            p = 0.9 - (r[0] - 0.45) ** 2 - (r[1] - 0.17) ** 2
        else:
            p = 0.5
        alpha = AlphaVector(np.full(design.n, 0.025 / design.n))
        return AlphaOptimum(alpha, PowerEstimate(p, "monte-carlo"), "monte-carlo")
    return fake


def test_sweep_locates_smooth_optimum(monkeypatch):
    monkeypatch.setattr(sweep_module, "optimize_alpha", _fake_optimizer())
    res = sweep(SCENARIOS["c"], RGrid(0.1), n3=10)
    assert len(res.rows) == 36
    np.testing.assert_allclose(res.r_opt[1:], (0.45, 0.17), atol=0.01)
    assert res.power_at_r_opt == pytest.approx(0.9, abs=1e-3)
    assert not res.boundary and res.dropped == 0
    best_row = max(row.power for row in res.rows)
    assert res.surface_value_at_r_opt >= best_row - 1e-3


def test_sweep_tolerates_few_failures(monkeypatch):
    monkeypatch.setattr(sweep_module, "optimize_alpha", _fake_optimizer(fail={(0.9, 0.8)}))
    res = sweep(SCENARIOS["c"], RGrid(0.1), n3=10)
    assert sum(bool(row.error) for row in res.rows) == 1
    assert len(res.ok_rows) == 35


def test_sweep_fails_beyond_five_percent(monkeypatch):
    monkeypatch.setattr(sweep_module, "optimize_alpha",
                        _fake_optimizer(fail={(0.9, 0.8), (0.9, 0.7)}))
    with pytest.raises(SweepError):
        sweep(SCENARIOS["c"], RGrid(0.1), n3=10)


def test_sweep_drops_boundary_subpopulation(monkeypatch):
    def fake(design, prior, n3, grid_m, mc, seed):
        r = design.r
        # power rises as the smallest subpopulation shrinks; the two-population design wins
        p = {3: lambda: 0.8 - 0.1 * r[2] - 0.1 * (r[1] - 0.5) ** 2, 2: lambda: 0.85,
             1: lambda: 0.6}[design.n]()
        alpha = AlphaVector(np.full(design.n, 0.025 / design.n))
        return AlphaOptimum(alpha, PowerEstimate(p, "monte-carlo"), "monte-carlo")
    monkeypatch.setattr(sweep_module, "optimize_alpha", fake)
    res = sweep(SCENARIOS["b"], RGrid(0.1), n3=10)
    assert res.boundary
    assert res.dropped == 1
    assert len(res.r_opt) == 2
    assert res.power_at_r_opt == 0.85


@pytest.fixture(scope="module")
def tiny_sweep():
    kw = dict(mc=McConfig(512, 1024, seed=2), n3=80, grid_m=25, seed=5)
    return kw, sweep(SCENARIOS["c"], RGrid(0.2), **kw)


def test_sweep_real_engine(tiny_sweep):
    _, res = tiny_sweep
    assert len(res.rows) == 6
    assert all(0.0 <= row.power <= 1.0 for row in res.rows)
    assert 0.0 <= res.power_at_r_opt <= 1.0
    r = np.asarray(res.r_opt)
    assert r[0] == 1.0 and np.all(np.diff(r) < 0)
    assert res.surface_value_at_r_opt >= max(row.power for row in res.rows) - 1e-3


def test_sweep_deterministic(tiny_sweep):
    kw, res = tiny_sweep
    again = sweep(SCENARIOS["c"], RGrid(0.2), **kw)
    assert [row.power for row in again.rows] == [row.power for row in res.rows]
    assert again.r_opt == res.r_opt
    assert again.alpha_at_r_opt == res.alpha_at_r_opt


def test_compare_methods_small():
    design = design_for((1, 0.5), SCENARIOS["b"])
    prior = build_prior(design, SCENARIOS["b"])
    (s,) = compare_methods([(design, prior)], McConfig(2048, 4096), GridConfig(m=50), n3=40,
                           grid_m=50)
    assert s.R.shape == (2,)
    assert np.all(np.abs(s.R) <= 2)
    assert s.Q == pytest.approx(abs(s.P_s - s.P_f_s) - abs(s.P_n - s.P_f_n))
    # the m=50 grid is within 1e-6 of the fine grid at its own optimum
    assert s.P_s == pytest.approx(s.P_f_s, abs=1e-5)
    assert s.seconds_s > 0 and s.seconds_n > 0
