import numba
import numpy as np
import pytest
from scipy import stats

from trialdesign import (SCENARIOS, EffectPrior, GridConfig, McConfig, NestedDesign,
                         ValidationError, build_prior, design_for, power_convolution,
                         power_fine_grid, power_grid_sum, power_monte_carlo)
from trialdesign._kernels import set_workers
from trialdesign.constraint import fwer, solve_alpha_n
from trialdesign.errors import WorkBudgetError

PAPER_BOUND = 1.19e-9


def _problem(scenario, r):
    design = design_for(r, SCENARIOS[scenario])
    return design, build_prior(design, SCENARIOS[scenario])


def _random_valid_alpha(design, gen):
    while True:
        free = gen.uniform(0, design.alpha0, design.n - 1)
        last = solve_alpha_n(design, free)
        if last is not None:
            return np.append(free, last)


@pytest.fixture(scope="module")
def single():
    design = NestedDesign([1.0], 127)
    prior = EffectPrior([0.287682], [np.sqrt(0.05)], [[0.05]])
    closed = stats.norm.cdf((np.sqrt(127) * 0.287682 - 1.959964) / np.sqrt(1 + 127 * 0.05))
    return design, prior, closed


def test_convolution_matches_scalar_identity(single):
    design, prior, closed = single
    assert power_convolution(design, prior, [0.025]).value == pytest.approx(closed, abs=1e-6)


def test_fine_grid_single_population(single):
    design, prior, closed = single
    assert power_fine_grid(design, prior, [0.025]).value == pytest.approx(closed, abs=1e-3)
    assert power_fine_grid(design, prior, [0.025]).value == pytest.approx(0.6847, abs=5e-3)


def test_monte_carlo_single_population_conservative(single):
    design, prior, closed = single
    cfg = McConfig()
    est = power_monte_carlo(design, prior, [0.025], cfg)
    assert est.method == "monte-carlo"
    assert est.variance_bound == pytest.approx(PAPER_BOUND, rel=5e-3)
    assert abs(est.value - closed) <= 3 * np.sqrt(cfg.conservative_variance_bound)


@pytest.mark.xfail(reason="the 1/(4 N1 N2) bound ignores indicators that share an outer "
                          "draw; observed spread is ~100x larger (see README)", strict=True)
def test_monte_carlo_single_population_paper_bound(single):
    design, prior, closed = single
    est = power_monte_carlo(design, prior, [0.025], McConfig(seed=3))
    assert abs(est.value - closed) <= 3 * np.sqrt(est.variance_bound + 1e-12)


def test_null_prior_gives_fwer():
    design = NestedDesign([1, 0.5, 0.25], 127)
    alpha = [0.01, 0.01, 0.0]
    alpha[2] = solve_alpha_n(design, alpha[:2])
    prior = EffectPrior.point_mass(np.zeros(3))
    assert power_grid_sum(design, prior, alpha).value == pytest.approx(0.025, abs=1e-6)
    cfg = McConfig(n1=64, n2=20480)
    mc = power_monte_carlo(design, prior, alpha, cfg).value
    assert abs(mc - 0.025) <= 4 * np.sqrt(0.025 * 0.975 / cfg.n2)


def test_zero_alpha_has_no_power():
    design, prior = _problem("c", (1, 0.5, 0.25))
    zero = np.zeros(3)
    assert power_monte_carlo(design, prior, zero, McConfig(1024, 1024)).value == 0.0
    assert power_grid_sum(design, prior, zero).value == pytest.approx(0.0, abs=1e-12)
    assert power_convolution(design, prior, zero).value == pytest.approx(0.0, abs=1e-12)


def test_grid_refinement(single):
    design, prior, _ = single
    closed = power_convolution(design, prior, [0.025], tol=1e-14).value
    errs = [abs(power_grid_sum(design, prior, [0.025], GridConfig(m=m)).value - closed)
            for m in (2, 5, 10, 20, 50, 500)]
    assert errs[0] > 1e-3
    # decreasing until the +-5 sigma truncation floor (~1e-7) is reached
    assert np.all(np.diff(errs[:5]) < 0)
    assert errs[-1] <= errs[-2] + 1e-8 and errs[-1] < 2e-7


@pytest.mark.parametrize("scenario, r", [("c", (1, 0.446, 0.168)), ("b", (1, 0.6)),
                                         ("a", (1, 0.5, 0.25))])
def test_grid_sum_against_convolution(scenario, r):
    # the grid sum and the closed form share no code beyond the CDF routines
    design, prior = _problem(scenario, r)
    gen = np.random.default_rng(len(r))
    for _ in range(3):
        alpha = _random_valid_alpha(design, gen)
        exact = power_convolution(design, prior, alpha).value
        assert power_grid_sum(design, prior, alpha).value == pytest.approx(exact, abs=1e-5)


def test_fine_grid_three_populations():
    design, prior = _problem("c", (1, 0.446, 0.168))
    alpha = [0.0015, 0.0145, 0.0127]
    exact = power_convolution(design, prior, alpha).value
    assert power_fine_grid(design, prior, alpha).value == pytest.approx(exact, abs=1e-6)


def test_generic_grid_path_matches_fast_path():
    # a prior whose correlation is not nested forces the generic tensor loop
    design = NestedDesign([1, 0.5, 0.25], 127)
    cov = np.diag([0.05, 0.1, 0.2])
    prior = EffectPrior([0.2, 0.25, 0.3], np.sqrt(np.diag(cov)), cov)
    alpha = [0.01, 0.01, 0.0109]
    grid = power_grid_sum(design, prior, alpha, GridConfig(m=30)).value
    assert grid == pytest.approx(power_convolution(design, prior, alpha).value, abs=2e-4)


@pytest.mark.parametrize("scenario, r", [("b", (1, 0.5, 0.25)), ("c", (1, 0.6))])
def test_monte_carlo_unbiased_within_conservative_bound(scenario, r):
    design, prior = _problem(scenario, r)
    gen = np.random.default_rng(11)
    cfg = McConfig(4096, 8192)
    for k in range(5):
        alpha = _random_valid_alpha(design, gen)
        mc = power_monte_carlo(design, prior, alpha, McConfig(4096, 8192, seed=k)).value
        exact = power_convolution(design, prior, alpha).value
        assert abs(mc - exact) <= 4 * np.sqrt(cfg.conservative_variance_bound)


@pytest.mark.parametrize("n", [
    pytest.param(2, marks=pytest.mark.xfail(
        reason="agreement band built on the 1/(4 N1 N2) bound; the estimator's outer-sample "
               "variance is ~1e-5 (see README)", strict=True)),
    3])
def test_estimator_agreement_invariant(n):
    design, prior = _problem("c", (1, 0.5, 0.25)[:n])
    gen = np.random.default_rng(n)
    cfg = McConfig()
    for k in range(20):
        alpha = _random_valid_alpha(design, gen)
        mc = power_monte_carlo(design, prior, alpha, McConfig(seed=k)).value
        # the m=50 grid is within 1e-6 of the fine grid here (see test above)
        ref = power_convolution(design, prior, alpha).value
        assert abs(mc - ref) <= 4 * np.sqrt(cfg.variance_bound) + 2e-3


def test_monotone_in_alpha():
    design, prior = _problem("b", (1, 0.5, 0.25))
    base = np.array([0.005, 0.005, 0.005])
    p0 = power_grid_sum(design, prior, base).value
    for i in range(3):
        bumped = base.copy()
        bumped[i] += 0.004
        assert power_grid_sum(design, prior, bumped).value >= p0
        assert power_convolution(design, prior, bumped).value >= power_convolution(
            design, prior, base).value


def test_monotone_in_effect():
    design, prior = _problem("b", (1, 0.5, 0.25))
    alpha = [0.01, 0.008, 0.0095]
    shifted = EffectPrior(prior.theta + 0.02, prior.sigma, prior.cov)
    assert power_fine_grid(design, shifted, alpha).value > power_fine_grid(design, prior, alpha).value


def test_monte_carlo_deterministic_across_threads():
    design, prior = _problem("c", (1, 0.5, 0.25))
    alpha = [0.005, 0.01, 0.0122]
    cfg = McConfig(2048, 4096, seed=9)
    values = []
    for w in sorted({1, numba.config.NUMBA_NUM_THREADS}):
        set_workers(w)
        values.append(power_monte_carlo(design, prior, alpha, cfg).value)
    set_workers()
    values.append(power_monte_carlo(design, prior, alpha, cfg).value)
    assert len(set(values)) == 1
    assert power_monte_carlo(design, prior, alpha, McConfig(2048, 4096, seed=10)).value != values[0]


def test_point_mass_monte_carlo_matches_cdf():
    design = NestedDesign([1, 0.5], 127)
    prior = EffectPrior.point_mass([0.1, 0.15])
    alpha = [0.015, 0.0125]
    exact = power_convolution(design, prior, alpha).value
    cfg = McConfig(16, 2 ** 17)
    assert abs(power_monte_carlo(design, prior, alpha, cfg).value - exact) <= 4 * np.sqrt(0.25 / cfg.n2)
    assert power_grid_sum(design, prior, alpha).value == pytest.approx(exact, abs=1e-9)


def test_validation():
    design, prior = _problem("a", (1, 0.5))
    with pytest.raises(ValidationError):
        power_monte_carlo(design, prior, [0.01, 0.01, 0.01])
    with pytest.raises(ValidationError):
        power_grid_sum(design, prior, [0.03, 0.0])
    with pytest.raises(ValidationError):
        McConfig(n1=0)
    with pytest.raises(WorkBudgetError):
        power_grid_sum(design, prior, [0.01, 0.01], GridConfig(m=50, max_evaluations=100))


def test_fwer_consistent_with_null_power():
    design = NestedDesign([1, 0.7, 0.3], 150)
    alpha = [0.012, 0.006, 0.009]
    prior = EffectPrior.point_mass(np.zeros(3))
    assert power_convolution(design, prior, alpha).value == pytest.approx(fwer(design, alpha),
                                                                          abs=1e-9)
