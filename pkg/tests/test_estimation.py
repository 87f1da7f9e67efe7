from unittest.mock import patch

import numpy as np
import pytest
import scipy.linalg

from vcam.errors import ConfigurationError, EstimationError
from vcam.estimation import (
    EstimationConfig,
    admissible_pairs,
    bic,
    build_covariate_bases,
    build_time_bases,
    centered_columns,
    fit_three_step,
    resolve_anchors,
    roughness_penalty,
    select_by_bic,
    step1_gamma,
    step2_alpha,
    step3_beta,
)
from vcam.model import ComponentFunction, ComponentKind, TimeSeriesDataset, normalize
from vcam.numerics import RngStream
from vcam.simulation import covariate_grid, generate_example1


K = 3
ORDER = 3


def covariates(T, p, seed):
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(T, p))


def spline_betas(data, seed, scale=1.0):
    """
    Additive functions inside the spline space the estimator builds for `data`.
    """
    rng = np.random.default_rng(seed)
    bases = build_covariate_bases(data, ORDER, K)
    anchors = resolve_anchors(data)
    return [
        ComponentFunction(
            basis=basis, coeffs=scale * rng.normal(size=basis.dimension), kind=ComponentKind.ADDITIVE, anchor=a
        )
        for basis, a in zip(bases, anchors)
    ]


def spline_alphas(p, seed):
    """
    Unit-norm, nonnegative-mean varying coefficients inside the time spline space.
    """
    rng = np.random.default_rng(seed)
    bases = build_time_bases(p + 1, ORDER, K)
    delta = [
        ComponentFunction(
            basis=basis, coeffs=2.0 + 0.5 * rng.normal(size=basis.dimension), kind=ComponentKind.VARYING_COEFFICIENT
        )
        for basis in bases
    ]
    return normalize(delta).alpha


def noiseless_constant_alpha(T=480, p=2, seed=0):
    """
    y = 1.5 + sum_k beta_k(x_k) with beta_k in the spline space: every
    Step-I group is an exact additive model.
    """
    x = covariates(T, p, seed)
    data = TimeSeriesDataset(y=np.zeros(T), x=x)
    betas = spline_betas(data, seed + 1)
    y = 1.5 + sum(beta(x[:, k]) for k, beta in enumerate(betas))
    return TimeSeriesDataset(y=y, x=x), betas


def example1(T=300, seed=11):
    return generate_example1(T, RngStream(seed, 0)).data


def test_config_validation_names_key():
    with pytest.raises(ConfigurationError) as exc_info:
        EstimationConfig(k_grid=())
    assert exc_info.value.key == 'estimation.K_grid'
    with pytest.raises(ConfigurationError):
        EstimationConfig(order_step2=0)
    with pytest.raises(ConfigurationError):
        EstimationConfig(extra_rounds=-1)
    with pytest.raises(ConfigurationError) as exc_info:
        EstimationConfig(step1_smoothing=-1e-3)
    assert exc_info.value.key == 'estimation.step1_smoothing'


def test_admissible_pairs_respect_divisibility_and_size():
    """
    Only segment lengths dividing T that leave more rows than spline columns
    survive; ordered by K then I.
    """
    config = EstimationConfig(k_grid=(3, 8), i_grid=(7, 20, 25, 30, 60))
    pairs = admissible_pairs(600, 2, config)
    assert pairs == [(20, 3), (25, 3), (30, 3), (60, 3), (25, 8), (30, 8), (60, 8)]


def test_anchor_moves_to_midpoint_outside_range():
    x = np.column_stack([np.linspace(-1.0, 1.0, 20), np.linspace(2.0, 4.0, 20)])
    data = TimeSeriesDataset(y=np.zeros(20), x=x)
    assert resolve_anchors(data, 0.0) == [0.0, 3.0]


def test_step1_rejects_bad_segments():
    data, _ = noiseless_constant_alpha()
    bases = build_covariate_bases(data, ORDER, K)
    anchors = resolve_anchors(data)
    with pytest.raises(EstimationError):
        step1_gamma(data, 7, bases, anchors)
    with pytest.raises(EstimationError):
        step1_gamma(data, 12, bases, anchors)


def test_step1_single_group_is_plain_additive_fit():
    """
    With one group the averaged coefficients are those of one additive fit.
    """
    data = example1(T=200)
    bases = build_covariate_bases(data, ORDER, K)
    anchors = resolve_anchors(data)
    result = step1_gamma(data, 200, bases, anchors)
    assert result.group_count == 1

    design = np.column_stack([np.ones(200)] + [centered_columns(b, data.x[:, k], anchors[k]) for k, b in enumerate(bases)])
    coef = np.linalg.lstsq(design, data.y, rcond=None)[0]
    fitted = coef[0] + sum(g(data.x[:, k]) for k, g in enumerate(result.gamma))
    np.testing.assert_allclose(fitted, design @ coef, atol=1e-8)
    assert result.intercepts[0] == pytest.approx(coef[0], abs=1e-8)


def test_step1_averages_group_fits():
    """
    gamma_k equals the average of the per-group additive fits.
    """
    data = example1(T=300)
    bases = build_covariate_bases(data, ORDER, K)
    anchors = resolve_anchors(data)
    result = step1_gamma(data, 50, bases, anchors)
    assert result.group_count == 6

    design = np.column_stack([np.ones(300)] + [centered_columns(b, data.x[:, k], anchors[k]) for k, b in enumerate(bases)])
    per_group = [np.linalg.lstsq(design[s:s + 50], data.y[s:s + 50], rcond=None)[0] for s in range(0, 300, 50)]
    averaged = np.mean(per_group, axis=0)
    width = bases[0].dimension - 1
    grid = np.linspace(*data.covariate_ranges[0], 25)
    expected = centered_columns(bases[0], grid, anchors[0]) @ averaged[1:1 + width]
    np.testing.assert_allclose(result.gamma[0](grid), expected, atol=1e-8)


def test_step1_averaging_scales_pooled_coefficients():
    """
    With y = c_s + sum_k C_ks h_k(x_k) on group s and no noise, the averaged
    group coefficients are (sum_s C_ks / N_T) times the coefficients of h_k.
    """
    T, p, I = 480, 2, 60
    x = covariates(T, p, 21)
    data0 = TimeSeriesDataset(y=np.zeros(T), x=x)
    h = spline_betas(data0, 22)
    rng = np.random.default_rng(23)
    C = rng.uniform(0.5, 2.0, size=(p, T // I))
    group = np.arange(T) // I
    y = rng.normal(size=T // I)[group] + sum(C[k, group] * h[k](x[:, k]) for k in range(p))
    data = TimeSeriesDataset(y=y, x=x)

    bases = build_covariate_bases(data, ORDER, K)
    anchors = resolve_anchors(data)
    result = step1_gamma(data, I, bases, anchors, EstimationConfig().step1_smoothing)
    assert result.noise_variance < 1e-20
    for k in range(p):
        columns = centered_columns(bases[k], x[:, k], anchors[k])
        pooled = np.linalg.lstsq(columns, h[k](x[:, k]), rcond=None)[0]
        np.testing.assert_allclose(result.gamma[k].coeffs[1:], C[k].mean() * pooled, atol=1e-8)


def test_step1_smoothing_solves_penalized_group_problems():
    """
    Each group solves (X'X + s * sigma2 * Omega) h = X'y, sigma2 being the
    pooled residual variance of the unpenalized group fits.
    """
    data = example1(T=300)
    bases = build_covariate_bases(data, ORDER, K)
    anchors = resolve_anchors(data)
    result = step1_gamma(data, 50, bases, anchors, 1e-2)

    design = np.column_stack([np.ones(300)] + [centered_columns(b, data.x[:, k], anchors[k]) for k, b in enumerate(bases)])
    groups = [slice(s, s + 50) for s in range(0, 300, 50)]
    rss, dof = 0.0, 0
    for g in groups:
        coef = np.linalg.lstsq(design[g], data.y[g], rcond=None)[0]
        rss += np.sum((data.y[g] - design[g] @ coef) ** 2)
        dof += 50 - np.linalg.matrix_rank(design[g])
    sigma2 = rss / dof
    assert result.noise_variance == pytest.approx(sigma2, rel=1e-8)

    omega = 1e-2 * sigma2 * scipy.linalg.block_diag(np.zeros((1, 1)), *(roughness_penalty(b) for b in bases))
    per_group = [
        np.linalg.solve(design[g].T @ design[g] + omega, design[g].T @ data.y[g]) for g in groups
    ]
    np.testing.assert_allclose(result.intercepts, [c[0] for c in per_group], atol=1e-8)
    width = bases[0].dimension - 1
    averaged = np.mean(per_group, axis=0)
    np.testing.assert_allclose(result.gamma[0].coeffs[1:], averaged[1:1 + width], atol=1e-8)


def test_step1_smoothing_lowers_roughness_of_single_group_fit():
    """
    A penalized fit is never rougher than the unpenalized one; with a single
    group this carries over to gamma.
    """
    data = example1(T=40, seed=12)
    bases = build_covariate_bases(data, ORDER, K)
    anchors = resolve_anchors(data)

    def roughness(result):
        return sum(g.coeffs[1:] @ roughness_penalty(b) @ g.coeffs[1:] for g, b in zip(result.gamma, bases))

    plain = step1_gamma(data, 40, bases, anchors, 0.0)
    smoothed = step1_gamma(data, 40, bases, anchors, 1e-2)
    assert roughness(smoothed) <= roughness(plain) * (1 + 1e-9)


def test_step1_recovers_example1_shapes():
    """
    Groups of 25 autocorrelated observations cover only part of each
    covariate's range; gamma_k still tracks beta_k.
    """
    correlations = []
    for seed in range(10):
        simulated = generate_example1(600, RngStream(seed, 0))
        data = simulated.data
        bases = build_covariate_bases(data, ORDER, 4)
        anchors = resolve_anchors(data)
        result = step1_gamma(data, 25, bases, anchors, EstimationConfig().step1_smoothing)
        for k, beta in enumerate(simulated.truth.design.beta):
            grid = covariate_grid(data.x[:, k])
            correlations.append(np.corrcoef(result.gamma[k](grid), beta(grid))[0, 1])
    assert min(correlations) > 0.0
    assert np.median(correlations) > 0.9


def test_step1_gamma_vanishes_at_anchor():
    data = example1(T=300)
    anchors = resolve_anchors(data)
    result = step1_gamma(data, 50, build_covariate_bases(data, ORDER, K), anchors)
    for g, a in zip(result.gamma, anchors):
        assert g(a) == 0.0


def test_noiseless_exact_recovery():
    """
    Constant alphas and in-space betas without noise are recovered exactly
    by all three steps.
    """
    data, betas = noiseless_constant_alpha()
    fit = fit_three_step(data, EstimationConfig(), 48, K)
    assert fit.rss < 1e-10 * data.T
    grid_u = np.linspace(0.0, 1.0, 11)
    np.testing.assert_allclose(fit.alpha[0](grid_u), 1.5, atol=1e-6)
    for k, beta in enumerate(betas):
        np.testing.assert_allclose(fit.alpha[k + 1](grid_u), 1.0, atol=1e-6)
        x = np.linspace(*data.covariate_ranges[k], 21)
        np.testing.assert_allclose(fit.beta[k](x) * fit.alpha[k + 1](0.5), beta(x), atol=1e-6)
    np.testing.assert_allclose(fit.fitted(data), data.y, atol=1e-6)


def test_step2_oracle_recovers_spline_alphas():
    """
    With the true additive functions plugged in, Step II recovers in-space
    varying coefficients exactly.
    """
    T, p = 300, 2
    x = covariates(T, p, 3)
    data0 = TimeSeriesDataset(y=np.zeros(T), x=x)
    betas = spline_betas(data0, 4)
    alphas = spline_alphas(p, 5)
    u = data0.rescaled_time
    y = alphas[0](u) + sum(alphas[k](u) * betas[k - 1](x[:, k - 1]) for k in (1, 2))
    data = TimeSeriesDataset(y=y, x=x)

    alpha_hat, scales = step2_alpha(data, betas, build_time_bases(p + 1, ORDER, K))
    grid = np.linspace(0.0, 1.0, 41)
    for est, truth in zip(alpha_hat, alphas):
        np.testing.assert_allclose(est(grid), truth(grid), atol=1e-6)
    np.testing.assert_allclose(scales, 1.0, atol=1e-6)


def test_step3_oracle_recovers_spline_betas():
    T, p = 300, 2
    x = covariates(T, p, 6)
    data0 = TimeSeriesDataset(y=np.zeros(T), x=x)
    betas = spline_betas(data0, 7)
    alphas = spline_alphas(p, 8)
    u = data0.rescaled_time
    y = alphas[0](u) + sum(alphas[k](u) * betas[k - 1](x[:, k - 1]) for k in (1, 2))
    data = TimeSeriesDataset(y=y, x=x)

    beta_hat = step3_beta(data, alphas, build_covariate_bases(data, ORDER, K), resolve_anchors(data))
    for k, (est, truth) in enumerate(zip(beta_hat, betas)):
        grid = np.linspace(*data.covariate_ranges[k], 31)
        np.testing.assert_allclose(est(grid), truth(grid), atol=1e-6)
        assert est(0.0) == 0.0


def test_step3_pure_intercept_data():
    """
    Data equal to the intercept curve leave nothing for the additive terms.
    """
    T, p = 200, 2
    x = covariates(T, p, 9)
    alphas = spline_alphas(p, 10)
    data = TimeSeriesDataset(y=alphas[0](np.arange(1, T + 1) / T), x=x)
    beta_hat = step3_beta(data, alphas, build_covariate_bases(data, ORDER, K), resolve_anchors(data))
    for beta in beta_hat:
        assert np.max(np.abs(beta.coeffs)) < 1e-8


def test_fit_records_diagnostics_and_refit_not_worse():
    """
    The Step-III refit never has a larger RSS than the Step-II model with
    gamma-hat plugged in.
    """
    data = example1(T=300)
    fit = fit_three_step(data, EstimationConfig(), 25, 4)
    assert fit.segment_length == 25
    assert fit.knot_count == 4
    assert fit.diagnostics['group_count'] == 12
    assert fit.diagnostics['step1_noise_variance'] > 0.0
    assert fit.rss == pytest.approx(fit.residual_sum_of_squares(data))
    assert fit.rss <= fit.diagnostics['step2_rss'] * (1 + 1e-9) + 1e-9
    for alpha in fit.alpha[1:]:
        assert alpha.l2_norm() == pytest.approx(1.0, abs=1e-8)
        assert alpha.mean() >= 0.0
    for beta in fit.beta:
        assert beta(beta.anchor) == 0.0


def test_fit_rejects_inadmissible_pair():
    with pytest.raises(EstimationError):
        fit_three_step(example1(T=300), EstimationConfig(), 10, 4)


def test_permuting_covariates_permutes_fit():
    data = example1(T=300)
    fit = fit_three_step(data, EstimationConfig(), 25, 4)
    swapped = fit_three_step(data.permuted([1, 0]), EstimationConfig(), 25, 4)
    for k, j in ((0, 1), (1, 0)):
        np.testing.assert_allclose(swapped.beta[j].coeffs, fit.beta[k].coeffs, atol=1e-8)
        np.testing.assert_allclose(swapped.alpha[j + 1].coeffs, fit.alpha[k + 1].coeffs, atol=1e-8)
    np.testing.assert_allclose(swapped.fitted(data.permuted([1, 0])), fit.fitted(data), atol=1e-8)


def test_extra_rounds_keep_constraints():
    data = example1(T=300)
    fit = fit_three_step(data, EstimationConfig(extra_rounds=2), 25, 4)
    for alpha in fit.alpha[1:]:
        assert alpha.l2_norm() == pytest.approx(1.0, abs=1e-8)
    assert np.isfinite(fit.rss)


def test_bic_penalty_grows_with_basis_size():
    """
    For equal RSS the larger basis has the larger BIC while T / J > e.
    """
    assert bic(10.0, 600, 2, 6) < bic(10.0, 600, 2, 7)
    assert bic(10.0, 600, 2, 6) == pytest.approx(np.log(10.0 / 600) + 2 * np.log(100) / 100)


def test_select_single_pair():
    data = example1(T=300)
    config = EstimationConfig(k_grid=(4,), i_grid=(25,))
    selection = select_by_bic(data, config)
    assert (selection.segment_length, selection.knot_count) == (25, 4)
    assert selection.fit.diagnostics['bic'] == pytest.approx(selection.table[0]['bic'])


def test_select_ties_prefer_small_k_then_small_i():
    data = example1(T=300)
    config = EstimationConfig(k_grid=(3, 4), i_grid=(25, 30))
    with patch('vcam.estimation.bic', return_value=0.0):
        selection = select_by_bic(data, config, threads=2)
    assert (selection.segment_length, selection.knot_count) == (25, 3)
    assert len(selection.table) == 4


def test_select_same_result_any_thread_count():
    data = example1(T=300)
    config = EstimationConfig(k_grid=(3, 4, 5), i_grid=(20, 25, 30))
    one = select_by_bic(data, config, threads=1)
    many = select_by_bic(data, config, threads=4)
    assert (one.segment_length, one.knot_count) == (many.segment_length, many.knot_count)
    assert one.table == many.table


def test_select_without_admissible_pairs():
    with pytest.raises(EstimationError):
        select_by_bic(example1(T=300), EstimationConfig(i_grid=(7, 11)))
