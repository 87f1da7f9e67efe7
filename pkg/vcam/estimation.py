"""
Three-step spline estimation.

Step I    split time into N_T blocks of I_T observations, fit an additive
          model in each block and average the additive coefficients: this
          recovers gamma_k = w_k * beta_k.
Step II   plug gamma_k in and fit the varying coefficients by least squares,
          then normalize them.
Step III  plug the normalized alpha_k in and refit beta_k.

(I_T, K) are chosen by BIC over a grid.
"""
import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from vcam.errors import ConfigurationError, DegenerateComponentError, EstimationError, VcamError
from vcam.extratypes import FloatArray
from vcam.model import ComponentFunction, ComponentKind, TimeSeriesDataset, VcamFit, normalize
from vcam.nonblocking.threadpool import ordered_map
from vcam.numerics import RCOND, least_squares, least_squares_with_rank, penalized_least_squares
from vcam.splines import KnotPlacement, SplineBasis, SplineSpec, build_basis


logger = logging.getLogger(__name__)

# callable of one array argument, e.g. a ComponentFunction or a true function
UnivariateFunction = Callable[[FloatArray], FloatArray]


@dataclass(frozen=True)
class EstimationConfig:
    """
    Spline orders per step, the (K, I_T) search grids and the anchor at
    which additive components are pinned to zero. K is shared by every
    component function.
    """
    order_step1: int = 3
    order_step2: int = 3
    order_step3: int = 3
    k_grid: tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    i_grid: tuple[int, ...] = (20, 25, 30, 40, 50, 60)
    anchor: float = 0.0
    covariate_placement: KnotPlacement = KnotPlacement.QUANTILE
    extra_rounds: int = 0
    step1_smoothing: float = 1e-4

    def __post_init__(self) -> None:
        for name in ('order_step1', 'order_step2', 'order_step3'):
            if getattr(self, name) < 1:
                raise ConfigurationError('estimation.{}'.format(name), 'spline order must be >= 1')
        if not self.k_grid or min(self.k_grid) < 0:
            raise ConfigurationError('estimation.K_grid', 'must be a non-empty set of counts >= 0')
        if not self.i_grid or min(self.i_grid) < 1:
            raise ConfigurationError('estimation.I_grid', 'must be a non-empty set of lengths >= 1')
        if self.extra_rounds < 0:
            raise ConfigurationError('estimation.extra_rounds', 'must be >= 0')
        if not self.step1_smoothing >= 0:
            raise ConfigurationError('estimation.step1_smoothing', 'must be >= 0')
        object.__setattr__(self, 'k_grid', tuple(sorted(set(int(k) for k in self.k_grid))))
        object.__setattr__(self, 'i_grid', tuple(sorted(set(int(i) for i in self.i_grid))))


@dataclass(frozen=True, eq=False)
class Step1Result:
    gamma: tuple[ComponentFunction, ...]
    group_count: int
    intercepts: FloatArray
    rank_deficient_groups: int = 0
    noise_variance: float = float('nan')


class BicSelection(NamedTuple):
    segment_length: int
    knot_count: int
    fit: VcamFit
    table: list[dict]


def admissible_pairs(T: int, p: int, config: EstimationConfig) -> list[tuple[int, int]]:
    """
    (I, K) pairs with I dividing T and 1 + (K + m_1) p < I, ordered by K then I.
    """
    return [
        (I, K)
        for K in config.k_grid
        for I in config.i_grid
        if I <= T and T % I == 0 and 1 + (K + config.order_step1) * p < I
    ]


def resolve_anchors(data: TimeSeriesDataset, anchor: float = 0.0) -> list[float]:
    """
    The configured anchor for every covariate whose observed range contains
    it, the range midpoint otherwise.
    """
    anchors = []
    for k, (lo, hi) in enumerate(data.covariate_ranges, start=1):
        if lo <= anchor <= hi:
            anchors.append(float(anchor))
        else:
            mid = 0.5 * (lo + hi)
            logger.info('anchor %g outside range of x%d [%g, %g], using midpoint %g', anchor, k, lo, hi, mid)
            anchors.append(mid)
    return anchors


def build_time_bases(count: int, order: int, knot_count: int) -> list[SplineBasis]:
    basis = build_basis(SplineSpec(order=order, interior_count=knot_count, domain=(0.0, 1.0)))
    return [basis] * count


def build_covariate_bases(
    data: TimeSeriesDataset, order: int, knot_count: int, placement: KnotPlacement = KnotPlacement.QUANTILE
) -> list[SplineBasis]:
    """
    One basis per covariate on its full-sample observed range; the same
    basis serves every Step-I group.
    """
    bases = []
    for k, (lo, hi) in enumerate(data.covariate_ranges):
        if not lo < hi:
            raise EstimationError('covariate x{} is constant, cannot build a spline basis'.format(k + 1))
        spec = SplineSpec(
            order=order,
            interior_count=knot_count,
            domain=(lo, hi),
            placement=placement,
            sample=data.x[:, k],
        )
        bases.append(build_basis(spec))
    return bases


def centered_columns(basis: SplineBasis, x: FloatArray, anchor: float) -> FloatArray:
    """
    Centered scaled basis without its first column. The centered functions
    sum to zero, so dropping one keeps the span and makes the block full rank.
    """
    return basis.centered_design(x, anchor)[:, 1:]


def pad_centered(coef: FloatArray) -> FloatArray:
    return np.concatenate(([0.0], coef))


def _split(coef: FloatArray, widths: Sequence[int]) -> list[FloatArray]:
    return np.split(coef, np.cumsum(widths)[:-1]) if widths else []


def roughness_penalty(basis: SplineBasis) -> FloatArray:
    """
    Integrated squared derivative of order min(2, order - 1) over the centered
    columns of `basis`, times width^(2d - 1) of its domain.
    """
    d = min(2, basis.order - 1)
    lo, hi = basis.domain
    return (hi - lo) ** (2 * d - 1) * np.asarray(basis.derivative_gram(d).values)[1:, 1:]


def step1_gamma(
    data: TimeSeriesDataset,
    segment_length: int,
    bases: Sequence[SplineBasis],
    anchors: Sequence[float],
    smoothing: float = 0.0,
) -> Step1Result:
    """
    Groupwise additive fits on consecutive blocks of `segment_length`
    observations; gamma_k takes the block-averaged coefficients.

    With `smoothing` > 0 every group is refit with a roughness penalty
    `smoothing * sigma2 * roughness_penalty(basis)` on each additive block,
    sigma2 being the pooled residual variance of the unpenalized group fits.
    """
    T, p = data.T, data.p
    if segment_length < 1 or T % segment_length:
        raise EstimationError('segment length {} does not divide T = {}'.format(segment_length, T))
    if smoothing < 0:
        raise EstimationError('Step-I smoothing must be >= 0, got {}'.format(smoothing))
    n_basis = sum(basis.dimension for basis in bases)
    if segment_length <= 1 + n_basis:
        raise EstimationError(
            'segment length {} too short for {} spline columns plus an intercept'.format(segment_length, n_basis)
        )

    blocks = [centered_columns(bases[k], data.x[:, k], anchors[k]) for k in range(p)]
    design = np.column_stack([np.ones(T)] + blocks)
    n_cols = design.shape[1]
    group_count = T // segment_length
    groups = [slice(s * segment_length, (s + 1) * segment_length) for s in range(group_count)]

    coefs = np.zeros((group_count, n_cols))
    deficient = 0
    rss = 0.0
    dof = 0
    for s, rows in enumerate(groups):
        coefs[s], rank = least_squares_with_rank(design[rows], data.y[rows])
        if rank < n_cols:
            deficient += 1
        rss += float(np.sum((data.y[rows] - design[rows] @ coefs[s]) ** 2))
        dof += segment_length - rank
    if deficient:
        logger.warning('%d of %d Step-I groups are rank deficient', deficient, group_count)
    noise_variance = rss / dof

    if smoothing > 0 and p and noise_variance > RCOND * float(np.mean(data.y ** 2)):
        omega = scipy.linalg.block_diag(
            np.zeros((1, 1)), *(roughness_penalty(basis) for basis in bases)
        ) * (smoothing * noise_variance)
        for s, rows in enumerate(groups):
            coefs[s] = penalized_least_squares(design[rows], data.y[rows], omega)
        logger.debug('Step-I groups refit with roughness weight %g', smoothing * noise_variance)

    averaged = coefs.mean(axis=0)
    gamma = tuple(
        ComponentFunction(
            basis=bases[k], coeffs=pad_centered(h), kind=ComponentKind.ADDITIVE, anchor=anchors[k]
        )
        for k, h in enumerate(_split(averaged[1:], [b.shape[1] for b in blocks]))
    )
    return Step1Result(
        gamma=gamma,
        group_count=group_count,
        intercepts=coefs[:, 0],
        rank_deficient_groups=deficient,
        noise_variance=noise_variance,
    )


def _gamma_functions(gamma: Step1Result | Sequence[UnivariateFunction]) -> Sequence[UnivariateFunction]:
    return gamma.gamma if isinstance(gamma, Step1Result) else gamma


def step2_alpha(
    data: TimeSeriesDataset,
    gamma: Step1Result | Sequence[UnivariateFunction],
    bases_C: Sequence[SplineBasis],
) -> tuple[tuple[ComponentFunction, ...], FloatArray]:
    """
    Varying-coefficient fit of y on [Phi_0(u), gamma_k(x_k) Phi_k(u)],
    normalized to unit-norm, nonnegative-mean alpha_k.

    `gamma` may be the Step-I result or any callables (true beta_k for the
    oracle estimator, beta-hat for extra rounds).
    """
    functions = _gamma_functions(gamma)
    u = data.rescaled_time
    columns = [bases_C[0].eval_scaled(u)]
    for k, g in enumerate(functions, start=1):
        values = np.asarray(g(data.x[:, k - 1]), dtype=np.float64)
        if not np.sqrt(np.mean(values ** 2)) > 1e-10:
            raise DegenerateComponentError(k, 'plug-in additive function {} is identically zero'.format(k))
        columns.append(values[:, np.newaxis] * bases_C[k].eval_scaled(u))

    coef = least_squares(np.column_stack(columns), data.y)
    delta = [
        ComponentFunction(basis=bases_C[k], coeffs=block, kind=ComponentKind.VARYING_COEFFICIENT)
        for k, block in enumerate(_split(coef, [c.shape[1] for c in columns]))
    ]
    normalized = normalize(delta)
    return normalized.alpha, normalized.scales


def step3_beta(
    data: TimeSeriesDataset,
    alpha: Sequence[UnivariateFunction],
    bases_A: Sequence[SplineBasis],
    anchors: Sequence[float],
) -> tuple[ComponentFunction, ...]:
    """
    Additive refit of y - alpha_0(u) on [alpha_k(u) psi-bar_k(x_k)].
    """
    if data.p == 0:
        return ()
    u = data.rescaled_time
    response = data.y - alpha[0](u)
    columns = [
        np.asarray(alpha[k](u))[:, np.newaxis] * centered_columns(bases_A[k - 1], data.x[:, k - 1], anchors[k - 1])
        for k in range(1, data.p + 1)
    ]
    coef = least_squares(np.column_stack(columns), response)
    return tuple(
        ComponentFunction(
            basis=bases_A[k], coeffs=pad_centered(f), kind=ComponentKind.ADDITIVE, anchor=anchors[k]
        )
        for k, f in enumerate(_split(coef, [c.shape[1] for c in columns]))
    )


def fit_three_step(
    data: TimeSeriesDataset, config: EstimationConfig, segment_length: int, knot_count: int
) -> VcamFit:
    """
    One pass of Steps I-III (plus `config.extra_rounds` of II-III).
    """
    if 1 + (knot_count + config.order_step1) * data.p >= segment_length:
        raise EstimationError(
            '1 + (K + m1) p < I_T violated for K = {}, I_T = {}'.format(knot_count, segment_length)
        )
    anchors = resolve_anchors(data, config.anchor)
    bases_1 = build_covariate_bases(data, config.order_step1, knot_count, config.covariate_placement)
    if config.order_step3 == config.order_step1:
        bases_3 = bases_1
    else:
        bases_3 = build_covariate_bases(data, config.order_step3, knot_count, config.covariate_placement)
    bases_C = build_time_bases(data.p + 1, config.order_step2, knot_count)

    step1 = step1_gamma(data, segment_length, bases_1, anchors, config.step1_smoothing)
    alpha, scales = step2_alpha(data, step1, bases_C)

    u = data.rescaled_time
    step2_fitted = alpha[0](u)
    for k, g in enumerate(step1.gamma, start=1):
        step2_fitted = step2_fitted + alpha[k](u) * scales[k - 1] * g(data.x[:, k - 1])
    step2_rss = float(np.sum((data.y - step2_fitted) ** 2))

    beta = step3_beta(data, alpha, bases_3, anchors)
    for _ in range(config.extra_rounds):
        alpha, scales = step2_alpha(data, beta, bases_C)
        beta = step3_beta(data, alpha, bases_3, anchors)

    fit = VcamFit(alpha=alpha, beta=beta, scales=scales)
    rss = fit.residual_sum_of_squares(data)
    if bases_3 is bases_1 and not config.extra_rounds and rss > step2_rss * (1 + 1e-9) + 1e-9:
        logger.warning('Step-III RSS %g exceeds Step-II RSS %g', rss, step2_rss)
    return dataclasses.replace(
        fit,
        diagnostics={
            'rss': rss,
            'step2_rss': step2_rss,
            'segment_length': int(segment_length),
            'knot_count': int(knot_count),
            'group_count': step1.group_count,
            'rank_deficient_groups': step1.rank_deficient_groups,
            'step1_noise_variance': step1.noise_variance,
        },
    )


def bic(rss: float, T: int, p: int, basis_dimension: int) -> float:
    """
    log(RSS / T) + p * log(T / J) / (T / J)
    """
    ratio = T / basis_dimension
    with np.errstate(divide='ignore'):
        return float(np.log(rss / T) + p * np.log(ratio) / ratio)


def select_by_bic(data: TimeSeriesDataset, config: EstimationConfig, threads: int | None = None) -> BicSelection:
    """
    Fit every admissible (I, K) and keep the BIC minimizer; ties go to the
    smaller K, then the smaller I.
    """
    pairs = admissible_pairs(data.T, data.p, config)
    if not pairs:
        raise EstimationError(
            'no admissible (I, K) pair for T = {}, p = {} in the configured grids'.format(data.T, data.p)
        )

    def _fit(pair: tuple[int, int]) -> VcamFit | VcamError:
        try:
            return fit_three_step(data, config, *pair)
        except VcamError as e:
            return e

    table = []
    best = None
    for (I, K), fit in zip(pairs, ordered_map(_fit, pairs, threads)):
        if isinstance(fit, VcamError):
            logger.info('(I=%d, K=%d) skipped: %s', I, K, fit)
            table.append({'segment_length': I, 'knot_count': K, 'rss': None, 'bic': None})
            continue
        score = bic(fit.rss, data.T, data.p, K + config.order_step3)
        logger.debug('BIC(I=%d, K=%d) = %.6f', I, K, score)
        table.append({'segment_length': I, 'knot_count': K, 'rss': fit.rss, 'bic': score})
        if best is None or score < best[0]:
            best = (score, I, K, fit)

    if best is None:
        raise EstimationError('every admissible (I, K) pair failed to fit')
    score, I, K, fit = best
    fit = dataclasses.replace(fit, diagnostics=dict(fit.diagnostics, bic=score))
    return BicSelection(segment_length=I, knot_count=K, fit=fit, table=table)
