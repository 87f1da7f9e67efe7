"""
Two-stage SCAD identification of the model structure.

Stage 1 penalizes ||alpha_k'|| with beta-hat held fixed: a zero norm means
alpha_k is constant and term k is purely additive.
Stage 2 penalizes ||beta_k''|| with the stage-1 alpha held fixed: a zero norm
means beta_k is linear and term k is a pure varying-coefficient term.

Both stages minimize a penalized least-squares objective by local quadratic
approximation (a sequence of ridge solves); lambda and mu come from BIC grids.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from vcam.errors import ConfigurationError, PenaltyError, VcamError
from vcam.estimation import centered_columns, pad_centered
from vcam.extratypes import ArrayLike, FloatArray
from vcam.model import ComponentFunction, ComponentKind, TimeSeriesDataset, VcamFit, normalize
from vcam.nonblocking.threadpool import ordered_map
from vcam.numerics import least_squares, ridge_solve


logger = logging.getLogger(__name__)


def default_grid() -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(-3.0, 0.0, 20))


@dataclass(frozen=True)
class PenaltyConfig:
    """
    `knot_exponent` e scales the penalty argument by K^e (K = number of
    interior knots, floored at 1). `threshold_on_scaled_norm` compares
    K^e * norm, rather than the raw norm, against `zero_threshold`.
    """
    a: float = 3.7
    lambda_grid: tuple[float, ...] = field(default_factory=default_grid)
    mu_grid: tuple[float, ...] = field(default_factory=default_grid)
    zero_threshold: float = 1e-6
    lqa_floor: float = 1e-8
    max_iter: int = 50
    coef_tol: float = 1e-4
    knot_exponent: float = -1.5
    threshold_on_scaled_norm: bool = False

    def __post_init__(self) -> None:
        if not self.a > 2:
            raise ConfigurationError('penalty.a', 'SCAD needs a > 2, got {}'.format(self.a))
        for name in ('lambda_grid', 'mu_grid'):
            grid = tuple(sorted(float(v) for v in getattr(self, name)))
            if not grid or grid[0] <= 0:
                raise ConfigurationError('penalty.{}'.format(name), 'must be a non-empty grid of positive values')
            object.__setattr__(self, name, grid)
        if self.zero_threshold <= 0 or self.lqa_floor <= 0:
            raise ConfigurationError('penalty.zero_threshold', 'threshold and LQA floor must be positive')
        if self.max_iter < 1:
            raise ConfigurationError('penalty.max_iter', 'must be >= 1')
        if self.coef_tol <= 0:
            raise ConfigurationError('penalty.coef_tol', 'must be positive')


def _check_scad_args(theta: FloatArray, lam: float, a: float) -> None:
    if np.any(theta < 0):
        raise PenaltyError('SCAD argument must be >= 0, got {}'.format(theta.min()))
    if not lam > 0:
        raise PenaltyError('SCAD tuning parameter must be > 0, got {}'.format(lam))
    if not a > 2:
        raise PenaltyError('SCAD needs a > 2, got {}'.format(a))


def scad_derivative(theta: ArrayLike, lam: float, a: float = 3.7) -> FloatArray | float:
    """
    p'(theta) = lam for theta <= lam, (a * lam - theta)_+ / (a - 1) above.
    """
    arr = np.asarray(theta, dtype=np.float64)
    _check_scad_args(arr, lam, a)
    value = np.where(arr <= lam, lam, np.maximum(a * lam - arr, 0.0) / (a - 1.0))
    return float(value) if arr.ndim == 0 else value


def scad_penalty(theta: ArrayLike, lam: float, a: float = 3.7) -> FloatArray | float:
    """
    The SCAD penalty itself, the integral of `scad_derivative` from 0.
    """
    arr = np.asarray(theta, dtype=np.float64)
    _check_scad_args(arr, lam, a)
    value = np.where(
        arr <= lam,
        lam * arr,
        np.where(
            arr <= a * lam,
            (2.0 * a * lam * arr - arr ** 2 - lam ** 2) / (2.0 * (a - 1.0)),
            0.5 * (a + 1.0) * lam ** 2,
        ),
    )
    return float(value) if arr.ndim == 0 else value


@dataclass(frozen=True, eq=False)
class LqaTrace:
    """
    Per-iteration record of one penalized fit: `objectives[i]` is the exact
    SCAD-penalized objective after iteration i (index 0 is the unpenalized
    start) and `norms[i]` the penalized block norms at that point.
    """
    objectives: list[float]
    norms: list[list[float]]
    converged: bool
    iterations: int


class _LqaSolution(NamedTuple):
    blocks: list[FloatArray]
    norms: FloatArray
    frozen: list[bool]
    trace: LqaTrace


def _block_norms(coef_blocks: Sequence[FloatArray], grams: Sequence[FloatArray | None]) -> FloatArray:
    norms = np.zeros(len(coef_blocks))
    for k, (c, G) in enumerate(zip(coef_blocks, grams)):
        if G is not None:
            norms[k] = np.sqrt(max(float(c @ G @ c), 0.0))
    return norms


def _lqa(
    columns: Sequence[FloatArray],
    grams: Sequence[FloatArray | None],
    response: FloatArray,
    lam: float,
    cfg: PenaltyConfig,
    kappa: float,
    project: Callable[[int, FloatArray], FloatArray],
    forced: Sequence[bool] | None = None,
) -> _LqaSolution:
    """
    Minimize 1/2 ||response - sum_k X_k c_k||^2 + (T / kappa) sum_k p_lam(kappa ||c_k||_G_k)
    over blocks whose Gram `grams[k]` is not None.

    Each iteration solves the ridge system with block weights
    p'(kappa * nu_k) / max(nu_k, floor) * G_k. A block whose norm drops to
    the zero threshold is frozen at `project(k, c_k)` and leaves the system;
    `forced` blocks are frozen from the start.
    """
    T = response.size
    widths = [c.shape[1] for c in columns]
    splits = np.cumsum(widths)[:-1]
    penalized = [G is not None for G in grams]

    def objective(blocks: Sequence[FloatArray], norms: FloatArray) -> float:
        fitted = sum(X @ c for X, c in zip(columns, blocks))
        value = 0.5 * float(np.sum((response - fitted) ** 2))
        for k in range(len(blocks)):
            if penalized[k]:
                value += T / kappa * scad_penalty(kappa * norms[k], lam, cfg.a)
        return value

    def is_zero(norm: float) -> bool:
        return (kappa * norm if cfg.threshold_on_scaled_norm else norm) <= cfg.zero_threshold

    blocks = list(np.split(least_squares(np.column_stack(columns), response), splits))
    frozen = [False] * len(blocks)
    for k, force in enumerate(forced or ()):
        if force:
            blocks[k] = project(k, blocks[k])
            frozen[k] = True
    norms = _block_norms(blocks, grams)
    objectives = [objective(blocks, norms)]
    norm_trace = [norms.tolist()]
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iter + 1):
        for k, norm in enumerate(norms):
            if penalized[k] and not frozen[k] and is_zero(norm):
                blocks[k] = project(k, blocks[k])
                frozen[k] = True

        active = [k for k in range(len(blocks)) if not frozen[k]]
        if not active:
            converged = True
            break
        offset = sum((columns[k] @ blocks[k] for k in range(len(blocks)) if frozen[k]), np.zeros(T))
        design = np.column_stack([columns[k] for k in active])
        omega_blocks = []
        for k in active:
            if penalized[k]:
                weight = scad_derivative(kappa * norms[k], lam, cfg.a) / max(norms[k], cfg.lqa_floor)
                omega_blocks.append(weight * grams[k])
            else:
                omega_blocks.append(np.zeros((widths[k], widths[k])))
        omega = scipy.linalg.block_diag(*omega_blocks)

        solution = ridge_solve(design, response - offset, omega, float(T))
        previous = [b.copy() for b in blocks]
        for k, c in zip(active, np.split(solution, np.cumsum([widths[k] for k in active])[:-1])):
            blocks[k] = c
        norms = _block_norms(blocks, grams)
        objectives.append(objective(blocks, norms))
        norm_trace.append(norms.tolist())

        change = max(float(np.max(np.abs(b - p), initial=0.0)) for b, p in zip(blocks, previous))
        if change < cfg.coef_tol:
            converged = True
            break

    for k, norm in enumerate(norms):
        if penalized[k] and not frozen[k] and is_zero(norm):
            blocks[k] = project(k, blocks[k])
            frozen[k] = True
    if not converged:
        logger.warning('LQA did not converge in %d iterations (lambda = %g)', cfg.max_iter, lam)

    trace = LqaTrace(objectives=objectives, norms=norm_trace, converged=converged, iterations=iteration)
    final_norms = np.where(frozen, 0.0, _block_norms(blocks, grams))
    return _LqaSolution(blocks=blocks, norms=final_norms, frozen=frozen, trace=trace)


def _kappa(basis_interior_count: int, cfg: PenaltyConfig) -> float:
    return float(max(basis_interior_count, 1)) ** cfg.knot_exponent


@dataclass(frozen=True, eq=False)
class Stage1Result:
    """
    Penalized varying coefficients at one lambda. `beta` is beta-hat with the
    normalization scales absorbed, so alpha[k] * beta[k - 1] is the fitted
    product term.
    """
    lam: float
    alpha: tuple[ComponentFunction, ...]
    beta: tuple[ComponentFunction, ...]
    scales: FloatArray
    constant: tuple[bool, ...]
    derivative_norms: tuple[float, ...]
    rss: float
    trace: LqaTrace

    @property
    def d1(self) -> int:
        return sum(self.constant)


@dataclass(frozen=True, eq=False)
class Stage2Result:
    mu: float
    beta: tuple[ComponentFunction, ...]
    linear: tuple[bool, ...]
    derivative_norms: tuple[float, ...]
    rss: float
    trace: LqaTrace

    @property
    def d2(self) -> int:
        return sum(self.linear)


def stage1_alpha(
    data: TimeSeriesDataset,
    beta_hat: Sequence[ComponentFunction],
    lam: float,
    bases_C,
    cfg: PenaltyConfig,
    forced: Sequence[bool] | None = None,
) -> Stage1Result:
    """
    SCAD penalty on ||alpha_k'|| for k >= 1; the intercept curve alpha_0 is
    left unpenalized.
    """
    u = data.rescaled_time
    columns = [bases_C[0].eval_scaled(u)]
    grams: list[FloatArray | None] = [None]
    for k, beta in enumerate(beta_hat, start=1):
        columns.append(beta(data.x[:, k - 1])[:, np.newaxis] * bases_C[k].eval_scaled(u))
        grams.append(bases_C[k].derivative_gram(1).values)

    def project(k: int, coef: FloatArray) -> FloatArray:
        delta = ComponentFunction(basis=bases_C[k], coeffs=coef, kind=ComponentKind.VARYING_COEFFICIENT)
        return delta.project_constant().coeffs

    kappa = _kappa(bases_C[0].interior_count, cfg)
    solution = _lqa(columns, grams, data.y, lam, cfg, kappa, project, [False] + list(forced or ()))

    delta = [
        ComponentFunction(
            basis=bases_C[k],
            coeffs=c,
            kind=ComponentKind.VARYING_COEFFICIENT,
            polynomial_degree=0 if (k and solution.frozen[k]) else None,
        )
        for k, c in enumerate(solution.blocks)
    ]
    normalized = normalize(delta, held_beta=beta_hat)
    alpha = list(normalized.alpha)
    for k in range(1, len(alpha)):
        if solution.frozen[k]:
            # the unit-norm nonnegative constant is 1; store it without rounding
            J = bases_C[k].dimension
            alpha[k] = alpha[k].with_coeffs(np.full(J, 1.0 / np.sqrt(J)), polynomial_degree=0)
    beta = normalized.beta
    scales = normalized.scales

    fit = VcamFit(alpha=tuple(alpha), beta=beta, scales=scales)
    return Stage1Result(
        lam=float(lam),
        alpha=fit.alpha,
        beta=beta,
        scales=scales,
        constant=tuple(solution.frozen[1:]),
        derivative_norms=tuple(float(v) for v in solution.norms[1:]),
        rss=fit.residual_sum_of_squares(data),
        trace=solution.trace,
    )


def _check_stage2_order(beta_hat: Sequence[ComponentFunction]) -> None:
    for beta in beta_hat:
        if beta.basis.order < 3:
            raise ConfigurationError(
                'estimation.order_step3',
                'linearity identification needs additive splines of order >= 3, got {}'.format(beta.basis.order),
            )


def stage2_beta(
    data: TimeSeriesDataset,
    alpha_p: Sequence[ComponentFunction],
    mu: float,
    beta_hat: Sequence[ComponentFunction],
    cfg: PenaltyConfig,
    scales: FloatArray | None = None,
    forced: Sequence[bool] | None = None,
) -> Stage2Result:
    """
    SCAD penalty on ||beta_k''||. `beta_hat` supplies the additive bases and
    anchors; its coefficients are only used as the basis template.
    """
    _check_stage2_order(beta_hat)
    u = data.rescaled_time
    response = data.y - alpha_p[0](u)
    columns = []
    grams: list[FloatArray | None] = []
    for k, template in enumerate(beta_hat, start=1):
        columns.append(
            alpha_p[k](u)[:, np.newaxis] * centered_columns(template.basis, data.x[:, k - 1], template.anchor)
        )
        grams.append(np.ascontiguousarray(template.basis.derivative_gram(2).values[1:, 1:]))

    def additive(k: int, coef: FloatArray) -> ComponentFunction:
        return beta_hat[k].with_coeffs(pad_centered(coef))

    def project(k: int, coef: FloatArray) -> FloatArray:
        full = additive(k, coef).project_linear().coeffs
        return (full - full[0])[1:]

    if not columns:
        rss = float(response @ response)
        trace = LqaTrace(objectives=[0.5 * rss], norms=[[]], converged=True, iterations=0)
        return Stage2Result(mu=float(mu), beta=(), linear=(), derivative_norms=(), rss=rss, trace=trace)

    kappa = _kappa(beta_hat[0].basis.interior_count, cfg)
    solution = _lqa(columns, grams, response, mu, cfg, kappa, project, forced)

    beta = []
    for k, coef in enumerate(solution.blocks):
        if solution.frozen[k]:
            beta.append(additive(k, coef).project_linear())
        else:
            beta.append(additive(k, coef))
    if scales is None:
        scales = np.ones(len(beta))
    fit = VcamFit(alpha=tuple(alpha_p), beta=tuple(beta), scales=scales)
    return Stage2Result(
        mu=float(mu),
        beta=tuple(beta),
        linear=tuple(solution.frozen),
        derivative_norms=tuple(float(v) for v in solution.norms),
        rss=fit.residual_sum_of_squares(data),
        trace=solution.trace,
    )


def penalized_bic(rss: float, T: int, p: int, flagged: int, basis_dimension: int) -> float:
    """
    log(RSS / T) + d log(T) / T + (p - d) log(T / J) / (T / J)
    """
    ratio = T / basis_dimension
    with np.errstate(divide='ignore'):
        return float(np.log(rss / T) + flagged * np.log(T) / T + (p - flagged) * np.log(ratio) / ratio)


class GridPoint(NamedTuple):
    value: float
    bic: float
    rss: float | None
    flags: tuple[bool, ...] | None


def _select(
    grid: Sequence[float],
    run: Callable[[float], Stage1Result | Stage2Result],
    score: Callable[[Stage1Result | Stage2Result], float],
    flags: Callable[[Stage1Result | Stage2Result], tuple[bool, ...]],
    name: str,
    threads: int | None,
):
    """
    Smallest BIC over the grid; ties go to the larger tuning value.
    Grid points that fail score +inf.
    """
    def _safe(value: float):
        try:
            return run(value)
        except VcamError as e:
            return e

    descending = sorted(grid, reverse=True)
    best = None
    path = []
    last_error = None
    for value, outcome in zip(descending, ordered_map(_safe, descending, threads)):
        if isinstance(outcome, VcamError):
            logger.info('%s = %g failed: %s', name, value, outcome)
            last_error = outcome
            path.append(GridPoint(value=value, bic=np.inf, rss=None, flags=None))
            continue
        current = score(outcome)
        logger.debug('BIC(%s = %g) = %.6f', name, value, current)
        path.append(GridPoint(value=value, bic=current, rss=outcome.rss, flags=flags(outcome)))
        if best is None or current < best[0]:
            best = (current, outcome)
    if best is None:
        raise PenaltyError('every {} in the grid failed: {}'.format(name, last_error)) from last_error
    path.sort(key=lambda point: point.value)
    return best[1], path


def select_lambda(
    data: TimeSeriesDataset, fit: VcamFit, cfg: PenaltyConfig, threads: int | None = None
) -> tuple[float, Stage1Result, list[GridPoint]]:
    bases_C = [alpha.basis for alpha in fit.alpha]
    J = bases_C[0].dimension

    result, path = _select(
        cfg.lambda_grid,
        lambda lam: stage1_alpha(data, fit.beta, lam, bases_C, cfg),
        lambda r: penalized_bic(r.rss, data.T, data.p, r.d1, J),
        lambda r: r.constant,
        'lambda',
        threads,
    )
    return result.lam, result, path


def select_mu(
    data: TimeSeriesDataset,
    stage1: Stage1Result,
    cfg: PenaltyConfig,
    threads: int | None = None,
) -> tuple[float, Stage2Result, list[GridPoint]]:
    """
    BIC over the mu grid; d counts the terms flagged linear in stage 2.
    """
    _check_stage2_order(stage1.beta)
    J = stage1.beta[0].basis.dimension if stage1.beta else 1
    logger.debug('BIC2 counts stage-2 linear flags as d2')

    result, path = _select(
        cfg.mu_grid,
        lambda mu: stage2_beta(data, stage1.alpha, mu, stage1.beta, cfg, stage1.scales),
        lambda r: penalized_bic(r.rss, data.T, data.p, r.d2, J),
        lambda r: r.linear,
        'mu',
        threads,
    )
    return result.mu, result, path


@dataclass(frozen=True, eq=False)
class IdentificationResult:
    """
    `alpha_constant[k - 1]` marks term k as purely additive, `beta_linear[k - 1]`
    as a pure varying-coefficient term.
    """
    alpha_p: tuple[ComponentFunction, ...]
    beta_p: tuple[ComponentFunction, ...]
    alpha_constant: tuple[bool, ...]
    beta_linear: tuple[bool, ...]
    lam: float
    mu: float
    stage1: Stage1Result
    stage2: Stage2Result
    lambda_path: list[GridPoint] = field(default_factory=list)
    mu_path: list[GridPoint] = field(default_factory=list)

    @property
    def d1(self) -> int:
        return sum(self.alpha_constant)

    @property
    def d2(self) -> int:
        return sum(self.beta_linear)

    @property
    def fit(self) -> VcamFit:
        return VcamFit(alpha=self.alpha_p, beta=self.beta_p, scales=self.stage1.scales)

    def pure_additive_terms(self) -> list[int]:
        return [k for k, flag in enumerate(self.alpha_constant, start=1) if flag]

    def pure_varying_coefficient_terms(self) -> list[int]:
        return [k for k, flag in enumerate(self.beta_linear, start=1) if flag]

    def matches(self, alpha_truth: Sequence[bool], beta_truth: Sequence[bool]) -> bool:
        return (
            tuple(bool(v) for v in alpha_truth) == self.alpha_constant
            and tuple(bool(v) for v in beta_truth) == self.beta_linear
        )

    def monotone_constant_path(self) -> bool:
        """
        True when the set of constant-flagged terms never shrinks as lambda
        grows along the grid.
        """
        previous: set[int] = set()
        for point in self.lambda_path:
            if point.flags is None:
                continue
            current = {k for k, flag in enumerate(point.flags) if flag}
            if not previous <= current:
                return False
            previous = current
        return True


def identify(
    data: TimeSeriesDataset, fit: VcamFit, cfg: PenaltyConfig | None = None, threads: int | None = None
) -> IdentificationResult:
    cfg = cfg or PenaltyConfig()
    if fit.p != data.p:
        raise PenaltyError('fit has {} additive terms, data has {} covariates'.format(fit.p, data.p))
    _check_stage2_order(fit.beta)

    lam, stage1, lambda_path = select_lambda(data, fit, cfg, threads)
    mu, stage2, mu_path = select_mu(data, stage1, cfg, threads)
    logger.info(
        'identified lambda = %g, mu = %g, constant alpha: %s, linear beta: %s',
        lam, mu, stage1.constant, stage2.linear,
    )
    return IdentificationResult(
        alpha_p=stage1.alpha,
        beta_p=stage2.beta,
        alpha_constant=stage1.constant,
        beta_linear=stage2.linear,
        lam=lam,
        mu=mu,
        stage1=stage1,
        stage2=stage2,
        lambda_path=lambda_path,
        mu_path=mu_path,
    )


def known_structure_fit(
    data: TimeSeriesDataset,
    fit: VcamFit,
    alpha_constant: Sequence[bool],
    beta_linear: Sequence[bool],
    cfg: PenaltyConfig | None = None,
) -> VcamFit:
    """
    Both stages with the true structure imposed: the given terms are frozen
    at their constant (linear) projections from the first iterate and the
    rest are fitted at the smallest grid penalty.
    """
    cfg = cfg or PenaltyConfig()
    _check_stage2_order(fit.beta)
    bases_C = [alpha.basis for alpha in fit.alpha]
    stage1 = stage1_alpha(data, fit.beta, cfg.lambda_grid[0], bases_C, cfg, forced=alpha_constant)
    stage2 = stage2_beta(data, stage1.alpha, cfg.mu_grid[0], stage1.beta, cfg, stage1.scales, forced=beta_linear)
    return VcamFit(alpha=stage1.alpha, beta=stage2.beta, scales=stage1.scales)
