"""
Simulated locally stationary designs, comparison estimators, MISE and the
Monte Carlo harness.
"""
import collections
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import cache
from typing import Callable, NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from vcam.conf import settings
from vcam.errors import ConfigurationError, DatasetError, DegenerateComponentError, VcamError
from vcam.estimation import (
    EstimationConfig,
    build_covariate_bases,
    build_time_bases,
    centered_columns,
    fit_three_step,
    pad_centered,
    resolve_anchors,
    select_by_bic,
    step2_alpha,
    step3_beta,
)
from vcam.extratypes import ArrayLike, FloatArray
from vcam.identification import IdentificationResult, PenaltyConfig, identify, known_structure_fit
from vcam.model import ComponentFunction, ComponentKind, TimeSeriesDataset, VcamFit
from vcam.nonblocking.threadpool import ordered_map
from vcam.numerics import RngStream, gauss_legendre, least_squares, standard_normal


logger = logging.getLogger(__name__)

MIN_SERIES_LENGTH = 10

GRID_POINTS = 201

TRIM_QUANTILES = (0.025, 0.975)

NORMALIZER_NODES = 64

Function = Callable[[FloatArray], FloatArray]

# noise_scale(u, x) -> per-observation multiplier of sigma
NoiseScale = Callable[[FloatArray, FloatArray], FloatArray]


class Example(Enum):
    EX1 = 'ex1'
    EX2 = 'ex2'
    CUSTOM = 'custom'


def unit_l2_norm(f: Function) -> float:
    """
    ||f||_L2 on [0, 1] by 64-node Gauss-Legendre.
    """
    x, w = gauss_legendre(NORMALIZER_NODES, 0.0, 1.0)
    return float(np.sqrt(np.sum(w * np.asarray(f(x)) ** 2)))


def normalized(f: Function) -> Function:
    norm = cache(lambda: unit_l2_norm(f))

    def unit(u: ArrayLike) -> FloatArray:
        return np.asarray(f(np.asarray(u, dtype=np.float64))) / norm()

    return unit


def _constant(value: float) -> Function:
    return lambda x: np.full(np.shape(x), value, dtype=np.float64)


def alpha0(u: ArrayLike) -> FloatArray:
    u = np.asarray(u, dtype=np.float64)
    return 1.5 * u + 2.0 * np.cos(2.0 * np.pi * u)


alpha1 = normalized(lambda u: 2.0 * u * np.sin(2.0 * np.pi * u) + 1.0)
alpha2 = normalized(lambda u: 3.0 * (1.0 - u) ** 2 * np.cos(2.0 * np.pi * u) + 1.0)
alpha4_ex2 = normalized(lambda u: 3.0 * u * (1.0 - u) ** 2 + 1.0)


def beta1(x: ArrayLike) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    return 0.7 * np.sin(np.pi * x / 2.0) - 0.5 * x * (2.0 - x) ** 2


def beta2_ex1(x: ArrayLike) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    return 2.0 * x * np.cos(np.pi * x / 2.0) - 3.5 * np.sin(np.pi * x / 2.0)


def beta2_ex2(x: ArrayLike) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    return 3.0 * x * np.cos(np.pi * x / 2.0) - 0.8 * np.sin(np.pi * x / 2.0)


def beta3_ex2(x: ArrayLike) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    return 2.0 * x * (1.0 + x)


def identity(x: ArrayLike) -> FloatArray:
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class ArRecursion:
    """
    x_t = sum_j phi_j(t / T) x_{t - j} + innovation_scale * zeta_t, started
    from zeros.
    """
    coefficients: tuple[Function, ...]
    innovation_scale: float = 0.5

    @property
    def lags(self) -> int:
        return len(self.coefficients)


def _tv(*terms: tuple[float, int]) -> tuple[Function, ...]:
    """
    Lag coefficients c * u**n from `(c, n)` pairs, one per lag.
    """
    return tuple((lambda u, c=c, n=n: c * np.asarray(u, dtype=np.float64) ** n) for c, n in terms)


@dataclass(frozen=True, eq=False)
class ModelDesign:
    """
    True component functions, covariate recursions and the structure masks
    (`alpha_constant[k - 1]`: alpha_k is constant, `beta_linear[k - 1]`:
    beta_k is linear).
    """
    alpha: tuple[Function, ...]
    beta: tuple[Function, ...]
    recursions: tuple[ArRecursion, ...]
    alpha_constant: tuple[bool, ...] | None = None
    beta_linear: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        p = len(self.beta)
        if len(self.alpha) != p + 1 or len(self.recursions) != p:
            raise ConfigurationError(
                'scenario.design',
                'need p + 1 alpha functions, p beta functions and p recursions; got {}, {}, {}'.format(
                    len(self.alpha), p, len(self.recursions)
                ),
            )
        object.__setattr__(self, 'alpha_constant', tuple(self.alpha_constant or (False,) * p))
        object.__setattr__(self, 'beta_linear', tuple(self.beta_linear or (False,) * p))

    @property
    def p(self) -> int:
        return len(self.beta)


def example1_design() -> ModelDesign:
    return ModelDesign(
        alpha=(alpha0, alpha1, alpha2),
        beta=(beta1, beta2_ex1),
        recursions=(
            ArRecursion(_tv((0.6, 1))),
            ArRecursion(_tv((0.9, 1), (-0.6, 2))),
        ),
    )


def example2_design() -> ModelDesign:
    return ModelDesign(
        alpha=(alpha0, alpha1, alpha2, _constant(1.0), alpha4_ex2),
        beta=(beta1, beta2_ex2, beta3_ex2, identity),
        recursions=(
            ArRecursion(_tv((0.7, 1), (-0.5, 2))),
            ArRecursion(_tv((0.8, 1), (-0.2, 2))),
            ArRecursion(_tv((0.6, 1), (-0.3, 2))),
            ArRecursion(_tv((0.6, 1))),
        ),
        alpha_constant=(False, False, True, False),
        beta_linear=(False, False, False, True),
    )


def design_for(example: Example) -> ModelDesign:
    if example is Example.EX1:
        return example1_design()
    if example is Example.EX2:
        return example2_design()
    raise ConfigurationError('scenario.example', 'custom scenarios must supply their own design')


def simulate_covariates(
    T: int, recursions: Sequence[ArRecursion], rng: RngStream, burn_in: int = 0
) -> FloatArray:
    """
    Innovations are drawn as one (T + burn_in, p) block, row-major. During the
    burn-in the coefficients are frozen at u = 1 / T.
    """
    p = len(recursions)
    n = T + burn_in
    zeta = standard_normal(rng, n * p).reshape(n, p)
    u = np.maximum(np.arange(1, n + 1) - burn_in, 1) / T
    x = np.zeros((n, p))
    for k, rec in enumerate(recursions):
        phi = [np.asarray(c(u), dtype=np.float64) for c in rec.coefficients]
        column = x[:, k]
        for t in range(n):
            value = rec.innovation_scale * zeta[t, k]
            for j, coef in enumerate(phi, start=1):
                if t - j >= 0:
                    value += coef[t] * column[t - j]
            column[t] = value
    return x[burn_in:]


@dataclass(frozen=True, eq=False)
class Truth:
    """
    Everything needed to rebuild y from the covariates: the design, the
    standardized noise and its scaling.
    """
    example: Example
    design: ModelDesign
    noise: FloatArray
    sigma: float = 1.0
    noise_scale: NoiseScale | None = None
    seed: int | None = None
    stream_index: int | None = None

    @property
    def alpha_constant(self) -> tuple[bool, ...]:
        return self.design.alpha_constant

    @property
    def beta_linear(self) -> tuple[bool, ...]:
        return self.design.beta_linear

    def mean_function(self, u: FloatArray, x: FloatArray) -> FloatArray:
        value = self.design.alpha[0](u)
        for k, beta in enumerate(self.design.beta, start=1):
            value = value + self.design.alpha[k](u) * beta(x[:, k - 1])
        return value

    def regenerate(self, x: FloatArray) -> FloatArray:
        x = np.asarray(x, dtype=np.float64)
        T = x.shape[0]
        u = np.arange(1, T + 1) / T
        scale = self.sigma if self.noise_scale is None else self.sigma * self.noise_scale(u, x)
        return self.mean_function(u, x) + scale * self.noise


class Simulated(NamedTuple):
    data: TimeSeriesDataset
    truth: Truth


def generate(
    T: int,
    rng: RngStream,
    design: ModelDesign,
    example: Example = Example.CUSTOM,
    sigma: float = 1.0,
    noise_scale: NoiseScale | None = None,
    burn_in: int = 0,
) -> Simulated:
    """
    Covariates first, then the T response innovations, from one stream.
    """
    if T < MIN_SERIES_LENGTH:
        raise DatasetError('simulated series need T >= {}, got {}'.format(MIN_SERIES_LENGTH, T))
    if burn_in < 0:
        raise DatasetError('burn-in must be >= 0, got {}'.format(burn_in))
    x = simulate_covariates(T, design.recursions, rng, burn_in)
    noise = standard_normal(rng, T)
    noise.setflags(write=False)
    truth = Truth(
        example=example,
        design=design,
        noise=noise,
        sigma=sigma,
        noise_scale=noise_scale,
        seed=rng.seed,
        stream_index=rng.stream_index,
    )
    return Simulated(data=TimeSeriesDataset(y=truth.regenerate(x), x=x), truth=truth)


def generate_example1(T: int, rng: RngStream, **kwargs) -> Simulated:
    return generate(T, rng, example1_design(), Example.EX1, **kwargs)


def generate_example2(T: int, rng: RngStream, **kwargs) -> Simulated:
    return generate(T, rng, example2_design(), Example.EX2, **kwargs)


def time_grid(n_points: int = GRID_POINTS) -> FloatArray:
    return np.linspace(0.0, 1.0, n_points)


def covariate_grid(sample: ArrayLike, n_points: int = GRID_POINTS) -> FloatArray:
    """
    Equally spaced points between the 2.5% and 97.5% sample quantiles.
    """
    lo, hi = np.quantile(np.asarray(sample, dtype=np.float64), TRIM_QUANTILES)
    return np.linspace(lo, hi, n_points)


def mise(estimate: Function, truth: Function, grid: FloatArray) -> float:
    """
    Integrated squared error of `estimate` on `grid` (composite trapezoid).
    """
    diff = np.asarray(estimate(grid)) - np.asarray(truth(grid))
    return float(trapezoid(diff ** 2, grid))


def oracle_alpha(
    data: TimeSeriesDataset, true_beta: Sequence[Function], knot_count: int, order: int = 3
) -> tuple[ComponentFunction, ...]:
    """
    Varying coefficients with the additive functions known.
    """
    alpha, _ = step2_alpha(data, true_beta, build_time_bases(data.p + 1, order, knot_count))
    return alpha


def oracle_beta(
    data: TimeSeriesDataset,
    true_alpha: Sequence[Function],
    knot_count: int,
    order: int = 3,
    config: EstimationConfig | None = None,
) -> tuple[ComponentFunction, ...]:
    """
    Additive functions with the varying coefficients known.
    """
    config = config or EstimationConfig()
    bases = build_covariate_bases(data, order, knot_count, config.covariate_placement)
    return step3_beta(data, true_alpha, bases, resolve_anchors(data, config.anchor))


def fit_misspecified_vc(
    data: TimeSeriesDataset, knot_count: int, order: int = 3
) -> tuple[ComponentFunction, ...]:
    """
    y = a_0(u) + sum_k a_k(u) x_k. Each slope curve a_k (k >= 1) is scaled to
    unit L2 norm and keeps its fitted sign: when beta_k decreases through the
    bulk of x_k, a_k comes out as roughly -alpha_k.
    """
    bases = build_time_bases(data.p + 1, order, knot_count)
    u = data.rescaled_time
    columns = [bases[0].eval_scaled(u)]
    columns += [data.x[:, k - 1][:, np.newaxis] * bases[k].eval_scaled(u) for k in range(1, data.p + 1)]
    coef = least_squares(np.column_stack(columns), data.y)
    widths = [c.shape[1] for c in columns]
    blocks = np.split(coef, np.cumsum(widths)[:-1])
    curves = [
        ComponentFunction(basis=bases[k], coeffs=block, kind=ComponentKind.VARYING_COEFFICIENT)
        for k, block in enumerate(blocks)
    ]
    for k in range(1, len(curves)):
        norm = curves[k].l2_norm()
        if not norm > 1e-10:
            raise DegenerateComponentError(k, 'misspecified slope curve {} is identically zero'.format(k))
        curves[k] = curves[k].scaled(1.0 / norm)
    return tuple(curves)


def fit_misspecified_additive(
    data: TimeSeriesDataset, knot_count: int, order: int = 3, config: EstimationConfig | None = None
) -> tuple[ComponentFunction, tuple[ComponentFunction, ...]]:
    """
    y = f_0(u) + sum_k f_k(x_k) with f_k vanishing at the anchor.
    """
    config = config or EstimationConfig()
    time_basis = build_time_bases(1, order, knot_count)[0]
    bases = build_covariate_bases(data, order, knot_count, config.covariate_placement)
    anchors = resolve_anchors(data, config.anchor)
    columns = [time_basis.eval_scaled(data.rescaled_time)]
    columns += [centered_columns(bases[k], data.x[:, k], anchors[k]) for k in range(data.p)]
    coef = least_squares(np.column_stack(columns), data.y)
    blocks = np.split(coef, np.cumsum([c.shape[1] for c in columns])[:-1])
    f0 = ComponentFunction(basis=time_basis, coeffs=blocks[0], kind=ComponentKind.VARYING_COEFFICIENT)
    additive = tuple(
        ComponentFunction(basis=bases[k], coeffs=pad_centered(block), kind=ComponentKind.ADDITIVE, anchor=anchors[k])
        for k, block in enumerate(blocks[1:])
    )
    return f0, additive


class FitOutcome(Enum):
    CORRECT = 'correct'
    OVER = 'over'
    UNDER = 'under'


def classify(flags: Sequence[bool], truth: Sequence[bool]) -> FitOutcome:
    """
    Under-fitting: a term flagged simple that is not. Over-fitting: every
    flagged term is truly simple but some truly simple term was missed.
    """
    flags, truth = tuple(bool(f) for f in flags), tuple(bool(t) for t in truth)
    if flags == truth:
        return FitOutcome.CORRECT
    if any(f and not t for f, t in zip(flags, truth)):
        return FitOutcome.UNDER
    return FitOutcome.OVER


def classify_model(alpha: FitOutcome, beta: FitOutcome) -> FitOutcome:
    if alpha is FitOutcome.CORRECT and beta is FitOutcome.CORRECT:
        return FitOutcome.CORRECT
    if FitOutcome.UNDER in (alpha, beta):
        return FitOutcome.UNDER
    return FitOutcome.OVER


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """
    Fixed `segment_length` and `knot_count` skip the BIC search. `identify`
    defaults to on for designs with a known constant or linear term.
    """
    example: Example = Example.EX1
    T: int = 600
    Q: int = 100
    base_seed: int = field(default_factory=lambda: settings.DEFAULT_SEED)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    segment_length: int | None = None
    knot_count: int | None = None
    identify: bool | None = None
    compare: bool = True
    design: ModelDesign | None = None
    sigma: float = 1.0
    noise_scale: NoiseScale | None = None
    burn_in: int = 0

    def __post_init__(self) -> None:
        if self.Q < 1:
            raise ConfigurationError('scenario.Q', 'need at least one replicate, got {}'.format(self.Q))
        if self.T < MIN_SERIES_LENGTH:
            raise ConfigurationError('scenario.T', 'must be >= {}, got {}'.format(MIN_SERIES_LENGTH, self.T))
        if (self.segment_length is None) != (self.knot_count is None):
            raise ConfigurationError('scenario.I', 'fixed I and K must be given together')
        if self.example is Example.CUSTOM and self.design is None:
            raise ConfigurationError('scenario.design', 'custom scenarios must supply the true functions')
        if self.sigma < 0:
            raise ConfigurationError('scenario.sigma', 'must be >= 0')
        if self.burn_in < 0:
            raise ConfigurationError('scenario.burn_in', 'must be >= 0')

    @property
    def model_design(self) -> ModelDesign:
        return self.design if self.design is not None else design_for(self.example)

    @property
    def runs_identification(self) -> bool:
        if self.identify is not None:
            return self.identify
        design = self.model_design
        return any(design.alpha_constant) or any(design.beta_linear)


@dataclass(frozen=True, eq=False)
class ReplicateResult:
    """
    `mise[estimator][function]`; functions are named alpha0..alpha_p and
    beta1..beta_p.
    """
    index: int
    segment_length: int
    knot_count: int
    mise: dict[str, dict[str, float]]
    alpha_outcome: FitOutcome | None = None
    beta_outcome: FitOutcome | None = None
    model_outcome: FitOutcome | None = None
    lam: float | None = None
    mu: float | None = None
    monotone_path: bool | None = None


def _alpha_mises(estimates: Sequence[Function], truths: Sequence[Function]) -> dict[str, float]:
    grid = time_grid()
    return {'alpha{}'.format(k): mise(est, tru, grid) for k, (est, tru) in enumerate(zip(estimates, truths))}


def _beta_mises(data: TimeSeriesDataset, estimates: Sequence[Function], truths: Sequence[Function]) -> dict[str, float]:
    return {
        'beta{}'.format(k): mise(est, tru, covariate_grid(data.x[:, k - 1]))
        for k, (est, tru) in enumerate(zip(estimates, truths), start=1)
    }


def _fit_mises(data: TimeSeriesDataset, fit: VcamFit, design: ModelDesign) -> dict[str, float]:
    return dict(_alpha_mises(fit.alpha, design.alpha), **_beta_mises(data, fit.beta, design.beta))


def run_replicate(spec: ScenarioSpec, index: int) -> ReplicateResult:
    """
    Replicate `index` draws from stream (base_seed, index) only.
    """
    design = spec.model_design
    simulated = generate(
        spec.T,
        RngStream(spec.base_seed, index),
        design,
        spec.example,
        sigma=spec.sigma,
        noise_scale=spec.noise_scale,
        burn_in=spec.burn_in,
    )
    data = simulated.data
    if spec.segment_length is not None:
        fit = fit_three_step(data, spec.estimation, spec.segment_length, spec.knot_count)
    else:
        fit = select_by_bic(data, spec.estimation, threads=1).fit
    I, K = fit.segment_length, fit.knot_count

    mises = {'three_step': _fit_mises(data, fit, design)}
    if spec.compare:
        cfg = spec.estimation
        oracle = dict(
            _alpha_mises(oracle_alpha(data, design.beta, K, cfg.order_step2), design.alpha),
            **_beta_mises(data, oracle_beta(data, design.alpha, K, cfg.order_step3, cfg), design.beta),
        )
        mises['oracle'] = oracle
        mises['misspecified_vc'] = _alpha_mises(fit_misspecified_vc(data, K, cfg.order_step2), design.alpha)
        f0, additive = fit_misspecified_additive(data, K, cfg.order_step3, cfg)
        mises['misspecified_additive'] = dict(
            _alpha_mises([f0], design.alpha[:1]), **_beta_mises(data, additive, design.beta)
        )

    if not spec.runs_identification:
        return ReplicateResult(index=index, segment_length=I, knot_count=K, mise=mises)

    result: IdentificationResult = identify(data, fit, spec.penalty, threads=1)
    mises['penalized'] = _fit_mises(data, result.fit, design)
    known = known_structure_fit(data, fit, design.alpha_constant, design.beta_linear, spec.penalty)
    mises['oracle_structure'] = _fit_mises(data, known, design)
    alpha_outcome = classify(result.alpha_constant, design.alpha_constant)
    beta_outcome = classify(result.beta_linear, design.beta_linear)
    monotone = result.monotone_constant_path()
    if not monotone:
        logger.info('replicate %d: constant-term set is not monotone along the lambda grid', index)
    return ReplicateResult(
        index=index,
        segment_length=I,
        knot_count=K,
        mise=mises,
        alpha_outcome=alpha_outcome,
        beta_outcome=beta_outcome,
        model_outcome=classify_model(alpha_outcome, beta_outcome),
        lam=result.lam,
        mu=result.mu,
        monotone_path=monotone,
    )


class Summary(NamedTuple):
    mean: float
    sd: float
    n: int


def summarize(values: Sequence[float]) -> Summary:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return Summary(mean=float('nan'), sd=float('nan'), n=0)
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return Summary(mean=float(np.mean(arr)), sd=sd, n=int(arr.size))


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    spec: ScenarioSpec
    replicates: list[ReplicateResult]
    failures: list[int]
    wall_clock: float = 0.0

    @property
    def Q(self) -> int:
        return self.spec.Q

    def mise(self) -> dict[tuple[str, str], Summary]:
        """
        (estimator, function) -> summary over the successful replicates.
        """
        collected: dict[tuple[str, str], list[float]] = collections.defaultdict(list)
        for replicate in self.replicates:
            for estimator, values in replicate.mise.items():
                for name, value in values.items():
                    collected[(estimator, name)].append(value)
        return {key: summarize(values) for key, values in sorted(collected.items())}

    def identification_counts(self) -> dict[str, dict[str, int]]:
        counts = {}
        for category, attr in (
            ('additive_terms', 'alpha_outcome'),
            ('varying_coefficient_terms', 'beta_outcome'),
            ('true_model', 'model_outcome'),
        ):
            outcomes = [getattr(r, attr) for r in self.replicates if getattr(r, attr) is not None]
            if outcomes:
                counts[category] = {o.value: outcomes.count(o) for o in FitOutcome}
        return counts

    def parameter_histograms(self) -> dict[str, dict[str, int]]:
        histograms = {
            'I_K': collections.Counter('I={},K={}'.format(r.segment_length, r.knot_count) for r in self.replicates),
            'lambda': collections.Counter(repr(r.lam) for r in self.replicates if r.lam is not None),
            'mu': collections.Counter(repr(r.mu) for r in self.replicates if r.mu is not None),
        }
        return {name: dict(sorted(h.items())) for name, h in histograms.items() if h}

    def monotone_fraction(self) -> float | None:
        flags = [r.monotone_path for r in self.replicates if r.monotone_path is not None]
        return sum(flags) / len(flags) if flags else None

    def to_frame(self) -> pd.DataFrame:
        """
        Tidy `section, name, key, value` rows, in a fixed order. Timings are
        left out so identical scenarios give identical frames.
        """
        rows = [
            ('scenario', 'example', '', self.spec.example.value),
            ('scenario', 'T', '', self.spec.T),
            ('scenario', 'Q', '', self.spec.Q),
            ('scenario', 'base_seed', '', self.spec.base_seed),
            ('scenario', 'failures', '', len(self.failures)),
        ]
        for (estimator, name), summary in self.mise().items():
            rows.append(('mise', estimator, name + '.mean', summary.mean))
            rows.append(('mise', estimator, name + '.sd', summary.sd))
            rows.append(('mise', estimator, name + '.n', summary.n))
        for category, counts in self.identification_counts().items():
            for outcome, count in counts.items():
                rows.append(('identification', category, outcome, count))
        for name, histogram in self.parameter_histograms().items():
            for key, count in histogram.items():
                rows.append(('histogram', name, key, count))
        fraction = self.monotone_fraction()
        if fraction is not None:
            rows.append(('identification', 'monotone_lambda_path', 'fraction', fraction))
        return pd.DataFrame(rows, columns=['section', 'name', 'key', 'value'])

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, lineterminator='\n')

    def to_table(self) -> str:
        lines = [
            '{} Monte Carlo report'.format(settings.REPORT_BANNER),
            'example={} T={} Q={} seed={} failures={} wall_clock={:.1f}s'.format(
                self.spec.example.value, self.spec.T, self.spec.Q, self.spec.base_seed,
                len(self.failures), self.wall_clock,
            ),
            '',
        ]
        summaries = self.mise()
        if summaries:
            table = pd.DataFrame(
                [
                    {'estimator': estimator, 'function': name, 'mean': s.mean, 'sd': s.sd}
                    for (estimator, name), s in summaries.items()
                ]
            )
            wide = table.pivot(index='function', columns='estimator', values='mean')
            lines += ['mean MISE', wide.to_string(float_format=lambda v: '{:.4f}'.format(v)), '']
        counts = self.identification_counts()
        if counts:
            frame = pd.DataFrame(counts).T[[o.value for o in FitOutcome]]
            lines += ['identification (C-F / O-F / U-F)', frame.to_string(), '']
        if self.failures:
            lines.append('failed replicates: {}'.format(', '.join(str(i) for i in self.failures)))
        return '\n'.join(lines) + '\n'


def run_monte_carlo(spec: ScenarioSpec, threads: int | None = None) -> MonteCarloReport:
    """
    Replicates run on the thread pool; results are reduced in replicate
    order so the report does not depend on the thread count.
    """
    def _run(index: int) -> ReplicateResult | VcamError:
        try:
            return run_replicate(spec, index)
        except VcamError as e:
            return e

    start = time.perf_counter()
    outcomes = ordered_map(_run, range(spec.Q), threads)
    replicates, failures = [], []
    for index, outcome in enumerate(outcomes):
        if isinstance(outcome, VcamError):
            logger.warning('replicate %d failed: %s', index, outcome)
            failures.append(index)
        else:
            replicates.append(outcome)
    return MonteCarloReport(
        spec=spec, replicates=replicates, failures=failures, wall_clock=time.perf_counter() - start
    )


def figure_grids(
    seed: int | None = None,
    T: int = 500,
    knot_count: int = 3,
    segment_length: int = 25,
    config: EstimationConfig | None = None,
    n_points: int = GRID_POINTS,
) -> dict[str, pd.DataFrame]:
    """
    One Example-1 fit at fixed (I, K): `x, value, truth` grids for beta1,
    beta2 (trimmed covariate range) and alpha0..alpha2 (on [0, 1]).
    """
    config = config or EstimationConfig()
    seed = settings.DEFAULT_SEED if seed is None else seed
    simulated = generate_example1(T, RngStream(seed, 0))
    data, design = simulated.data, simulated.truth.design
    fit = fit_three_step(data, config, segment_length, knot_count)

    grids = {}
    for k, (estimate, truth) in enumerate(zip(fit.beta, design.beta), start=1):
        x = covariate_grid(data.x[:, k - 1], n_points)
        grids['beta{}'.format(k)] = pd.DataFrame({'x': x, 'value': estimate(x), 'truth': truth(x)})
    u = time_grid(n_points)
    for k, (estimate, truth) in enumerate(zip(fit.alpha, design.alpha)):
        grids['alpha{}'.format(k)] = pd.DataFrame({'x': u, 'value': estimate(u), 'truth': truth(u)})
    return grids
