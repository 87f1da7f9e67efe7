"""
Clamped B-spline bases: knot construction, evaluation (raw, sqrt(J)-scaled and
centered), derivative Gram matrices and exact piecewise-polynomial integration.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from vcam.errors import NumericsError, SplineDomainError, SplineSpecError
from vcam.extratypes import ArrayLike, FloatArray
from vcam.numerics import gauss_legendre


logger = logging.getLogger(__name__)

MAX_MESH_RATIO = 10.0

NEGATIVE_QUADRATIC_SLACK = 1e-12


class KnotPlacement(Enum):
    UNIFORM = 'uniform'
    QUANTILE = 'quantile'


@dataclass(frozen=True, eq=False)
class SplineSpec:
    """
    `order` m gives piecewise polynomials of degree m - 1; the basis has
    `interior_count + order` functions. `sample` is only read for quantile
    placement.
    """
    order: int
    interior_count: int
    domain: tuple[float, float] = (0.0, 1.0)
    placement: KnotPlacement = KnotPlacement.UNIFORM
    sample: FloatArray | None = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.interior_count + self.order


@dataclass(frozen=True, eq=False)
class GramMatrix:
    order_of_derivative: int
    values: FloatArray

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.values).min())


def _validate_spec(spec: SplineSpec) -> tuple[float, float]:
    if int(spec.order) != spec.order or spec.order < 1:
        raise SplineSpecError('spline order must be an integer >= 1, got {}'.format(spec.order))
    if int(spec.interior_count) != spec.interior_count or spec.interior_count < 0:
        raise SplineSpecError(
            'interior knot count must be an integer >= 0, got {}'.format(spec.interior_count)
        )
    a, b = (float(v) for v in spec.domain)
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise SplineSpecError('invalid spline domain [{}, {}]'.format(a, b))
    return a, b


def _mesh_ratio(breakpoints: FloatArray) -> float:
    spans = np.diff(breakpoints)
    return float(spans.max() / spans.min())


def _quantile_interior(spec: SplineSpec, a: float, b: float) -> FloatArray | None:
    """
    Interior knots at equally spaced empirical quantiles, duplicates merged.
    `None` means the caller should fall back to uniform placement.
    """
    K = spec.interior_count
    if spec.sample is None:
        raise SplineSpecError('quantile knot placement needs a sample')
    sample = np.asarray(spec.sample, dtype=np.float64).ravel()
    if np.unique(sample).size < K + 2:
        raise SplineSpecError(
            'quantile knot placement needs at least {} distinct sample values, got {}'.format(
                K + 2, np.unique(sample).size
            )
        )
    interior = np.quantile(sample, np.linspace(0.0, 1.0, K + 2)[1:-1])
    interior = np.unique(interior[(interior > a) & (interior < b)])
    if interior.size < K:
        logger.warning(
            'only %d distinct interior quantile knots out of %d, using uniform knots', interior.size, K
        )
        return None
    ratio = _mesh_ratio(np.concatenate(([a], interior, [b])))
    if ratio > MAX_MESH_RATIO:
        logger.warning('quantile knots have mesh ratio %.2f > %g, using uniform knots', ratio, MAX_MESH_RATIO)
        return None
    return interior


def build_basis(spec: SplineSpec) -> 'SplineBasis':
    """
    Clamped knot vector: `order` copies of each domain end around
    `interior_count` strictly increasing interior knots.
    """
    a, b = _validate_spec(spec)
    K, m = spec.interior_count, spec.order

    interior = None
    if spec.placement is KnotPlacement.QUANTILE and K > 0:
        interior = _quantile_interior(spec, a, b)
    if interior is None:
        interior = np.linspace(a, b, K + 2)[1:-1]

    knots = np.concatenate((np.full(m, a), interior, np.full(m, b)))
    return SplineBasis(spec=spec, knots=knots)


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """
    Evaluation is defined on the closed domain; the right end belongs to the
    last knot span so the last basis function equals 1 there.
    """
    spec: SplineSpec
    knots: FloatArray

    def __post_init__(self) -> None:
        a, b = _validate_spec(self.spec)
        knots = np.asarray(self.knots, dtype=np.float64)
        m = self.spec.order
        if knots.shape != (self.spec.interior_count + 2 * m,):
            raise SplineSpecError(
                'knot vector must have length {}, got {}'.format(self.spec.interior_count + 2 * m, knots.size)
            )
        if np.any(np.diff(knots) < 0) or knots[0] != a or knots[-1] != b:
            raise SplineSpecError('knot vector must be nondecreasing and clamped to the domain')
        if np.any(np.diff(knots[m - 1:knots.size - m + 1]) <= 0):
            raise SplineSpecError('interior knots must be strictly increasing inside the domain')
        object.__setattr__(self, 'knots', knots)

    @property
    def order(self) -> int:
        return self.spec.order

    @property
    def degree(self) -> int:
        return self.spec.order - 1

    @property
    def interior_count(self) -> int:
        return self.spec.interior_count

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def breakpoints(self) -> FloatArray:
        return np.unique(self.knots)

    @property
    def mesh_ratio(self) -> float:
        return _mesh_ratio(self.breakpoints)

    @cached_property
    def _splines(self) -> tuple[BSpline | None, ...]:
        """
        One vector-valued spline per derivative order 0..2 whose j-th output
        is the j-th basis function (identity coefficients). `None` marks a
        derivative that vanishes identically.
        """
        base = BSpline(self.knots, np.eye(self.dimension), self.degree, extrapolate=False)
        return tuple(
            base if d == 0 else (base.derivative(d) if d <= self.degree else None)
            for d in range(3)
        )

    @cached_property
    def _grams(self) -> dict[tuple[int, bool], GramMatrix]:
        return {}

    def _check_domain(self, x: FloatArray) -> None:
        a, b = self.domain
        if x.size and (not np.all(np.isfinite(x)) or x.min() < a or x.max() > b):
            bad = x[~((x >= a) & (x <= b))]
            raise SplineDomainError(
                'evaluation point {} outside spline domain [{}, {}]'.format(bad[0], a, b)
            )

    def derivative_values(self, x: ArrayLike, d: int = 0) -> FloatArray:
        """
        Raw basis functions (or their d-th derivatives) at `x`: shape (J,)
        for scalar input, (n, J) for a vector.
        """
        if d not in (0, 1, 2):
            raise SplineSpecError('derivative order must be 0, 1 or 2, got {}'.format(d))
        arr = np.asarray(x, dtype=np.float64)
        flat = np.atleast_1d(arr).ravel()
        self._check_domain(flat)
        spline = self._splines[d]
        if spline is None:
            values = np.zeros((flat.size, self.dimension))
        else:
            values = spline(flat)
        return values[0] if arr.ndim == 0 else values

    def eval_raw(self, x: ArrayLike) -> FloatArray:
        return self.derivative_values(x, 0)

    def eval_scaled(self, x: ArrayLike, centered_at: float | None = None) -> FloatArray:
        """
        sqrt(J) * B(x), minus sqrt(J) * B(c) when `centered_at` = c.
        """
        values = np.sqrt(self.dimension) * self.eval_raw(x)
        if centered_at is not None:
            values = values - np.sqrt(self.dimension) * self.eval_raw(float(centered_at))
        return values

    def centered_design(self, x: ArrayLike, anchor: float) -> FloatArray:
        return self.eval_scaled(x, centered_at=anchor)

    def span_quadrature(self, n_nodes: int | None = None) -> tuple[FloatArray, FloatArray]:
        """
        Gauss-Legendre rule with `n_nodes` (default: the order) nodes on every
        knot span; exact for piecewise polynomials of degree <= 2n - 1.
        """
        n_nodes = n_nodes or self.order
        nodes, weights = [], []
        bp = self.breakpoints
        for left, right in zip(bp[:-1], bp[1:]):
            x, w = gauss_legendre(n_nodes, left, right)
            nodes.append(x)
            weights.append(w)
        return np.concatenate(nodes), np.concatenate(weights)

    def derivative_gram(self, d: int, scaled: bool = True) -> GramMatrix:
        """
        (j, j') entry is the integral over the domain of D^d B_j * D^d B_j',
        times J when `scaled`. Zero matrix when d >= order.
        """
        try:
            return self._grams[(d, scaled)]
        except KeyError:
            pass
        J = self.dimension
        if d >= self.order:
            G = np.zeros((J, J))
        else:
            x, w = self.span_quadrature()
            D = self.derivative_values(x, d)
            G = D.T @ (w[:, np.newaxis] * D)
            if scaled:
                G = J * G
            G = 0.5 * (G + G.T)
        G.setflags(write=False)
        gram = self._grams[(d, scaled)] = GramMatrix(order_of_derivative=d, values=G)
        return gram

    def integrals(self, scaled: bool = True) -> FloatArray:
        """
        Exact integral of each basis function: (t_{l+m} - t_l) / m.
        """
        m = self.order
        raw = (self.knots[m:] - self.knots[:-m]) / m
        return np.sqrt(self.dimension) * raw if scaled else raw

    def greville(self) -> FloatArray:
        """
        Greville abscissae; coefficients `a + b * greville()` reproduce the
        line a + b x exactly for degree >= 1.
        """
        k = self.degree
        if k == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        return np.array([self.knots[l + 1:l + k + 1].mean() for l in range(self.dimension)])


def spline_l2_norm(coeffs, basis: SplineBasis, d: int = 0, scaled: bool = True) -> float:
    """
    sqrt(c' G c) with G the d-th derivative Gram matrix of `basis`.
    """
    c = np.asarray(coeffs, dtype=np.float64).ravel()
    if c.size != basis.dimension:
        raise NumericsError(
            'coefficient vector has length {}, basis has {} functions'.format(c.size, basis.dimension)
        )
    quad = float(c @ basis.derivative_gram(d, scaled).values @ c)
    if quad < 0:
        if quad < -NEGATIVE_QUADRATIC_SLACK:
            raise NumericsError('negative quadratic form {} for a Gram matrix'.format(quad))
        quad = 0.0
    return float(np.sqrt(quad))
