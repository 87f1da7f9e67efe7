"""
Varying-coefficient additive model

    m(u, x) = alpha_0(u) + sum_k alpha_k(u) * beta_k(x_k)

identified by ||alpha_k||_L2 = 1, integral of alpha_k >= 0 and
beta_k(anchor_k) = 0.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NamedTuple, Sequence

import numpy as np
import pandas as pd

from vcam.errors import DatasetError, DegenerateComponentError, SplineSpecError
from vcam.extratypes import ArrayLike, FloatArray
from vcam.splines import SplineBasis, spline_l2_norm


logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-10


class ComponentKind(Enum):
    VARYING_COEFFICIENT = 'varying_coefficient'
    ADDITIVE = 'additive'


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    """
    Observations (t/T, y_t, x_t) for t = 1..T. `x` has shape (T, p); p may
    be zero.
    """
    y: FloatArray
    x: FloatArray

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64).ravel()
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(y.size, -1) if x.size else np.zeros((y.size, 0))
        if y.size < 1:
            raise DatasetError('dataset needs at least one observation')
        if x.ndim != 2 or x.shape[0] != y.size:
            raise DatasetError('covariates must have shape (T, p) with T = {}, got {}'.format(y.size, x.shape))
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DatasetError('dataset has non-finite values')
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'x', x)

    @property
    def T(self) -> int:
        return int(self.y.size)

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    @property
    def rescaled_time(self) -> FloatArray:
        return np.arange(1, self.T + 1) / self.T

    @property
    def covariate_ranges(self) -> list[tuple[float, float]]:
        return [(float(col.min()), float(col.max())) for col in self.x.T]

    def permuted(self, order: Sequence[int]) -> 'TimeSeriesDataset':
        return TimeSeriesDataset(y=self.y, x=self.x[:, list(order)])


@dataclass(frozen=True, eq=False)
class ComponentFunction:
    """
    Spline function sum_l c_l * sqrt(J) * B_l.

    Additive components are centered: sqrt(J) * (B_l(x) - B_l(anchor)), so
    they vanish at the anchor exactly. `polynomial_degree` marks a term that
    was projected onto constants (0) or lines (1); derivatives above that
    degree are then exactly zero.
    """
    basis: SplineBasis
    coeffs: FloatArray
    kind: ComponentKind
    anchor: float | None = None
    polynomial_degree: int | None = None

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=np.float64).ravel()
        if coeffs.size != self.basis.dimension:
            raise SplineSpecError(
                'component has {} coefficients, basis has {} functions'.format(coeffs.size, self.basis.dimension)
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, 'coeffs', coeffs)
        if self.kind is ComponentKind.ADDITIVE:
            if self.anchor is None:
                raise SplineSpecError('additive components need an anchor')
            a, b = self.basis.domain
            if not a <= self.anchor <= b:
                raise SplineSpecError('anchor {} outside [{}, {}]'.format(self.anchor, a, b))
            object.__setattr__(self, 'anchor', float(self.anchor))

    @property
    def domain(self) -> tuple[float, float]:
        return self.basis.domain

    def __call__(self, x: ArrayLike) -> FloatArray:
        if self.kind is ComponentKind.ADDITIVE:
            values = self.basis.centered_design(x, self.anchor)
        else:
            values = self.basis.eval_scaled(x)
        return values @ self.coeffs

    def with_coeffs(self, coeffs, polynomial_degree: int | None = None) -> 'ComponentFunction':
        return dataclasses.replace(self, coeffs=coeffs, polynomial_degree=polynomial_degree)

    def scaled(self, factor: float) -> 'ComponentFunction':
        return dataclasses.replace(self, coeffs=factor * self.coeffs)

    def l2_norm(self) -> float:
        if self.kind is ComponentKind.VARYING_COEFFICIENT:
            return spline_l2_norm(self.coeffs, self.basis, 0, scaled=True)
        x, w = self.basis.span_quadrature()
        return float(np.sqrt(np.sum(w * self(x) ** 2)))

    def derivative_norm(self, d: int) -> float:
        """
        L2 norm of the d-th derivative over the basis domain.
        """
        if d == 0:
            return self.l2_norm()
        if self.polynomial_degree is not None and d > self.polynomial_degree:
            return 0.0
        return spline_l2_norm(self.coeffs, self.basis, d, scaled=True)

    def mean(self) -> float:
        a, b = self.domain
        if self.kind is ComponentKind.VARYING_COEFFICIENT:
            return float(self.basis.integrals(scaled=True) @ self.coeffs) / (b - a)
        x, w = self.basis.span_quadrature()
        return float(np.sum(w * self(x))) / (b - a)

    def project_constant(self) -> 'ComponentFunction':
        """
        L2 projection onto constants (only meaningful for uncentered terms).
        """
        J = self.basis.dimension
        return self.with_coeffs(np.full(J, self.mean() / np.sqrt(J)), polynomial_degree=0)

    def project_linear(self) -> 'ComponentFunction':
        """
        L2 projection of an additive term onto lines through its anchor.
        """
        if self.kind is not ComponentKind.ADDITIVE or self.basis.degree < 1:
            raise SplineSpecError('linear projection needs an additive term of order >= 2')
        x, w = self.basis.span_quadrature(self.basis.order + 1)
        shifted = x - self.anchor
        slope = float(np.sum(w * self(x) * shifted) / np.sum(w * shifted ** 2))
        coeffs = slope * (self.basis.greville() - self.anchor) / np.sqrt(self.basis.dimension)
        return self.with_coeffs(coeffs, polynomial_degree=1)


class Normalization(NamedTuple):
    alpha: tuple[ComponentFunction, ...]
    scales: FloatArray
    beta: tuple[ComponentFunction, ...] | None


def normalize(
    delta: Sequence[ComponentFunction], held_beta: Sequence[ComponentFunction] | None = None
) -> Normalization:
    """
    Kwargs:
        delta: delta_0..delta_p, the unnormalized varying coefficients
        held_beta: beta_1..beta_p paired with delta_1..delta_p if already
            fitted; `None` when beta is still pending (it will be fitted
            against the normalized alphas)

    Returns:
        alpha_0 = delta_0, alpha_k = delta_k / s_k with signed scales
        s_k = +-||delta_k|| chosen so that alpha_k has nonnegative mean, and
        (when held) beta_k * s_k so that products are unchanged.
    """
    alpha = [delta[0]]
    scales = np.zeros(len(delta) - 1)
    for k, component in enumerate(delta[1:], start=1):
        norm = component.l2_norm()
        if not norm > DEGENERATE_NORM:
            raise DegenerateComponentError(k)
        unit = component.scaled(1.0 / norm)
        scale = norm
        if unit.mean() < 0:
            unit = unit.scaled(-1.0)
            scale = -norm
        alpha.append(unit)
        scales[k - 1] = scale

    beta = None
    if held_beta is not None:
        beta = tuple(b.scaled(s) for b, s in zip(held_beta, scales))
    return Normalization(alpha=tuple(alpha), scales=scales, beta=beta)


@dataclass(frozen=True, eq=False)
class VcamFit:
    """
    alpha[0] is the intercept curve; alpha[k], beta[k - 1] form the k-th
    product term.
    """
    alpha: tuple[ComponentFunction, ...]
    beta: tuple[ComponentFunction, ...]
    scales: FloatArray
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.alpha) != len(self.beta) + 1:
            raise SplineSpecError(
                'fit needs p + 1 varying coefficients for p additive terms, got {} and {}'.format(
                    len(self.alpha), len(self.beta)
                )
            )
        object.__setattr__(self, 'alpha', tuple(self.alpha))
        object.__setattr__(self, 'beta', tuple(self.beta))
        object.__setattr__(self, 'scales', np.asarray(self.scales, dtype=np.float64))

    @property
    def p(self) -> int:
        return len(self.beta)

    @property
    def rss(self) -> float | None:
        return self.diagnostics.get('rss')

    @property
    def segment_length(self) -> int | None:
        return self.diagnostics.get('segment_length')

    @property
    def knot_count(self) -> int | None:
        return self.diagnostics.get('knot_count')

    def evaluate(self, u: ArrayLike, x: ArrayLike) -> FloatArray | float:
        """
        alpha_0(u) + sum_k alpha_k(u) * beta_k(x_k); `x` is a length-p vector
        (scalar `u`) or an (n, p) matrix.
        """
        u_arr = np.asarray(u, dtype=np.float64)
        x_arr = np.asarray(x, dtype=np.float64).reshape(u_arr.size, self.p)
        u_flat = np.atleast_1d(u_arr).ravel()
        value = self.alpha[0](u_flat)
        for k, beta in enumerate(self.beta, start=1):
            value = value + self.alpha[k](u_flat) * beta(x_arr[:, k - 1])
        return float(value[0]) if u_arr.ndim == 0 else value

    def fitted(self, data: TimeSeriesDataset) -> FloatArray:
        return self.evaluate(data.rescaled_time, data.x)

    def residual_sum_of_squares(self, data: TimeSeriesDataset) -> float:
        return float(np.sum((data.y - self.fitted(data)) ** 2))


def function_grid(f: ComponentFunction, n_points: int = 201) -> pd.DataFrame:
    """
    Equally spaced `x, value` table over the function's domain, endpoints
    included exactly.
    """
    if n_points < 2:
        raise ValueError('a function grid needs at least 2 points, got {}'.format(n_points))
    a, b = f.domain
    x = np.linspace(a, b, n_points)
    return pd.DataFrame({'x': x, 'value': f(x)})
