"""
Dense solvers, quadrature and reproducible random numbers shared by the
estimation, identification and simulation layers.
"""
import logging

import numpy as np
import scipy.linalg
from numpy.random import Generator, Philox

from vcam.errors import NumericsError, SingularSystemError
from vcam.extratypes import FloatArray


logger = logging.getLogger(__name__)

RCOND = 1e-10

MAX_GAUSS_NODES = 64


def _as_design(X) -> FloatArray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise NumericsError('design must be a non-empty 2-d matrix, got shape {}'.format(X.shape))
    if not np.all(np.isfinite(X)):
        raise NumericsError('design matrix has non-finite entries.')
    return X


def _as_response(y, n: int) -> FloatArray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n:
        raise NumericsError('response has {} rows, design has {}'.format(y.shape[0], n))
    if not np.all(np.isfinite(y)):
        raise NumericsError('response has non-finite entries.')
    return y


def least_squares_with_rank(X, y) -> tuple[FloatArray, int]:
    """
    Kwargs:
        X: n x q design
        y: length-n response

    Returns:
        (minimum-norm least-squares coefficients, numerical rank)

    Uses LAPACK's complete orthogonal factorization with column pivoting
    (`gelsy`); singular values below `RCOND` times the largest are treated as
    zero.
    """
    X = _as_design(X)
    y = _as_response(y, X.shape[0])
    coef, _, rank, _ = scipy.linalg.lstsq(X, y, cond=RCOND, lapack_driver='gelsy')
    return coef, int(rank)


def least_squares(X, y) -> FloatArray:
    return least_squares_with_rank(X, y)[0]


def ridge_solve(X, y, omega, scale: float) -> FloatArray:
    """
    Solve `(X'X + scale * omega) c = X'y` by Cholesky.

    If the system matrix is not numerically positive definite a diagonal
    jitter of 1e-10 * trace / q is added once and the factorization retried.
    """
    X = _as_design(X)
    y = _as_response(y, X.shape[0])
    q = X.shape[1]
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape != (q, q):
        raise NumericsError('penalty matrix must be {0}x{0}, got {1}'.format(q, omega.shape))
    if scale < 0:
        raise NumericsError('ridge scale must be >= 0, got {}'.format(scale))

    A = X.T @ X + scale * omega
    A = 0.5 * (A + A.T)
    rhs = X.T @ y
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), rhs)
    except np.linalg.LinAlgError:
        pass

    jitter = RCOND * np.trace(A) / q
    logger.debug('ridge system not positive definite, retrying with jitter %g', jitter)
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A + jitter * np.eye(q)), rhs)
    except np.linalg.LinAlgError as e:
        raise SingularSystemError('ridge system is singular even after jitter: {}'.format(e))


def penalty_root(omega) -> FloatArray:
    """
    R with R'R = omega for a symmetric PSD `omega`; rows for (numerically)
    null eigenvalues are dropped.
    """
    omega = np.asarray(omega, dtype=np.float64)
    eigvals, eigvecs = scipy.linalg.eigh(0.5 * (omega + omega.T))
    keep = eigvals > RCOND * max(float(eigvals.max(initial=0.0)), 0.0)
    return np.sqrt(eigvals[keep])[:, np.newaxis] * eigvecs[:, keep].T


def penalized_least_squares(X, y, omega) -> FloatArray:
    """
    Minimize ||y - X c||^2 + c' omega c as the least-squares problem on X
    stacked over a square root of omega, which avoids forming X'X.
    """
    X = _as_design(X)
    y = _as_response(y, X.shape[0])
    q = X.shape[1]
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape != (q, q):
        raise NumericsError('penalty matrix must be {0}x{0}, got {1}'.format(q, omega.shape))
    root = penalty_root(omega)
    if not root.shape[0]:
        return least_squares(X, y)
    return least_squares(np.vstack((X, root)), np.concatenate((y, np.zeros(root.shape[0]))))


def gauss_legendre(n_nodes: int, a: float, b: float) -> tuple[FloatArray, FloatArray]:
    """
    Gauss-Legendre rule on [a, b]: exact for polynomials of degree <= 2n - 1.
    """
    if not 1 <= n_nodes <= MAX_GAUSS_NODES:
        raise NumericsError(
            'number of Gauss-Legendre nodes must be in [1, {}], got {}'.format(MAX_GAUSS_NODES, n_nodes)
        )
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


class RngStream(object):
    """
    Counter-based (Philox 4x64) generator keyed by `(seed, stream_index)`.

    Identical keys give identical sequences regardless of which thread draws
    them. A stream is single-owner: parallel Monte Carlo replicates each get
    their own `stream_index`.
    """

    seed: int
    stream_index: int

    def __init__(self, seed: int, stream_index: int = 0) -> None:
        mask = (1 << 64) - 1
        self.seed = int(seed) & mask
        self.stream_index = int(stream_index) & mask
        key = np.array([self.seed, self.stream_index], dtype=np.uint64)
        self._generator = Generator(Philox(key=key))

    def uniform(self, count: int) -> FloatArray:
        return self._generator.random(count)

    def __repr__(self) -> str:
        return 'RngStream(seed={}, stream_index={})'.format(self.seed, self.stream_index)


def standard_normal(rng: RngStream, count: int) -> FloatArray:
    """
    Box-Muller transform of the stream's uniforms; consumes 2 * ceil(count / 2)
    uniforms.
    """
    if count <= 0:
        return np.zeros(0)
    pairs = (count + 1) // 2
    u1 = 1.0 - rng.uniform(pairs)  # (0, 1], keeps log finite
    u2 = rng.uniform(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.column_stack((radius * np.cos(angle), radius * np.sin(angle))).ravel()
    return z[:count]
