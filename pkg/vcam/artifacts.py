"""
On-disk formats: dataset CSV, truth sidecar, fit and identification JSON,
function grids and Monte Carlo reports. Every write is atomic.
"""
import io
import json
import logging
import os
from typing import Any

import numpy as np
import pandas as pd

from vcam.__about__ import __version__
from vcam.errors import DatasetError
from vcam.extratypes import JSONObject
from vcam.identification import GridPoint, IdentificationResult
from vcam.model import ComponentFunction, ComponentKind, TimeSeriesDataset, VcamFit
from vcam.simulation import Example, MonteCarloReport, Truth, design_for
from vcam.splines import SplineBasis, SplineSpec
from vcam.utils import atomic_write


logger = logging.getLogger(__name__)

FIT_FORMAT = 'vcam.fit/1'

IDENTIFICATION_FORMAT = 'vcam.identification/1'


def _plain(value: Any) -> Any:
    """
    numpy scalars/arrays and tuples to JSON-native values.
    """
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _dump_json(path: str | os.PathLike, obj: JSONObject) -> None:
    atomic_write(path, json.dumps(_plain(obj), indent=2, sort_keys=True) + '\n')


def _load_json(path: str | os.PathLike) -> JSONObject:
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def dataset_frame(data: TimeSeriesDataset) -> pd.DataFrame:
    frame = pd.DataFrame({'t': np.arange(1, data.T + 1), 'y': data.y})
    for k in range(data.p):
        frame['x{}'.format(k + 1)] = data.x[:, k]
    return frame


def dataset_to_csv(data: TimeSeriesDataset) -> str:
    buffer = io.StringIO()
    dataset_frame(data).to_csv(buffer, index=False, lineterminator='\n')
    return buffer.getvalue()


def write_dataset(path: str | os.PathLike, data: TimeSeriesDataset) -> None:
    atomic_write(path, dataset_to_csv(data))


def dataset_from_frame(frame: pd.DataFrame) -> TimeSeriesDataset:
    """
    Columns must be exactly `t, y, x1..xp` in that order and `t` must run
    1..T.
    """
    columns = [str(c) for c in frame.columns]
    for required in ('t', 'y'):
        if required not in columns:
            raise DatasetError('dataset is missing column `{}`'.format(required))
    covariates = [c for c in columns if c not in ('t', 'y')]
    expected = ['x{}'.format(k) for k in range(1, len(covariates) + 1)]
    for have, want in zip(covariates, expected):
        if have != want:
            if have.startswith('x') and have[1:].isdigit():
                raise DatasetError('dataset is missing column `{}`'.format(want))
            raise DatasetError('unexpected dataset column `{}`'.format(have))
    if columns != ['t', 'y'] + expected:
        raise DatasetError('dataset columns must be ordered t, y, x1..xp, got {}'.format(', '.join(columns)))
    if frame.isna().any().any():
        bad = frame.columns[frame.isna().any()][0]
        raise DatasetError('dataset column `{}` has missing values'.format(bad))
    try:
        t = frame['t'].to_numpy(dtype=np.float64)
        values = frame[['y'] + expected].to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DatasetError('dataset has non-numeric values: {}'.format(e))
    if not np.array_equal(t, np.arange(1, len(frame) + 1)):
        raise DatasetError('dataset column `t` must run 1..T in order')
    return TimeSeriesDataset(y=values[:, 0], x=values[:, 1:])


def read_dataset(path: str | os.PathLike) -> TimeSeriesDataset:
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except pd.errors.EmptyDataError:
        raise DatasetError('dataset file {} is empty'.format(path))
    return dataset_from_frame(frame)


def truth_to_json(truth: Truth) -> JSONObject:
    return {
        'example': truth.example.value,
        'seed': truth.seed,
        'stream_index': truth.stream_index,
        'T': int(truth.noise.size),
        'sigma': truth.sigma,
        'alpha_constant': list(truth.alpha_constant),
        'beta_linear': list(truth.beta_linear),
        'noise': truth.noise,
    }


def truth_from_json(obj: JSONObject) -> Truth:
    """
    Only the built-in examples can be rebuilt; custom designs hold code.
    """
    example = Example(obj['example'])
    if example is Example.CUSTOM:
        raise DatasetError('truth sidecar of a custom scenario cannot be reloaded')
    noise = np.asarray(obj['noise'], dtype=np.float64)
    noise.setflags(write=False)
    return Truth(
        example=example,
        design=design_for(example),
        noise=noise,
        sigma=float(obj.get('sigma', 1.0)),
        seed=obj.get('seed'),
        stream_index=obj.get('stream_index'),
    )


def write_truth(path: str | os.PathLike, truth: Truth) -> None:
    _dump_json(path, truth_to_json(truth))


def read_truth(path: str | os.PathLike) -> Truth:
    return truth_from_json(_load_json(path))


def component_to_json(f: ComponentFunction) -> JSONObject:
    return {
        'kind': f.kind.value,
        'order': f.basis.order,
        'interior_count': f.basis.interior_count,
        'domain': list(f.domain),
        'knots': f.basis.knots,
        'coefficients': f.coeffs,
        'anchor': f.anchor,
        'polynomial_degree': f.polynomial_degree,
    }


def component_from_json(obj: JSONObject) -> ComponentFunction:
    spec = SplineSpec(
        order=int(obj['order']),
        interior_count=int(obj['interior_count']),
        domain=(float(obj['domain'][0]), float(obj['domain'][1])),
    )
    basis = SplineBasis(spec=spec, knots=np.asarray(obj['knots'], dtype=np.float64))
    return ComponentFunction(
        basis=basis,
        coeffs=np.asarray(obj['coefficients'], dtype=np.float64),
        kind=ComponentKind(obj['kind']),
        anchor=obj.get('anchor'),
        polynomial_degree=obj.get('polynomial_degree'),
    )


def fit_to_json(fit: VcamFit) -> JSONObject:
    return {
        'format': FIT_FORMAT,
        'version': __version__,
        'alpha': [component_to_json(f) for f in fit.alpha],
        'beta': [component_to_json(f) for f in fit.beta],
        'scales': fit.scales,
        'diagnostics': fit.diagnostics,
    }


def fit_from_json(obj: JSONObject) -> VcamFit:
    if obj.get('format') != FIT_FORMAT:
        raise DatasetError('not a fit artifact (format `{}`)'.format(obj.get('format')))
    return VcamFit(
        alpha=tuple(component_from_json(f) for f in obj['alpha']),
        beta=tuple(component_from_json(f) for f in obj['beta']),
        scales=np.asarray(obj['scales'], dtype=np.float64),
        diagnostics=dict(obj.get('diagnostics', {})),
    )


def write_fit(path: str | os.PathLike, fit: VcamFit) -> None:
    _dump_json(path, fit_to_json(fit))


def read_fit(path: str | os.PathLike) -> VcamFit:
    return fit_from_json(_load_json(path))


def _path_to_json(path: list[GridPoint]) -> list[JSONObject]:
    return [
        {
            'value': point.value,
            'bic': None if not np.isfinite(point.bic) else point.bic,
            'rss': point.rss,
            'flags': None if point.flags is None else list(point.flags),
        }
        for point in path
    ]


def identification_to_json(result: IdentificationResult) -> JSONObject:
    return {
        'format': IDENTIFICATION_FORMAT,
        'version': __version__,
        'lambda': result.lam,
        'mu': result.mu,
        'd1': result.d1,
        'd2': result.d2,
        'alpha_constant': list(result.alpha_constant),
        'beta_linear': list(result.beta_linear),
        'pure_additive_terms': result.pure_additive_terms(),
        'pure_varying_coefficient_terms': result.pure_varying_coefficient_terms(),
        'lambda_bic': _path_to_json(result.lambda_path),
        'mu_bic': _path_to_json(result.mu_path),
        'stage1': {
            'rss': result.stage1.rss,
            'alpha_derivative_norms': list(result.stage1.derivative_norms),
            'norm_trajectory': result.stage1.trace.norms,
            'objective_trajectory': result.stage1.trace.objectives,
            'converged': result.stage1.trace.converged,
            'iterations': result.stage1.trace.iterations,
        },
        'stage2': {
            'rss': result.stage2.rss,
            'beta_second_derivative_norms': list(result.stage2.derivative_norms),
            'norm_trajectory': result.stage2.trace.norms,
            'objective_trajectory': result.stage2.trace.objectives,
            'converged': result.stage2.trace.converged,
            'iterations': result.stage2.trace.iterations,
        },
        'fit': fit_to_json(result.fit),
    }


def write_identification(path: str | os.PathLike, result: IdentificationResult) -> None:
    _dump_json(path, identification_to_json(result))


def write_grid(path: str | os.PathLike, frame: pd.DataFrame) -> None:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator='\n')
    atomic_write(path, buffer.getvalue())


def write_monte_carlo(csv_path: str | os.PathLike, table_path: str | os.PathLike, report: MonteCarloReport) -> None:
    atomic_write(csv_path, report.to_csv())
    atomic_write(table_path, report.to_table())
