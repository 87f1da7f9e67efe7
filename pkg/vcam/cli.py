"""
vcam command line.

    vcam simulate --example ex2 --T 900 --seed 7 --output data.csv
    vcam fit --input data.csv --output fit.json
    vcam identify --input data.csv --fit fit.json --output ident.json
    vcam mc --config scenario.toml --Q 10 --output report
    vcam grids --fit fit.json --output grids/

Every option can also be given in a TOML file (`--config`) using the same
key, dotted keys for the `estimation.` and `penalty.` sections. Flags win
over the file, the file over `VCAM_THREADS` and the built-in defaults.
"""
import argparse
import dataclasses
import logging
import os
import sys
import tomllib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

from vcam import artifacts
from vcam.conf import settings
from vcam.errors import ConfigurationError, VcamError
from vcam.estimation import EstimationConfig, fit_three_step, select_by_bic
from vcam.identification import PenaltyConfig, identify
from vcam.model import function_grid
from vcam.numerics import RngStream
from vcam.simulation import Example, ScenarioSpec, design_for, figure_grids, generate, run_monte_carlo
from vcam.splines import KnotPlacement
from vcam.utils import flatten_dotted


logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


class Command(Enum):
    SIMULATE = 'simulate'
    FIT = 'fit'
    IDENTIFY = 'identify'
    MC = 'mc'
    GRIDS = 'grids'


def _int(minimum: int) -> Callable[[Any], int]:
    def parse(value: Any) -> int:
        number = int(value)
        if number != float(value) or number < minimum:
            raise ValueError('expected an integer >= {}'.format(minimum))
        return number
    return parse


def _float(minimum: float | None = None, strict: bool = False) -> Callable[[Any], float]:
    def parse(value: Any) -> float:
        number = float(value)
        if minimum is not None and (number <= minimum if strict else number < minimum):
            raise ValueError('expected a number {} {}'.format('>' if strict else '>=', minimum))
        return number
    return parse


def _list(item: Callable[[Any], Any]) -> Callable[[Any], tuple]:
    def parse(value: Any) -> tuple:
        if isinstance(value, str):
            value = [v for v in value.replace(' ', '').split(',') if v]
        if not value:
            raise ValueError('expected a non-empty list')
        return tuple(item(v) for v in value)
    return parse


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError('expected a boolean')


def _log_level(value: Any) -> str:
    level = str(value).upper()
    if level not in LOG_LEVELS:
        raise ValueError('expected one of {}'.format(', '.join(LOG_LEVELS)))
    return level


# key -> parser; flags are `--` + key with `_` written as `-`
KEYS: dict[str, Callable[[Any], Any]] = {
    'input': str,
    'output': str,
    'fit': str,
    'truth': str,
    'grids_dir': str,
    'example': Example,
    'T': _int(1),
    'Q': _int(1),
    'seed': _int(0),
    'stream': _int(0),
    'sigma': _float(0.0),
    'burn_in': _int(0),
    'I': _int(1),
    'K': _int(0),
    'identify': _bool,
    'compare': _bool,
    'points': _int(2),
    'threads': _int(1),
    'log_level': _log_level,
    'estimation.K_grid': _list(_int(0)),
    'estimation.I_grid': _list(_int(1)),
    'estimation.order': _int(1),
    'estimation.order_step1': _int(1),
    'estimation.order_step2': _int(1),
    'estimation.order_step3': _int(1),
    'estimation.anchor': _float(),
    'estimation.placement': KnotPlacement,
    'estimation.extra_rounds': _int(0),
    'estimation.step1_smoothing': _float(0.0),
    'penalty.a': _float(2.0, strict=True),
    'penalty.lambda_grid': _list(_float(0.0, strict=True)),
    'penalty.mu_grid': _list(_float(0.0, strict=True)),
    'penalty.zero_threshold': _float(0.0, strict=True),
    'penalty.lqa_floor': _float(0.0, strict=True),
    'penalty.max_iter': _int(1),
    'penalty.coef_tol': _float(0.0, strict=True),
    'penalty.knot_exponent': _float(),
    'penalty.threshold_on_scaled_norm': _bool,
}

REQUIRED: dict[Command, tuple[str, ...]] = {
    Command.SIMULATE: ('output',),
    Command.FIT: ('input', 'output'),
    Command.IDENTIFY: ('input', 'fit', 'output'),
    Command.MC: ('output',),
    Command.GRIDS: ('output',),
}

INPUT_FILES = ('input', 'fit')


def flag_for(key: str) -> str:
    return '--' + key.replace('_', '-')


def _key_for(flag: str) -> str:
    name = flag.lstrip('-').split('=', 1)[0]
    for key in KEYS:
        if flag_for(key) == '--' + name:
            return key
    return name


@dataclass(frozen=True)
class CommandConfig:
    command: Command
    values: dict[str, Any] = field(default_factory=dict)

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    @property
    def threads(self) -> int:
        return self.values.get('threads', settings.THREADS)

    @property
    def seed(self) -> int:
        return self.values.get('seed', settings.DEFAULT_SEED)

    @property
    def example(self) -> Example:
        return self.values.get('example', Example.EX1)

    def estimation_config(self) -> EstimationConfig:
        kwargs: dict[str, Any] = {}
        if 'estimation.order' in self.values:
            order = self.values['estimation.order']
            kwargs.update(order_step1=order, order_step2=order, order_step3=order)
        for key, name in (
            ('estimation.order_step1', 'order_step1'),
            ('estimation.order_step2', 'order_step2'),
            ('estimation.order_step3', 'order_step3'),
            ('estimation.K_grid', 'k_grid'),
            ('estimation.I_grid', 'i_grid'),
            ('estimation.anchor', 'anchor'),
            ('estimation.placement', 'covariate_placement'),
            ('estimation.extra_rounds', 'extra_rounds'),
            ('estimation.step1_smoothing', 'step1_smoothing'),
        ):
            if key in self.values:
                kwargs[name] = self.values[key]
        return EstimationConfig(**kwargs)

    def penalty_config(self) -> PenaltyConfig:
        kwargs = {
            key.split('.', 1)[1]: value for key, value in self.values.items() if key.startswith('penalty.')
        }
        return PenaltyConfig(**kwargs)

    def scenario_spec(self) -> ScenarioSpec:
        example = self.example
        if example is Example.CUSTOM:
            raise ConfigurationError('example', 'custom scenarios are only available from Python')
        return ScenarioSpec(
            example=example,
            T=self.get('T', 600),
            Q=self.get('Q', 100),
            base_seed=self.seed,
            estimation=self.estimation_config(),
            penalty=self.penalty_config(),
            segment_length=self.get('I'),
            knot_count=self.get('K'),
            identify=self.get('identify'),
            compare=self.get('compare', True),
            sigma=self.get('sigma', 1.0),
            burn_in=self.get('burn_in', 0),
        )


def _coerce(key: str, value: Any) -> Any:
    if key not in KEYS:
        raise ConfigurationError(key, 'unknown key')
    try:
        return KEYS[key](value)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(key, 'invalid value {!r} ({})'.format(value, e))


def read_config_file(path: str) -> dict[str, Any]:
    if not os.path.isfile(path):
        raise ConfigurationError('config', 'no such file {}'.format(path))
    try:
        with open(path, 'rb') as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError('config', 'cannot parse {}: {}'.format(path, e))
    return {key: _coerce(key, value) for key, value in flatten_dotted(raw).items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='vcam', description=__doc__.split('\n\n')[0].strip(), allow_abbrev=False)
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command in Command:
        sub = subparsers.add_parser(command.value, allow_abbrev=False)
        sub.add_argument('--config', type=str, default=argparse.SUPPRESS, help='TOML file with option keys')
        for key in KEYS:
            sub.add_argument(flag_for(key), dest=key, type=str, default=argparse.SUPPRESS, metavar=key.upper())
    return parser


def parse_config(argv: Sequence[str] | None = None) -> CommandConfig:
    """
    Flags override the `--config` file. Unknown options and keys raise
    `ConfigurationError` naming the key.
    """
    args, unknown = build_parser().parse_known_args(argv)
    if unknown:
        flag = next((u for u in unknown if u.startswith('-')), unknown[0])
        raise ConfigurationError(_key_for(flag), 'unknown key')

    parsed = vars(args)
    command = Command(parsed.pop('command'))
    values: dict[str, Any] = {}
    if 'config' in parsed:
        values.update(read_config_file(parsed.pop('config')))
    for key, raw in parsed.items():
        values[key] = _coerce(key, raw)

    for key in REQUIRED[command]:
        if key not in values:
            raise ConfigurationError(key, 'required by `{}`'.format(command.value))
    for key in INPUT_FILES:
        if key in values and not os.path.isfile(values[key]):
            raise ConfigurationError(key, 'no such file {}'.format(values[key]))
    return CommandConfig(command=command, values=values)


def _simulate(config: CommandConfig) -> None:
    example = config.example
    simulated = generate(
        config.get('T', 600),
        RngStream(config.seed, config.get('stream', 0)),
        design_for(example),
        example,
        sigma=config.get('sigma', 1.0),
        burn_in=config.get('burn_in', 0),
    )
    output = config.get('output')
    artifacts.write_dataset(output, simulated.data)
    artifacts.write_truth(config.get('truth', output + '.truth.json'), simulated.truth)
    logger.info('wrote %d observations to %s', simulated.data.T, output)


def _fit(config: CommandConfig):
    data = artifacts.read_dataset(config.get('input'))
    estimation = config.estimation_config()
    if 'I' in config.values or 'K' in config.values:
        if not ('I' in config.values and 'K' in config.values):
            raise ConfigurationError('I' if 'I' not in config.values else 'K', 'fixed I and K must be given together')
        fit = fit_three_step(data, estimation, config.get('I'), config.get('K'))
    else:
        selection = select_by_bic(data, estimation, config.threads)
        fit = dataclasses.replace(selection.fit, diagnostics=dict(selection.fit.diagnostics, bic_table=selection.table))
    artifacts.write_fit(config.get('output'), fit)
    if 'grids_dir' in config.values:
        _write_fit_grids(fit, config.get('grids_dir'), config.get('points', 201))


def _identify(config: CommandConfig) -> None:
    data = artifacts.read_dataset(config.get('input'))
    fit = artifacts.read_fit(config.get('fit'))
    result = identify(data, fit, config.penalty_config(), config.threads)
    artifacts.write_identification(config.get('output'), result)


def _mc(config: CommandConfig) -> None:
    report = run_monte_carlo(config.scenario_spec(), config.threads)
    prefix = config.get('output')
    artifacts.write_monte_carlo(prefix + '.csv', prefix + '.txt', report)
    if report.failures:
        logger.warning('%d of %d replicates failed', len(report.failures), report.Q)


def _write_fit_grids(fit, directory: str, points: int) -> None:
    os.makedirs(directory, exist_ok=True)
    for k, alpha in enumerate(fit.alpha):
        artifacts.write_grid(os.path.join(directory, 'alpha{}.csv'.format(k)), function_grid(alpha, points))
    for k, beta in enumerate(fit.beta, start=1):
        artifacts.write_grid(os.path.join(directory, 'beta{}.csv'.format(k)), function_grid(beta, points))


def _grids(config: CommandConfig) -> None:
    directory = config.get('output')
    if 'fit' in config.values:
        _write_fit_grids(artifacts.read_fit(config.get('fit')), directory, config.get('points', 201))
        return
    if config.get('example') is not Example.EX1:
        raise ConfigurationError('fit', '`grids` needs a fit artifact or `--example ex1`')
    grids = figure_grids(
        seed=config.seed,
        T=config.get('T', 500),
        knot_count=config.get('K', 3),
        segment_length=config.get('I', 25),
        config=config.estimation_config(),
        n_points=config.get('points', 201),
    )
    os.makedirs(directory, exist_ok=True)
    for name, frame in grids.items():
        artifacts.write_grid(os.path.join(directory, '{}.csv'.format(name)), frame)


HANDLERS: dict[Command, Callable[[CommandConfig], Any]] = {
    Command.SIMULATE: _simulate,
    Command.FIT: _fit,
    Command.IDENTIFY: _identify,
    Command.MC: _mc,
    Command.GRIDS: _grids,
}


def _origin(e: BaseException) -> str:
    """
    Innermost `vcam.*` module on the traceback, `vcam` if there is none.
    """
    origin = 'vcam'
    tb = e.__traceback__
    while tb is not None:
        name = tb.tb_frame.f_globals.get('__name__', '')
        if name.startswith('vcam.') and name != 'vcam.errors':
            origin = name
        tb = tb.tb_next
    return origin


def report_error(e: BaseException) -> None:
    sys.stderr.write('{}: {}\n'.format(_origin(e), e))


def run(config: CommandConfig) -> int:
    try:
        HANDLERS[config.command](config)
    except ConfigurationError as e:
        report_error(e)
        return 2
    except (VcamError, OSError) as e:
        report_error(e)
        return 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = parse_config(argv)
    except ConfigurationError as e:
        report_error(e)
        return 2
    logging.basicConfig(
        level=config.get('log_level', settings.LOG_LEVEL),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    return run(config)
