import os

from vcam.__about__ import __version__


def _setting(name: str, default, cast=str):
    """
    Settings come from `VCAM_<NAME>` environment variables, falling back to
    the literal default.
    """
    try:
        raw = os.environ['VCAM_{}'.format(name)]
    except KeyError:
        return default
    if cast is bool:
        return raw.strip().lower() in ('1', 'true', 'yes', 'on')
    return cast(raw)


REPORT_BANNER: str = 'vcam/{}'.format(__version__)

THREADS: int = _setting('THREADS', 1, int)

LOG_LEVEL: str = _setting('LOG_LEVEL', 'WARNING')

DEFAULT_SEED: int = _setting('DEFAULT_SEED', 20240101, int)

RUN_SLOW_TESTS: bool = _setting('RUN_SLOW', False, bool)
