import pytest

from vcam.conf import settings


def pytest_addoption(parser):
    parser.addoption(
        '--runslow', action='store_true', default=False, help='run the Monte Carlo acceptance tests'
    )


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: Monte Carlo acceptance test, minutes of CPU')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow') or settings.RUN_SLOW_TESTS:
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow or VCAM_RUN_SLOW=1')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)
