import threading
import time
from unittest.mock import patch

import pytest

from vcam.nonblocking.threadpool import ordered_map, resolve_threads


def test_results_in_input_order():
    """
    Results come back in input order even when later items finish first.
    """
    def slow_for_small(n):
        time.sleep(0.01 * (5 - n))
        return n * n

    assert ordered_map(slow_for_small, range(5), threads=4) == [0, 1, 4, 9, 16]


def test_single_thread_runs_inline():
    """
    With one worker nothing is submitted to a pool: every call runs on the
    calling thread.
    """
    seen = set()

    def record(n):
        seen.add(threading.get_ident())
        return n

    assert ordered_map(record, [1, 2, 3], threads=1) == [1, 2, 3]
    assert seen == {threading.get_ident()}


def test_threads_fall_back_to_setting():
    """
    `threads=None` reads the `VCAM_THREADS` setting at call time.
    """
    with patch('vcam.nonblocking.threadpool.settings.THREADS', 3):
        assert resolve_threads(None) == 3
    assert resolve_threads(0) == 1
    assert resolve_threads(8) == 8


def test_exception_propagates():
    """
    An exception raised by the mapped function reaches the caller.
    """
    def explode(n):
        if n == 2:
            raise ValueError('boom')
        return n

    with pytest.raises(ValueError):
        ordered_map(explode, range(4), threads=2)


def test_empty_input():
    assert ordered_map(lambda n: n, [], threads=4) == []
