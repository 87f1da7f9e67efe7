import concurrent.futures
from typing import Callable, Iterable, TypeVar

from vcam.conf import settings


_In = TypeVar('_In')
_Out = TypeVar('_Out')


def resolve_threads(threads: int | None) -> int:
    """
    Explicit `threads` wins, otherwise the `VCAM_THREADS` setting.
    """
    if threads is None:
        threads = settings.THREADS
    return max(1, int(threads))


def ordered_map(
    func: Callable[[_In], _Out], items: Iterable[_In], threads: int | None = None
) -> list[_Out]:
    """
    Kwargs:
        func: pure function applied to every item
        items: independent work items
        threads: worker count, `None` falls back to settings

    Returns:
        `[func(item) for item in items]`, in input order whatever the thread
        count. Work is submitted to a `ThreadPoolExecutor`; exceptions raised
        by `func` propagate from the first failing item (in input order).
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [func(item) for item in items]

    with concurrent.futures.ThreadPoolExecutor(max_workers=min(threads, len(items))) as executor:
        futures = [executor.submit(func, item) for item in items]
        return [future.result() for future in futures]
