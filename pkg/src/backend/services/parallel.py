"""
Parallel Map

Ordered map over independent work items on a thread pool. threads <= 1 runs
inline so results and logs stay in submission order.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

_default_threads = 1


def set_default_threads(threads: int) -> None:
    """Process-wide default used when parallel_map gets threads=None"""
    global _default_threads
    _default_threads = max(1, int(threads))


def get_default_threads() -> int:
    return _default_threads


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Apply fn to every item; results keep the order of items"""
    items = list(items)
    workers = _default_threads if threads is None else max(1, int(threads))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug(f"Mapping {len(items)} items over {workers} threads")
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def chunked(items: List[T], size: int) -> List[List[T]]:
    size = max(1, int(size))
    return [items[i:i + size] for i in range(0, len(items), size)]
