"""
Parallel - Bounded worker pool for independent per-region and per-scene work
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar
import logging
import os

from dotenv import load_dotenv


logger = logging.getLogger(__name__)

THREADS_ENV = "REGOR_THREADS"

T = TypeVar("T")
R = TypeVar("R")

_dotenv_loaded = False


def worker_count(default: int = 1) -> int:
    """Worker bound from REGOR_THREADS (a .env file in the working directory is honoured)"""
    global _dotenv_loaded
    if not _dotenv_loaded:
        load_dotenv(override=False)
        _dotenv_loaded = True
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV}={raw!r}; using {default}")
        return default
    if value < 1:
        logger.warning(f"Ignoring {THREADS_ENV}={value} (must be >= 1); using {default}")
        return default
    return value


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """
    Map `fn` over `items`, returning results in input order

    Args:
        fn: Function without side effects on shared state
        items: Work items
        workers: Thread bound; None reads REGOR_THREADS, 1 runs inline
    """
    items = list(items)
    if workers is None:
        workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
