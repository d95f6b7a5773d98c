"""
Async utilities for fanning blocking work out over a bounded thread pool
"""

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, List, Sequence

logger = logging.getLogger(__name__)


async def _gather_blocking(funcs: Sequence[Callable[[], Any]], threads: int) -> List[Any]:
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="bconcord") as pool:
        futures = [loop.run_in_executor(pool, func) for func in funcs]
        return await asyncio.gather(*futures, return_exceptions=True)


def run_blocking_tasks(funcs: Sequence[Callable[[], Any]], threads: int = 1,
                       return_exceptions: bool = False) -> List[Any]:
    """
    Run zero-argument callables concurrently and return their results in submission order.

    Args:
        funcs: the work items
        threads: maximum number of worker threads
        return_exceptions: hand failures back in the result list instead of raising the first one
    """
    if threads < 1:
        raise ValueError(f"threads must be at least 1, got {threads}")
    if not funcs:
        return []

    if threads == 1 or len(funcs) == 1:
        results = []
        for func in funcs:
            try:
                results.append(func())
            except Exception as e:
                if not return_exceptions:
                    raise
                results.append(e)
    else:
        results = asyncio.run(_gather_blocking(funcs, min(threads, len(funcs))))

    failures = [r for r in results if isinstance(r, BaseException)]
    if failures:
        logger.warning(f"{len(failures)} of {len(funcs)} tasks failed: {failures[0]!r}")
        if not return_exceptions:
            raise failures[0]
    return results
