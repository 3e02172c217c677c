"""Bounded concurrency for frame I/O and independent renders."""

import asyncio
from typing import Any, Awaitable, Callable, Iterable, TypeVar

from utils.errors import InvalidParameterError

T = TypeVar("T")


async def gather_with_concurrency(n: int, *tasks: Awaitable[T]) -> list[T]:
    """Await ``tasks`` with at most ``n`` in flight.

    Results keep task order; the first exception propagates.

    Raises:
        InvalidParameterError: If ``n`` is below one
    """
    if n < 1:
        raise InvalidParameterError(f"concurrency limit must be at least 1, got {n}")
    semaphore = asyncio.Semaphore(n)

    async def bounded(task: Awaitable[T]) -> T:
        async with semaphore:
            return await task

    return list(await asyncio.gather(*(bounded(task) for task in tasks)))


async def map_in_threads(n: int, func: Callable[..., T], items: Iterable[Any]) -> list[T]:
    """Run a blocking function over ``items`` in worker threads.

    At most ``n`` calls are in flight; results keep the order of ``items``.
    """

    async def call(item: Any) -> T:
        return await asyncio.to_thread(func, item)

    return await gather_with_concurrency(n, *(call(item) for item in items))
