"""Worker pool for independent jobs.

Jobs (tasks, ensemble members, dedupe candidates) are fanned out over a thread
pool and always collected in input order, so results never depend on timing.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

from hypertab.config import get_settings

logger = logging.getLogger(__name__)

ItemT = TypeVar("ItemT")
ResultT = TypeVar("ResultT")


def resolve_workers(workers: Optional[int] = None) -> int:
    """Requested worker count, capped by ILTM_THREADS."""
    cap = get_settings().workers
    if workers is None:
        return cap
    return max(1, min(workers, cap))


def run_ordered(
    fn: Callable[[ItemT], ResultT],
    items: Sequence[ItemT],
    workers: Optional[int] = None,
) -> List[ResultT]:
    """Apply fn to every item; results are returned in input order."""
    n_workers = resolve_workers(workers)
    if n_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug(f"Running {len(items)} jobs on {n_workers} workers")
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))
