"""
Worker Pool and Seed Derivation
Order-preserving process pool for independent runs and stable per-task seeds
"""

import logging
import os
from multiprocessing import Pool, cpu_count
from typing import Any, Callable, List, Sequence

import numpy as np

from config.constants import ENV_JOBS

logger = logging.getLogger(__name__)


def default_jobs() -> int:
    """
    Worker count from the environment, falling back to a single process.

    Returns:
        int: number of worker processes to use when --jobs is not given.
    """
    raw = os.getenv(ENV_JOBS, "1")
    try:
        jobs = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", ENV_JOBS, raw)
        return 1
    return cpu_count() if jobs <= 0 else jobs


def derive_seed(master: int, *keys: int) -> int:
    """
    Child seed for a task identified by integer keys.

    The result depends only on (master, keys), so outputs do not change with the
    number of workers or the order in which tasks finish.
    """
    sequence = np.random.SeedSequence([int(master), *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def run_parallel(func: Callable[..., Any], tasks: Sequence[tuple], jobs: int = 1) -> List[Any]:
    """
    Evaluate func(*task) for every task, in task order.

    Args:
        func: picklable module-level callable
        tasks: argument tuples
        jobs: worker processes; 1 or fewer runs serially in this process

    Returns:
        list: results in the same order as tasks
    """
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [func(*task) for task in tasks]

    processes = min(jobs, len(tasks))
    logger.info("dispatching %d tasks to %d worker processes", len(tasks), processes)
    with Pool(processes=processes) as pool:
        return pool.starmap(func, tasks)
