from typing import Callable, Iterable, List

from joblib import Parallel, delayed

from hyperlab.settings import Settings


def thread_cap() -> int:
    """Worker count from HYPERLAB_THREADS (default 1)."""
    return max(1, Settings().threads)


def run_replicas(task: Callable, arguments: Iterable, n_jobs: int = None) -> List:
    """Evaluate task(*args) for every args tuple; results keep submission order."""
    n_jobs = n_jobs or thread_cap()
    arguments = list(arguments)
    if n_jobs == 1 or len(arguments) < 2:
        return [task(*args) for args in arguments]
    return Parallel(n_jobs=n_jobs)(delayed(task)(*args) for args in arguments)
