"""Process-pool map/reduce used for kmer counting, E-steps and decoding."""

import functools
import logging
import multiprocessing
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

# Per-process state installed by a pool initializer. In serial mode the
# initializer runs in the parent and fills the same dict.
worker_state: Dict[str, Any] = {}


class _UnpackArgs:
    """Wrapper around function that accepts arguments as a single tuple.

    A class rather than a closure so the pool can pickle it.
    """

    def __init__(self, function: Callable[..., Any]) -> None:
        self.function = function

    def __call__(self, arguments: tuple) -> Any:
        return self.function(*arguments)


def chunk_ranges(n_items: int, n_chunks: int) -> List[tuple[int, int]]:
    """Split range(n_items) into at most n_chunks contiguous (start, stop) pairs."""
    n_chunks = max(1, min(n_chunks, n_items))
    if n_items == 0:
        return []
    bounds = [round(i * n_items / n_chunks) for i in range(n_chunks + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(n_chunks) if bounds[i] < bounds[i + 1]]


def _install(initializer: Optional[Callable[..., None]], initargs: tuple) -> None:
    worker_state.clear()
    if initializer is not None:
        initializer(*initargs)


class WorkerPool:
    """Ordered map/reduce over a multiprocessing.Pool, or in-process when processes == 1.

    Results are consumed with the ordered ``imap`` and folded left to right,
    so the reduction order never depends on scheduling.
    """

    def __init__(self, processes: int = 1, initializer: Optional[Callable[..., None]] = None,
                 initargs: tuple = ()) -> None:
        """
        Args:
            processes: number of worker processes; 1 runs everything in this process
            initializer: called once per worker with initargs, may fill worker_state
            initargs: arguments for initializer
        """
        self.processes = max(1, processes)
        self._pool = None
        if self.processes > 1:
            self._pool = multiprocessing.Pool(processes=self.processes, initializer=_install,
                                              initargs=(initializer, initargs))
            logger.debug("Started pool with %d processes", self.processes)
        else:
            _install(initializer, initargs)

    def map(self, map_function: Callable[..., R], map_arguments: Iterable[tuple],
            chunksize: int = 1) -> Iterable[R]:
        map_f = _UnpackArgs(map_function)
        if self._pool is None:
            return map(map_f, map_arguments)
        return self._pool.imap(map_f, map_arguments, chunksize=chunksize)

    def map_reduce(self, map_function: Callable[..., R], reduce_function: Callable[[R, R], R],
                   map_arguments: Sequence[tuple], chunksize: int = 1) -> R:
        """reduce(reduce_function, map(map_function, map_arguments)) with ordered results."""
        return functools.reduce(reduce_function, self.map(map_function, map_arguments, chunksize))

    def close(self) -> None:
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def __enter__(self) -> 'WorkerPool':
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def map_reduce(map_function: Callable[..., R], reduce_function: Callable[[R, R], R],
               map_arguments: Sequence[tuple], processes: int = 1) -> R:
    """One-shot map/reduce without a worker initializer."""
    with WorkerPool(processes) as pool:
        return pool.map_reduce(map_function, reduce_function, map_arguments)
