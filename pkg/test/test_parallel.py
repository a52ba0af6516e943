import operator

import pytest

from modules.parallel import WorkerPool, chunk_ranges, map_reduce, worker_state


def _square(x):
    return x * x


def _remember(offset):
    worker_state['offset'] = offset


def _shifted(x):
    return [x + worker_state['offset']]


@pytest.mark.parametrize('n_items, n_chunks', [(0, 4), (1, 4), (10, 3), (10, 10), (7, 20), (100, 1)])
def test_chunk_ranges_cover_everything_in_order(n_items, n_chunks):
    ranges = chunk_ranges(n_items, n_chunks)
    covered = [i for start, stop in ranges for i in range(start, stop)]
    assert covered == list(range(n_items))
    assert len(ranges) <= max(1, n_chunks)
    assert all(stop > start for start, stop in ranges)


def test_chunks_are_balanced():
    sizes = [stop - start for start, stop in chunk_ranges(10, 3)]
    assert max(sizes) - min(sizes) <= 1


@pytest.mark.parametrize('processes', [1, 2])
def test_map_reduce_folds_in_order(processes):
    args = [(i,) for i in range(20)]
    assert map_reduce(_square, operator.add, args, processes) == sum(i * i for i in range(20))
    with WorkerPool(processes, _remember, (100,)) as pool:
        assert pool.map_reduce(_shifted, operator.add, args) == list(range(100, 120))
