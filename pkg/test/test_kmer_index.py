import io
import random
from pathlib import Path

import numpy as np
import pytest

from modules.errors import InputError, KmerError
from modules.kmer import Kmer, bits_to_string, encode_kmer, hamming_bits
from modules.kmer_index import (NeighborhoodIndex, StateSpace, build_state_space, load_state_space,
                                neighborhood, substitution_masks, suggest_kmer_length)
from modules.seqio import Read, read_fastq


def _read(rid: str, bases: str) -> Read:
    return Read(rid, bases, (30,) * len(bases))


def _random_reads(seed: int, n: int, length: int):
    rng = random.Random(seed)
    return [_read(f"r{i}", ''.join(rng.choice('ACGTN' if rng.random() < 0.1 else 'ACGT')
                                   for _ in range(length))) for i in range(n)]


def test_build_counts_kmers_and_successions():
    space = build_state_space([_read('a', 'ACGTA'), _read('b', 'CGTAN')], 3)
    assert [space.kmer_string(i) for i in range(len(space))] == ['ACG', 'CGT', 'GTA']
    assert space.occurrences.tolist() == [1, 2, 2]
    # ACG->T once, CGT->A twice, GTA is never followed by a base (the N blocks it)
    assert space.succ_counts.tolist() == [[0, 0, 0, 1], [2, 0, 0, 0], [0, 0, 0, 0]]
    assert space.total_successions() == 3
    assert space.successors[0].tolist() == [-1, -1, -1, 1]
    assert space.predecessors[1].tolist() == [0, -1, -1, -1]


def test_state_ids_are_sorted_ranks():
    space = build_state_space(_random_reads(3, 40, 25), 6)
    assert np.all(space.states[1:] > space.states[:-1])
    for i in range(len(space)):
        assert space.id_of(int(space.states[i])) == i
    assert encode_kmer(space.kmer_string(5)) in space


def test_build_is_independent_of_order_and_threads():
    reads = _random_reads(11, 60, 30)
    serial = build_state_space(reads, 7)
    shuffled = list(reversed(reads))
    parallel = build_state_space(shuffled, 7, threads=2)
    assert serial.states.tolist() == parallel.states.tolist()
    assert serial.occurrences.tolist() == parallel.occurrences.tolist()
    assert serial.succ_counts.tolist() == parallel.succ_counts.tolist()


def test_build_rejects_bad_k_and_empty_input():
    reads = [_read('a', 'ACGT')]
    with pytest.raises(KmerError):
        build_state_space(reads, 5)
    with pytest.raises(KmerError):
        build_state_space(reads, 0)
    with pytest.raises(InputError):
        build_state_space([], 3)


def test_dump_and_load():
    space = build_state_space(_random_reads(5, 20, 15), 4)
    out = io.StringIO()
    space.dump(out)
    loaded = load_state_space(io.StringIO('# header\n' + out.getvalue()))
    assert loaded.states.tolist() == space.states.tolist()
    assert loaded.succ_counts.tolist() == space.succ_counts.tolist()
    with pytest.raises(InputError):
        load_state_space(io.StringIO('ACG\t1\t0\n'))


def test_restrict_keeps_counts_and_relinks():
    space = build_state_space([_read('a', 'AACCGGTT')], 3)
    keep = np.ones(len(space), dtype=bool)
    keep[space.id_of(encode_kmer('CCG').bits)] = False
    sub = space.restrict(keep)
    assert len(sub) == len(space) - 1
    acc = sub.id_of(encode_kmer('ACC').bits)
    assert sub.successors[acc].tolist() == [-1, -1, -1, -1]
    assert sub.occurrences.tolist() == space.occurrences[keep].tolist()


def test_from_kmers_has_zero_counts():
    space = StateSpace.from_kmers(2, [encode_kmer('TT'), encode_kmer('AC').bits])
    assert [space.kmer_string(i) for i in range(2)] == ['AC', 'TT']
    assert space.total_successions() == 0


@pytest.mark.parametrize('genome_length, k', [(250_000, 13), (500_000, 14), (10_000, 11)])
def test_suggest_kmer_length(genome_length, k):
    assert suggest_kmer_length(genome_length) == k


def test_substitution_masks_count():
    # sum over i <= d of C(k, i) 3^i
    assert len(substitution_masks(5, 0)) == 1
    assert len(substitution_masks(5, 1)) == 1 + 15
    assert len(substitution_masks(5, 2)) == 1 + 15 + 90
    assert len(set(substitution_masks(6, 2).tolist())) == 1 + 18 + 135


@pytest.mark.parametrize('d', [0, 1, 2, 3, 4, 5, 8])
def test_neighborhood_matches_brute_force(d):
    rng = random.Random(100 + d)
    k = 8
    reads = [_read(f"r{i}", ''.join(rng.choice('ACGT') for _ in range(20))) for i in range(30)]
    # near copies so small radii have something to find
    reads += [_read(f"m{i}", r.bases[:5] + 'T' + r.bases[6:]) for i, r in enumerate(reads[:10])]
    space = build_state_space(reads, k)
    index = NeighborhoodIndex(space, d)
    states = space.states.tolist()
    for _ in range(40):
        center = rng.choice(states) if rng.random() < 0.7 else \
            encode_kmer(''.join(rng.choice('ACGT') for _ in range(k))).bits
        expected = tuple(i for i, s in enumerate(states) if hamming_bits(center, s) <= d)
        assert index.members(center) == expected
        assert neighborhood(Kmer(k, center), d, space, index).members == expected


def test_neighborhood_is_memoised():
    space = build_state_space(_random_reads(1, 10, 20), 5)
    index = NeighborhoodIndex(space, 2)
    center = int(space.states[0])
    first = index.members(center)
    assert index.members(center) is first
    assert index.cache_size() == 1
    assert bits_to_string(center, 5) == space.kmer_string(0)


def test_neighborhood_rejects_mismatched_k():
    space = build_state_space([_read('a', 'ACGTAC')], 4)
    with pytest.raises(KmerError):
        neighborhood(encode_kmer('ACG'), 1, space)


def test_fixture_reads_match_the_recorded_state_dump():
    fixtures = Path(__file__).parent / 'fixtures'
    space = build_state_space(read_fastq(str(fixtures / 'reads.fastq')), 3)
    with open(fixtures / 'states.tsv') as f:
        expected = load_state_space(f)
    assert space.states.tolist() == expected.states.tolist()
    assert space.occurrences.tolist() == expected.occurrences.tolist()
    assert space.succ_counts.tolist() == expected.succ_counts.tolist()
