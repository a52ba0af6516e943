"""Shared toy HMMs and exhaustive path enumeration used as test oracles."""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import pytest
from scipy.special import logsumexp

from modules.hmm_params import HmmParams, emission_log_prob
from modules.kmer import encode_kmer
from modules.kmer_index import StateSpace, build_state_space
from modules.seqio import Read

TOY_QMAX = 5
TOY_COUNT = 60


@dataclass
class ToyInstance:
    params: HmmParams
    space: StateSpace
    reads: List[Read]
    read: Read
    initial: int


def make_toy_instance(seed: int) -> ToyInstance:
    """k in 3..5, L <= 12, |K| <= 30, random strictly positive parameters, d = k."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(3, 6))
    length = int(rng.integers(k + 2, 13))
    genome = ''.join(rng.choice(list('ACGT'), size=length + 6))
    reads = []
    for n in range(3):
        start = int(rng.integers(0, len(genome) - length + 1))
        bases = list(genome[start:start + length])
        pos = int(rng.integers(0, length))
        bases[pos] = 'ACGT'[('ACGT'.index(bases[pos]) + int(rng.integers(1, 4))) % 4]
        quals = tuple(int(q) for q in rng.integers(1, TOY_QMAX + 1, size=length))
        reads.append(Read(f"toy{n + 1}", ''.join(bases), quals))
    space = build_state_space(reads, k)
    positions = length - k
    trans = rng.dirichlet(np.ones(4), size=len(space))
    confusion = rng.dirichlet(np.ones(4), size=(positions, 4))
    qual = rng.dirichlet(np.ones(TOY_QMAX), size=(positions, 2))
    params = HmmParams(k, k, 1e-4, 0.0, length, TOY_QMAX, trans, confusion, qual)
    read = reads[0]
    initial = space.id_of(encode_kmer(read.bases[:k]).bits)
    return ToyInstance(params, space, reads, read, initial)


def enumerate_paths(params: HmmParams, space: StateSpace, read: Read,
                    initial: int) -> List[Tuple[List[int], float]]:
    """Every state path with nonzero probability and its natural-log weight."""
    k = space.k
    codes = read.codes()
    depth_max = len(read) - k
    out: List[Tuple[List[int], float]] = []

    def walk(path: List[int], weight: float) -> None:
        depth = len(path) - 1
        if depth == depth_max:
            out.append((list(path), weight))
            return
        t = k + depth + 1
        src = path[-1]
        for b in range(4):
            dst = int(space.successors[src, b])
            if dst < 0 or params.trans[src, b] == 0:
                continue
            emit = emission_log_prob(params, t, int(codes[t - 1]), read.quals[t - 1], b)
            if emit == float('-inf'):
                continue
            path.append(dst)
            walk(path, weight + math.log(params.trans[src, b]) + emit)
            path.pop()

    walk([initial], 0.0)
    return out


def brute_force_counts(params: HmmParams, space: StateSpace, read: Read, initial: int):
    """Posterior-weighted counts by enumeration.

    Returns:
        (exp_trans, exp_confusion, exp_qual, occupancy, log-likelihood)
    """
    paths = enumerate_paths(params, space, read, initial)
    log_z = float(logsumexp([w for _, w in paths]))
    k = space.k
    codes = read.codes()
    exp_trans = np.zeros((len(space), 4))
    exp_confusion = np.zeros((params.n_positions, 4, 4))
    exp_qual = np.zeros((params.n_positions, 2, params.qmax))
    occupancy = np.zeros(len(space))
    for path, w in paths:
        post = math.exp(w - log_z)
        for state in path:
            occupancy[state] += post
        for i in range(1, len(path)):
            b = int(space.states[path[i]]) & 3
            exp_trans[path[i - 1], b] += post
            t = k + i
            called = int(codes[t - 1])
            exp_confusion[i - 1, b, called] += post
            exp_qual[i - 1, 0 if b == called else 1, read.quals[t - 1] - 1] += post
    return exp_trans, exp_confusion, exp_qual, occupancy, log_z


@pytest.fixture(scope='session')
def toy_instances() -> List[ToyInstance]:
    return [make_toy_instance(seed) for seed in range(TOY_COUNT)]


@dataclass
class AdversarialFano:
    params: HmmParams
    space: StateSpace
    read: Read
    initial: int
    best_bases: str


@pytest.fixture
def adversarial_fano() -> AdversarialFano:
    """k = 2, L = 4, flat emissions, so the Fano metric with B = 2 is the path's log2 transition mass.

    From AA the locally better step AC (0.6) only continues at 0.25, while
    AG (0.4) continues to GT with probability 1. The decoder has to lower its
    threshold, back up out of AC and settle on AA -> AG -> GT.
    """
    names = ['AA', 'AC', 'AG', 'CA', 'CC', 'CG', 'CT', 'GT']
    space = StateSpace.from_kmers(2, [encode_kmer(s).bits for s in names])
    trans = np.full((len(space), 4), 0.25)
    trans[space.id_of(encode_kmer('AA').bits)] = [0.0, 0.6, 0.4, 0.0]
    trans[space.id_of(encode_kmer('AG').bits)] = [0.0, 0.0, 0.0, 1.0]
    params = HmmParams(2, 2, 1e-4, 0.0, 4, 1, trans, np.full((2, 4, 4), 0.25), np.ones((2, 2, 1)))
    read = Read('adversarial', 'AACC', (1, 1, 1, 1))
    return AdversarialFano(params, space, read, space.id_of(encode_kmer('AA').bits), 'AAGT')
