import math

import numpy as np
import pytest

from modules.errors import KmerError
from modules.hmm_params import (LOG_QUARTER, HmmParams, SuffStats, emission_log_prob, incoming_mass,
                                init_params, initial_state, penalty, penalty_terms)
from modules.kmer import encode_kmer
from modules.kmer_index import StateSpace, build_state_space
from modules.seqio import Read


def _read(rid: str, bases: str) -> Read:
    return Read(rid, bases, (30,) * len(bases))


def test_init_params_uses_count_ratios():
    space = build_state_space([_read('a', 'ACGTA'), _read('b', 'ACGAC'), _read('c', 'ACGAT')], 3)
    params = init_params(space, 5, 40, 1e-4, 250.0)
    acg = space.id_of(encode_kmer('ACG').bits)
    assert params.trans[acg].tolist() == pytest.approx([2 / 3, 0.0, 0.0, 1 / 3])
    # rows without successions are uniform
    gac = space.id_of(encode_kmer('GAC').bits)
    assert params.trans[gac].tolist() == [0.25] * 4
    assert params.confusion.shape == (2, 4, 4)
    assert params.qual.shape == (2, 2, 40)
    params.check()


def test_params_need_positions_after_k():
    with pytest.raises(KmerError):
        HmmParams(3, 1, 1e-4, 0.0, 3, 5, np.zeros((0, 4)), np.zeros(0), np.zeros(0))


def test_check_rejects_off_simplex_rows():
    space = StateSpace.from_kmers(2, [encode_kmer('AC').bits])
    params = init_params(space, 4, 3, 1e-4, 0.0)
    params = params.with_trans([[0.5, 0.5, 0.5, 0.0]])
    with pytest.raises(ValueError):
        params.check()


def test_params_tables_are_read_only_copies():
    trans = np.array([[0.0, 1.0, 0.0, 0.0]])
    params = HmmParams(2, 1, 1e-4, 0.0, 3, 2, trans, np.full((1, 4, 4), 0.25), np.full((1, 2, 2), 0.5))
    trans[0] = [1.0, 0.0, 0.0, 0.0]
    assert params.trans[0].tolist() == [0.0, 1.0, 0.0, 0.0]
    for table in (params.trans, params.confusion, params.qual):
        with pytest.raises(ValueError):
            table[0] = 0.0
    changed = params.with_trans([[0.0, 0.0, 1.0, 0.0]])
    assert params.trans[0, 1] == 1.0 and changed.trans[0, 2] == 1.0


def test_emission_log_prob_factorises():
    space = StateSpace.from_kmers(2, [encode_kmer('AC').bits])
    qual = np.array([[[0.2, 0.8], [0.6, 0.4]]])
    confusion = np.full((1, 4, 4), 0.1)
    confusion[0, np.arange(4), np.arange(4)] = 0.7
    params = HmmParams(2, 1, 1e-4, 0.0, 3, 2, np.full((1, 4), 0.25), confusion, qual)
    # called C with quality 2, true C: match
    assert emission_log_prob(params, 3, 1, 2, 1) == pytest.approx(math.log(0.8 * 0.7))
    # called C with quality 1, true A: mismatch
    assert emission_log_prob(params, 3, 1, 1, 0) == pytest.approx(math.log(0.6 * 0.1))
    # a called N says nothing about the true base
    values = {emission_log_prob(params, 3, 4, 2, b) for b in range(4)}
    assert values == {math.log(0.4) + LOG_QUARTER}
    table = params.emission_table
    assert table[0][1][1][1] == pytest.approx(math.log(0.8 * 0.7))
    with pytest.raises(IndexError):
        params.position_index(2)


def test_penalty_terms_bounds():
    terms = penalty_terms(np.array([0.0, 1.0, 1e-4]), 1e-4)
    assert terms[0] == 0.0
    assert terms[1] == pytest.approx(1.0)
    assert terms[2] == pytest.approx(math.log(2) / math.log1p(1e4))


def test_penalty_counts_nonzero_rows():
    space = StateSpace.from_kmers(2, [encode_kmer('AC').bits, encode_kmer('CG').bits])
    params = init_params(space, 3, 2, 1e-4, 10.0)
    params = params.with_trans([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    assert penalty(params) == pytest.approx(2.0)
    assert params.nonzero_transitions() == 2


def _policy_space():
    # ACG and ACT both extend CAC; TCG is reached from nothing
    space = StateSpace.from_kmers(3, [encode_kmer(s).bits for s in ('ACG', 'ACT', 'CAC', 'TCG')])
    params = init_params(space, 6, 5, 1e-4, 0.0, d=1)
    cac = space.id_of(encode_kmer('CAC').bits)
    trans = params.trans.copy()
    trans[cac] = [0.0, 0.0, 0.3, 0.7]
    return space, params.with_trans(trans)


def test_initial_state_prefers_observed_kmer():
    space, params = _policy_space()
    assert initial_state('TCGAAA', params, space) == space.id_of(encode_kmer('TCG').bits)


def test_initial_state_falls_back_to_heaviest_neighbor():
    space, params = _policy_space()
    mass = incoming_mass(params, space)
    assert mass[space.id_of(encode_kmer('ACT').bits)] == pytest.approx(0.7)
    # ACA is not in K; its 1-neighbours are ACG (mass 0.3) and ACT (mass 0.7)
    assert initial_state('ACAAAA', params, space) == space.id_of(encode_kmer('ACT').bits)
    # N is read as A before the neighbourhood search
    assert initial_state('ANTAAA', params, space) == space.id_of(encode_kmer('ACT').bits)
    assert initial_state('GGGAAA', params, space) == -1


def test_initial_state_tie_goes_to_smallest_id():
    space, params = _policy_space()
    cac = space.id_of(encode_kmer('CAC').bits)
    trans = params.trans.copy()
    trans[cac] = [0.0, 0.0, 0.5, 0.5]
    params = params.with_trans(trans)
    assert initial_state('ACAAAA', params, space) == space.id_of(encode_kmer('ACG').bits)


def test_suff_stats_add():
    a = SuffStats.zeros(2, 1, 3)
    b = SuffStats.zeros(2, 1, 3)
    a.exp_trans[0, 1] = 1.5
    b.exp_trans[0, 1] = 2.0
    a.occupancy[1] = 0.25
    b.occupancy[1] = 1.0
    b.loglik = -3.0
    b.reads = 2
    c = a + b
    assert c.exp_trans[0, 1] == 3.5
    assert c.occupancy.tolist() == [0.0, 1.25]
    assert c.loglik == -3.0 and c.reads == 2 and c.dead == 0
