import hashlib
import math

import pytest

from conftest import enumerate_paths
from modules.config import RunConfig
from modules.decoders import (DiagnosticRow, aviterbi_decode, correct_reads, format_diagnostics,
                              reconstruct_read, summarize_diagnostics)
from modules.errors import DecodeFailure, KmerError
from modules.evaluation import GroundTruth, TruthRecord
from modules.kmer import encode_kmer
from modules.seqio import Read


def test_reconstruct_read_overlaps_kmers():
    path = [encode_kmer(s) for s in ('ACG', 'CGT', 'GTT')]
    assert reconstruct_read(path) == 'ACGTT'
    with pytest.raises(KmerError):
        reconstruct_read([encode_kmer('ACG'), encode_kmer('GGT')])
    with pytest.raises(KmerError):
        reconstruct_read([])


def test_aviterbi_full_radius_is_exact(toy_instances):
    for toy in toy_instances[:50]:
        result = aviterbi_decode(toy.read, toy.params, toy.space, toy.space.k, toy.initial)
        best_path, best_score = max(enumerate_paths(toy.params, toy.space, toy.read, toy.initial),
                                    key=lambda item: item[1])
        assert result.score == pytest.approx(best_score, abs=1e-9)
        assert result.path == best_path
        assert len(result.corrected) == len(toy.read)
        assert result.corrected[:toy.space.k] == toy.space.kmer_string(toy.initial)


def test_aviterbi_restricted_radius_never_beats_full(toy_instances):
    for toy in toy_instances[:20]:
        full = aviterbi_decode(toy.read, toy.params, toy.space, toy.space.k, toy.initial)
        try:
            narrow = aviterbi_decode(toy.read, toy.params, toy.space, 1, toy.initial)
        except DecodeFailure:
            continue
        assert narrow.score <= full.score + 1e-12


def test_aviterbi_reads_n_as_a(adversarial_fano):
    case = adversarial_fano
    result = aviterbi_decode(case.read.with_bases('AANN'), case.params, case.space, 2, case.initial)
    assert result.corrected == case.best_bases


def test_aviterbi_rejects_initial_outside_k(adversarial_fano):
    case = adversarial_fano
    with pytest.raises(DecodeFailure) as info:
        aviterbi_decode(case.read, case.params, case.space, 2, len(case.space))
    assert info.value.reason == DecodeFailure.DEAD_TRELLIS


def _model_config(params, **changes):
    return RunConfig(k=params.k, d=min(2, params.k), **changes)


def test_correct_reads_preserves_order_and_passes_failures_through(adversarial_fano):
    case = adversarial_fano
    reads = [case.read,
             Read('too_long', 'AACCA', (1,) * 5),
             Read('unknown_start', 'TTCC', (1,) * 4),
             case.read.with_bases('AACG')]
    for decoder in ('fano', 'aviterbi'):
        config = _model_config(case.params, decoder=decoder)
        corrected, rows = correct_reads(reads, case.params, case.space, config)
        assert [r.id for r in corrected] == [r.id for r in reads]
        assert corrected[0].bases == case.best_bases
        assert corrected[0].quals == case.read.quals
        assert corrected[1] == reads[1]
        assert corrected[2] == reads[2]
        assert [r.status for r in rows] == ['ok', 'unsupported_length', 'dead_trellis', 'ok']
        assert rows[0].changed == 2
        assert summarize_diagnostics(rows) == {'ok': 2, 'unsupported_length': 1, 'dead_trellis': 1}


def test_correct_reads_in_parallel_matches_serial(toy_instances):
    toy = toy_instances[3]
    config = RunConfig(k=toy.space.k, d=toy.space.k, decoder='aviterbi')
    serial, serial_rows = correct_reads(toy.reads, toy.params, toy.space, config)
    parallel, parallel_rows = correct_reads(toy.reads, toy.params, toy.space, config.replace(threads=2))
    assert serial == parallel
    assert serial_rows == parallel_rows


def _digest(params, space):
    digest = hashlib.sha256()
    for table in (params.trans, params.confusion, params.qual, space.states):
        digest.update(table.tobytes())
    return digest.hexdigest()


@pytest.mark.parametrize('decoder', ['aviterbi', 'fano'])
def test_decoding_leaves_the_model_untouched(toy_instances, decoder):
    toy = toy_instances[5]
    before = _digest(toy.params, toy.space)
    config = RunConfig(k=toy.space.k, d=toy.space.k, decoder=decoder)
    correct_reads(toy.reads, toy.params, toy.space, config)
    correct_reads(toy.reads, toy.params, toy.space, config.replace(threads=2))
    assert _digest(toy.params, toy.space) == before


def test_truth_first_kmer(adversarial_fano):
    case = adversarial_fano
    read = Read('r1', 'TTCC', (1,) * 4)
    truth = GroundTruth([TruthRecord('r1', 1, 'AAGT')])
    config = _model_config(case.params, first_kmer='truth')
    corrected, rows = correct_reads([read], case.params, case.space, config, truth)
    assert rows[0].status == 'ok'
    assert corrected[0].bases == 'AAGT'
    with pytest.raises(ValueError):
        correct_reads([read], case.params, case.space, config)


def test_correct_reads_checks_k_and_handles_empty_input(adversarial_fano):
    case = adversarial_fano
    with pytest.raises(KmerError):
        correct_reads([case.read], case.params, case.space, RunConfig(k=3, d=1))
    assert correct_reads([], case.params, case.space, _model_config(case.params)) == ([], [])


def test_qualities_above_model_qmax_are_clamped_for_scoring_only(adversarial_fano):
    case = adversarial_fano
    read = Read('hi', 'AACC', (40, 40, 40, 40))
    corrected, rows = correct_reads([read], case.params, case.space, _model_config(case.params))
    assert rows[0].status == 'ok'
    assert corrected[0].quals == read.quals


def test_format_diagnostics():
    rows = [DiagnosticRow('r1', 'fano', 'ok', -1.5, 4, 2, 3, 1),
            DiagnosticRow('r2', 'fano', 'budget_exceeded')]
    text = format_diagnostics(rows, ['#k=2'])
    lines = text.splitlines()
    assert lines[0] == '#k=2'
    assert lines[1].split('\t')[0] == 'read_id'
    assert lines[2] == 'r1\tfano\tok\t-1.5\t4\t2\t3\t1'
    assert math.isnan(float(lines[3].split('\t')[3]))
