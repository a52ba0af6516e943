import numpy as np
import pytest

from modules.baum_welch import fit
from modules.config import RunConfig
from modules.decoders import correct_reads
from modules.evaluation import (QualityModel, default_quality_model, random_genome, score_corrections,
                                simulate_reads)
from modules.kmer_index import build_state_space


def _train_and_correct(reads, k, d, lam, decoder, max_iters=5, threads=1, bias=2.0):
    space = build_state_space(reads, k, threads)
    result = fit(reads, space, lam, 1e-4, d, max_iters=max_iters, threads=threads)
    config = RunConfig(k=k, d=d, lam=lam, decoder=decoder, threads=threads, bias=bias)
    return correct_reads(reads, result.params, result.space, config)


@pytest.mark.parametrize('decoder', ['aviterbi', 'fano'])
def test_clean_reads_are_left_alone(decoder):
    genome = random_genome(500, seed=11)
    reads, truth = simulate_reads(genome, 300, 30, QualityModel.constant(30, 60, 60), seed=12)
    assert truth.total_errors(reads) == 0
    corrected, rows = _train_and_correct(reads, 9, 2, 0.0, decoder, max_iters=3)
    assert [r.bases for r in corrected] == [r.bases for r in reads]
    assert all(row.status == 'ok' for row in rows)
    assert all(row.changed == 0 for row in rows)


@pytest.mark.slow
@pytest.mark.parametrize('decoder', ['aviterbi', 'fano'])
def test_noisy_reads_are_mostly_repaired(decoder):
    genome = random_genome(20000, seed=21)
    qmodel = default_quality_model(36, 60, 0.0123)
    reads, truth = simulate_reads(genome, 5000, 36, qmodel, seed=22)
    corrected, rows = _train_and_correct(reads, 13, 4, 250.0, decoder, max_iters=8, threads=2)
    report = score_corrections(reads, corrected, truth, 13)
    assert report.e > 0
    assert report.zeta > 0.6
    assert report.eta > 0.5
    assert sum(row.status == 'ok' for row in rows) > 0.9 * len(rows)


@pytest.mark.slow
def test_threads_do_not_change_the_output():
    genome = random_genome(5000, seed=31)
    reads, _ = simulate_reads(genome, 1000, 36, default_quality_model(36, 60, 0.0123), seed=32)
    one, one_rows = _train_and_correct(reads, 11, 2, 250.0, 'fano', max_iters=3)
    four, four_rows = _train_and_correct(reads, 11, 2, 250.0, 'fano', max_iters=3, threads=4)
    assert [r.bases for r in one] == [r.bases for r in four]
    assert [row.status for row in one_rows] == [row.status for row in four_rows]
    assert np.isclose(sum(r.score for r in one_rows if r.status == 'ok'),
                      sum(r.score for r in four_rows if r.status == 'ok'))


@pytest.mark.slow
def test_small_genome_deep_coverage_with_true_first_kmers():
    # 10 kbp genome at about 144x coverage, scored against the true first kmer of every read
    genome = random_genome(10000, seed=41)
    qmodel = default_quality_model(36, 60, 0.0123)
    reads, truth = simulate_reads(genome, 40000, 36, qmodel, seed=42)
    space = build_state_space(reads, 13, 4)
    result = fit(reads, space, 100.0, 1e-4, 4, max_iters=6, threads=4)
    eta = {}
    for decoder in ('aviterbi', 'fano'):
        # hard reads need many back moves; a cut-off read would go through uncorrected
        config = RunConfig(k=13, d=4, lam=100.0, decoder=decoder, threads=4, first_kmer='truth',
                           max_visits_factor=2048)
        corrected, rows = correct_reads(reads, result.params, result.space, config, truth)
        eta[decoder] = score_corrections(reads, corrected, truth, 13).eta
        assert sum(row.status == 'ok' for row in rows) > 0.99 * len(rows)
    assert eta['fano'] >= 0.95
    assert eta['aviterbi'] >= 0.93
    assert eta['fano'] >= eta['aviterbi'] - 0.01
