import random

import pytest

from conftest import enumerate_paths
from modules.decoders import FanoConfig, fano_decode, fano_metric_update, tighten_threshold
from modules.errors import DecodeFailure
from modules.kmer import encode_kmer


def test_metric_update_is_plain_addition():
    assert fano_metric_update(1.0, -0.5, -0.25, 2.0) == 2.25
    assert fano_metric_update(-3.0, -1.0, -2.0, 0.0) == -6.0


@pytest.mark.parametrize('metric, delta, steps, expected', [
    (1.3, 0.5, 0, 2),
    (1.0, 0.5, 0, 2),
    (-0.2, 0.5, -5, -1),
    (0.0, 0.25, -3, 0),
    (7.4, 2.0, 1, 3),
])
def test_tighten_threshold(metric, delta, steps, expected):
    assert tighten_threshold(metric, delta, steps) == expected


def test_tighten_keeps_metric_inside_one_step():
    rng = random.Random(4)
    for _ in range(500):
        delta = rng.choice([0.1, 0.25, 0.5, 1.0, 3.0])
        metric = rng.uniform(-50, 50)
        n = tighten_threshold(metric, delta, -10_000)
        assert n * delta <= metric < (n + 1) * delta


def test_threshold_never_drops_below_current():
    assert tighten_threshold(-4.0, 0.5, 2) == 2


def test_adversarial_instance_backtracks_and_finds_best_path(adversarial_fano):
    case = adversarial_fano
    result = fano_decode(case.read, case.params, case.space, FanoConfig(0.5, 2.0), case.initial)
    assert result.backtracks >= 1
    assert result.threshold_lowerings >= 1
    assert result.corrected == case.best_bases
    best_path, _ = max(enumerate_paths(case.params, case.space, case.read, case.initial),
                       key=lambda item: item[1])
    assert result.path == best_path
    # exact move counts of the walk: two lowerings, two retreats from AC, a third lowering
    assert (result.visited, result.backtracks, result.threshold_lowerings) == (4, 2, 3)
    assert result.score == pytest.approx(-1.321928094887362)


def test_budget_exhaustion(adversarial_fano):
    case = adversarial_fano
    with pytest.raises(DecodeFailure) as info:
        fano_decode(case.read, case.params, case.space, FanoConfig(0.5, 2.0, max_visits=1), case.initial)
    assert info.value.reason == DecodeFailure.BUDGET_EXCEEDED


def test_root_without_successor_is_a_dead_trellis(adversarial_fano):
    case = adversarial_fano
    gt = case.space.id_of(encode_kmer('GT').bits)
    with pytest.raises(DecodeFailure) as info:
        fano_decode(case.read, case.params, case.space, FanoConfig(), gt)
    assert info.value.reason == DecodeFailure.DEAD_TRELLIS


def test_large_bias_walks_greedily(adversarial_fano):
    case = adversarial_fano
    result = fano_decode(case.read, case.params, case.space, FanoConfig(0.5, 10.0), case.initial)
    assert result.backtracks == 0
    assert result.threshold_lowerings == 0
    assert result.corrected == 'AACA'


def test_fano_reaches_full_depth_on_toys(toy_instances):
    for toy in toy_instances[:20]:
        config = FanoConfig(0.5, 2.0, max_visits=10 ** 6)
        result = fano_decode(toy.read, toy.params, toy.space, config, toy.initial)
        assert len(result.corrected) == len(toy.read)
        assert result.path[0] == toy.initial
        assert len(result.path) == len(toy.read) - toy.space.k + 1


def test_invalid_config():
    with pytest.raises(ValueError):
        FanoConfig(delta=0.0)
    with pytest.raises(ValueError):
        FanoConfig(max_visits=0)
