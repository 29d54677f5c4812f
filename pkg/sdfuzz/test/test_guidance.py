from fractions import Fraction

import pytest

from sdfuzz.backward import StateTarget
from sdfuzz.cfg import BasicBlock, Cfg, EdgeKind
from sdfuzz.config import CampaignConfig
from sdfuzz.constraints import IntervalSet
from sdfuzz.guidance import (
    MAX_DIST,
    FitnessParams,
    Normalization,
    TxMetrics,
    block_distances,
    code_distance,
    fitness,
    range_distance,
    selection_probabilities,
    state_distance,
    transaction_fitness,
)
from sdfuzz.targets import BugClass, CodeTarget
from sdfuzz.vm import ExecutionTrace, StorageAccess, Transaction


@pytest.fixture
def chain():
    # 0 -> 1 -> 2 -> 3 -> 4, and an isolated block 5.
    blocks = [
        BasicBlock(i, i, i, (), [(i + 1, EdgeKind.FALLTHROUGH)] if i < 4 else [])
        for i in range(6)
    ]
    return Cfg(blocks)


def state_target(ranges, satisfiable=True):
    target = CodeTarget(0, BugClass.SUICIDAL, 0, ())
    return StateTarget(target, ranges, satisfiable)


def trace_with(reads=(), writes=(), final=None):
    trace = ExecutionTrace(tx=Transaction(0, 1))
    trace.storage_reads = [StorageAccess(0, slot, value, 0, i) for i, (slot, value) in enumerate(reads)]
    trace.storage_writes = [StorageAccess(0, slot, value, 0, i) for i, (slot, value) in enumerate(writes)]
    trace.final_storage = final or {}
    return trace


def test_block_distances(chain):
    distances = block_distances(chain, [2, 4])
    assert distances[2] == 0
    assert distances[4] == 0
    assert distances[0] == Fraction(8, 3)
    assert distances[1] == Fraction(3, 2)
    # Block 3 reaches only one of the two targets.
    assert distances[3] == 2
    assert distances[5] is None


def test_block_distances_single_target(chain):
    distances = block_distances(chain, [4])
    assert distances[0] == 4
    assert distances[4] == 0
    with pytest.raises(ValueError):
        block_distances(chain, [])


def test_code_distance(chain):
    distances = block_distances(chain, [2, 4])
    executed = [0, 1, 1, 5]
    assert code_distance(executed, distances, n=1) == Fraction(3, 2)
    assert code_distance(executed, distances, n=2) == (Fraction(3, 2) + Fraction(8, 3)) / 2
    # n rounds up from the fraction of candidates.
    assert code_distance(executed, distances, n_fraction=0.5) == Fraction(3, 2)
    assert code_distance(executed, distances, n_fraction=1.0) == Fraction(25, 12)
    assert code_distance([5], distances) == MAX_DIST
    assert code_distance([], distances, max_dist=Fraction(7)) == 7


def test_range_distance():
    intervals = IntervalSet([(31, 39)])
    assert range_distance([35], intervals) == 0
    assert range_distance([25], intervals) == 3
    assert range_distance([0, 30], intervals) == 1
    assert range_distance([2**200], intervals) == 200


def test_state_distance_not_applicable():
    trace = trace_with()
    assert state_distance(trace, []) == (0, False)
    assert state_distance(trace, [state_target({}, satisfiable=False)]) == (0, False)


def test_state_distance():
    ranges = {1: IntervalSet([(31, 39)]), 2: IntervalSet.point(1)}
    trace = trace_with(reads=[(1, 25)])
    # Slot 2 comes from the baseline: |0 - 1| has bit length 1.
    distance = state_distance(trace, [state_target(ranges)], baseline={2: 0})
    assert distance == (Fraction(4), True)

    trace = trace_with(reads=[(1, 35)], writes=[(2, 1)])
    assert state_distance(trace, [state_target(ranges)]) == (0, True)


def test_state_distance_harmonic_mean():
    near = state_target({1: IntervalSet.point(3)})
    far = state_target({1: IntervalSet.point(63)})
    trace = trace_with(final={1: 0})
    # Distances 2 and 6.
    assert state_distance(trace, [near, far]).value == Fraction(3)
    # A reached target short-circuits to zero.
    reached = state_target({1: IntervalSet.point(0)})
    assert state_distance(trace, [far, reached]).value == 0


def test_fitness_at_zero_distance():
    params = FitnessParams(gamma=Fraction(1))
    metrics = TxMetrics(Fraction(0), Fraction(0), 0, 0)
    stats = Normalization.from_metrics([metrics])
    assert transaction_fitness(metrics, stats, params, 10) == 10


def test_fitness_combination():
    params = FitnessParams()
    near = TxMetrics(Fraction(1), Fraction(0), 2, 1)
    far = TxMetrics(Fraction(5), Fraction(4), 0, 2)
    stats = Normalization.from_metrics([near, far])
    # Normalised distance 0 for near: bug score 10.
    expected = Fraction(7, 10) * 10 + Fraction(3, 10) * (Fraction(2, 8) + Fraction(1, 2))
    assert transaction_fitness(near, stats, params, 8) == expected
    # Normalised distance 1 for far.
    expected = Fraction(7, 10) * (1 / Fraction(11, 10)) + Fraction(3, 10) * 1
    assert transaction_fitness(far, stats, params, 8) == expected
    assert fitness([far, near], stats, params, 8) == transaction_fitness(near, stats, params, 8)
    with pytest.raises(ValueError):
        fitness([], stats, params, 8)


def test_ablation_zeroes_distance_terms():
    far = TxMetrics(Fraction(5), Fraction(4), 0, 0)
    near = TxMetrics(Fraction(1), Fraction(0), 0, 0)
    stats = Normalization.from_metrics([near, far])
    params = FitnessParams.from_config(CampaignConfig(ablation="both"))
    assert not params.code_guidance
    assert not params.state_guidance
    assert transaction_fitness(far, stats, params, 0) == transaction_fitness(
        near, stats, params, 0
    )

    params = FitnessParams.from_config(CampaignConfig(ablation="state"))
    assert params.code_guidance
    assert transaction_fitness(far, stats, params, 0) < transaction_fitness(
        near, stats, params, 0
    )


def test_params_from_config():
    params = FitnessParams.from_config(CampaignConfig(alpha=0.25, beta=0.2, gamma=0.9))
    assert params.alpha == Fraction(1, 4)
    assert params.beta == Fraction(1, 5)
    assert params.gamma == Fraction(9, 10)


def test_selection_probabilities():
    fitnesses = [Fraction(1, 3), Fraction(10), Fraction(7, 9), Fraction(2)]
    probabilities = selection_probabilities(fitnesses)
    assert abs(sum(probabilities) - 1.0) < 1e-12
    assert probabilities[1] == max(probabilities)
    with pytest.raises(ValueError):
        selection_probabilities([])
    with pytest.raises(ValueError):
        selection_probabilities([Fraction(1), Fraction(0)])
