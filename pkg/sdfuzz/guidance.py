"""
Distances to code and state targets, and the fitness built from them.

All quantities are exact fractions; only selection probabilities are floats.
"""
import math
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence

import networkx as nx

from sdfuzz.cfg import Cfg
from sdfuzz.constraints import IntervalSet

MAX_DIST = Fraction(10_000)

DistanceMap = Dict[int, Optional[Fraction]]


def block_distances(cfg: Cfg, target_blocks: Iterable[int]) -> DistanceMap:
    """
    Harmonic mean of the shortest-path edge counts from every block to the
    target blocks.

    Parameters
    ----------
    cfg: Cfg
    target_blocks: iterable of int
        Must not be empty.

    Returns
    -------
    distances: dict
        0 for target blocks, None for blocks that reach no target.
    """
    targets = sorted(set(target_blocks))
    if not targets:
        raise ValueError("At least one target block is required")

    reverse = cfg.graph.reverse(copy=False)
    lengths = [nx.single_source_shortest_path_length(reverse, t) for t in targets]
    distances: DistanceMap = {}
    for block_id in cfg.blocks:
        if block_id in targets:
            distances[block_id] = Fraction(0)
            continue
        inverse = sum(
            (Fraction(1, per_target[block_id]) for per_target in lengths if block_id in per_target),
            Fraction(0),
        )
        distances[block_id] = Fraction(len(targets)) / inverse if inverse else None
    return distances


def code_distance(
    executed_blocks: Iterable[int],
    distances: Mapping[int, Optional[Fraction]],
    n: Optional[int] = None,
    n_fraction: float = 0.1,
    max_dist: Fraction = MAX_DIST,
) -> Fraction:
    """
    Average of the ``n`` smallest defined block distances of the executed
    blocks. By default ``n`` is a fraction of the number of candidates,
    rounded up, and at least one.
    """
    defined = sorted(
        distances[b] for b in set(executed_blocks) if distances.get(b) is not None
    )
    if not defined:
        return Fraction(max_dist)
    if n is None:
        n = max(1, math.ceil(Fraction(str(n_fraction)) * len(defined)))
    smallest = defined[:n]
    return sum(smallest, Fraction(0)) / len(smallest)


def range_distance(values: Iterable[int], intervals: IntervalSet) -> int:
    """
    Compressed distance from the closest observed value to an interval set:
    the bit length of the gap, so 0 inside the set.
    """
    gap = min(intervals.distance(value) for value in values)
    return gap.bit_length()


class StateDistance(NamedTuple):
    value: Fraction
    applicable: bool


def observed_values(trace, slot: int, baseline: Mapping[int, int]) -> List[int]:
    values = [a.value for a in trace.storage_reads if a.slot == slot]
    values += [a.value for a in trace.storage_writes if a.slot == slot]
    if slot in trace.final_storage:
        values.append(trace.final_storage[slot])
    if not values:
        values.append(baseline.get(slot, 0))
    return values


def target_distance(trace, ranges: Mapping[int, IntervalSet], baseline) -> int:
    return sum(
        range_distance(observed_values(trace, slot, baseline), intervals)
        for slot, intervals in ranges.items()
    )


def state_distance(
    trace, state_targets: Sequence, baseline: Optional[Mapping[int, int]] = None
) -> StateDistance:
    """
    Harmonic mean of the distances from the storage observed in a trace to
    every satisfiable state target.

    Parameters
    ----------
    trace: ExecutionTrace
    state_targets: sequence of StateTarget
    baseline: mapping of int to int, optional
        Storage before the transaction, used for target slots the trace
        never touched.

    Returns
    -------
    distance: StateDistance
        Not applicable (and 0) when no state target is satisfiable.
    """
    baseline = baseline or {}
    satisfiable = [st for st in state_targets if st.satisfiable]
    if not satisfiable:
        return StateDistance(Fraction(0), False)

    inverse = Fraction(0)
    for st in satisfiable:
        d = target_distance(trace, st.ranges, baseline)
        if d == 0:
            return StateDistance(Fraction(0), True)
        inverse += Fraction(1, d)
    return StateDistance(Fraction(len(satisfiable)) / inverse, True)


class FitnessParams(NamedTuple):
    alpha: Fraction = Fraction(1, 2)
    beta: Fraction = Fraction(1, 10)
    gamma: Fraction = Fraction(7, 10)
    code_guidance: bool = True
    state_guidance: bool = True

    @classmethod
    def from_config(cls, config) -> "FitnessParams":
        return cls(
            alpha=Fraction(str(config.alpha)),
            beta=Fraction(str(config.beta)),
            gamma=Fraction(str(config.gamma)),
            code_guidance=config.ablation not in ("code", "both"),
            state_guidance=config.ablation not in ("state", "both"),
        )


class TxMetrics(NamedTuple):
    code_distance: Fraction
    state_distance: Fraction
    new_branch_edges: int
    state_write_count: int


class Normalization(NamedTuple):
    code_min: Fraction
    code_max: Fraction
    state_min: Fraction
    state_max: Fraction
    max_writes: int

    @classmethod
    def from_metrics(cls, metrics: Iterable[TxMetrics]) -> "Normalization":
        metrics = list(metrics)
        if not metrics:
            raise ValueError("Cannot normalise an empty generation")
        code = [m.code_distance for m in metrics]
        state = [m.state_distance for m in metrics]
        return cls(
            min(code), max(code), min(state), max(state),
            max(m.state_write_count for m in metrics),
        )


def _min_max(value: Fraction, low: Fraction, high: Fraction) -> Fraction:
    if high == low:
        return Fraction(0)
    return (value - low) / (high - low)


def transaction_fitness(
    metrics: TxMetrics,
    stats: Normalization,
    params: FitnessParams,
    total_branch_edges: int,
) -> Fraction:
    code = _min_max(metrics.code_distance, stats.code_min, stats.code_max)
    state = _min_max(metrics.state_distance, stats.state_min, stats.state_max)
    if not params.code_guidance:
        code = Fraction(0)
    if not params.state_guidance:
        state = Fraction(0)

    distance = params.alpha * code + (1 - params.alpha) * state
    bug = 1 / (distance + params.beta)
    branch = (
        Fraction(metrics.new_branch_edges, total_branch_edges)
        if total_branch_edges
        else Fraction(0)
    )
    dependency = (
        Fraction(metrics.state_write_count, stats.max_writes)
        if stats.max_writes
        else Fraction(0)
    )
    return params.gamma * bug + (1 - params.gamma) * (branch + dependency)


def fitness(
    transactions: Sequence[TxMetrics],
    stats: Normalization,
    params: FitnessParams,
    total_branch_edges: int,
) -> Fraction:
    """A seed scores as its best transaction."""
    if not transactions:
        raise ValueError("A seed has at least one transaction")
    return max(
        transaction_fitness(m, stats, params, total_branch_edges) for m in transactions
    )


def selection_probabilities(fitnesses: Sequence[Fraction]) -> List[float]:
    if not fitnesses:
        raise ValueError("Cannot select from an empty generation")
    if any(f <= 0 for f in fitnesses):
        raise ValueError("Fitness values must be positive")
    total = sum(fitnesses, Fraction(0))
    return [float(Fraction(f) / total) for f in fitnesses]
