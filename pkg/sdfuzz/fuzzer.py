"""
The genetic fuzzing loop.

Every seed is a short transaction sequence executed from a fresh
deployment. Seeds are scored by their distance to code and state targets,
selected in proportion to that score, recombined along read-after-write
dependencies and mutated from a pool of interesting values.
"""
import logging
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Set, Tuple

import numpy as np
from eth_utils import to_normalized_address

from sdfuzz.abi import (
    AbiDescriptor,
    ArgValue,
    coerce,
    encode_args,
    pool_words,
    random_value,
    value_from_json,
    value_to_json,
)
from sdfuzz.analyze import StaticAnalysis, analyze
from sdfuzz.config import CampaignConfig, CampaignError
from sdfuzz.constraints import IntervalSet
from sdfuzz.guidance import (
    FitnessParams,
    Normalization,
    TxMetrics,
    code_distance,
    fitness,
    range_distance,
    selection_probabilities,
    state_distance,
    target_distance,
)
from sdfuzz.opcodes import WORD_MOD
from sdfuzz.oracles import (
    Finding,
    OracleContext,
    SeedLedger,
    ValueFlow,
    check_campaign_end,
    check_trace,
)
from sdfuzz.targets import BugClass
from sdfuzz.vm import (
    ATTACKER,
    DEPLOYER,
    SENDER_FUNDS,
    ExecutionTrace,
    ReentryPolicy,
    Transaction,
    WorldState,
    deploy,
    execute,
)

logger = logging.getLogger(__name__)

SENDERS = (DEPLOYER, ATTACKER)
MAX_VALUE = 10**18
REMUTATE_PROB = 0.1

STATE_TARGET_BOUND = "state-target-bound"
OBSERVED_TX_VALUE = "observed-tx-value"
OBSERVED_STORAGE_VALUE = "observed-storage-value"
PROVENANCES = (STATE_TARGET_BOUND, OBSERVED_TX_VALUE, OBSERVED_STORAGE_VALUE)


class TxSpec(NamedTuple):
    selector: int
    args: Tuple[ArgValue, ...]
    value: int = 0
    sender: int = ATTACKER

    def transaction(self, abi: AbiDescriptor) -> Transaction:
        function = abi.by_selector(self.selector)
        return Transaction(
            sender=self.sender,
            selector=self.selector,
            args=encode_args(function.params, self.args),
            value=self.value,
            payable=function.payable,
        )

    def to_dict(self, abi: AbiDescriptor) -> Dict:
        function = abi.by_selector(self.selector)
        return {
            "function": function.name,
            "selector": function.selector_hex,
            "args": [value_to_json(v) for v in self.args],
            "value": self.value,
            "sender": to_normalized_address(self.sender.to_bytes(20, "big")),
        }

    @classmethod
    def from_dict(cls, data: Dict, abi: AbiDescriptor) -> "TxSpec":
        selector = int(data["selector"], 16)
        function = abi.by_selector(selector)
        if len(data["args"]) != len(function.params):
            raise ValueError(
                f"{function.name} takes {len(function.params)} arguments, "
                f"received {len(data['args'])}"
            )
        value = int(data["value"])
        if value and not function.payable:
            raise ValueError(f"{function.name} is not payable")
        return cls(
            selector=selector,
            args=tuple(
                value_from_json(p, v) for p, v in zip(function.params, data["args"])
            ),
            value=value,
            sender=int(data["sender"], 16),
        )


@dataclass
class SeedEvaluation:
    transactions: List[TxMetrics]
    fitness: Fraction = Fraction(0)
    best: int = 0
    findings: List[Finding] = field(default_factory=list)

    @property
    def code_distance(self) -> Fraction:
        return self.transactions[self.best].code_distance

    @property
    def state_distance(self) -> Fraction:
        return self.transactions[self.best].state_distance

    @property
    def new_branch_edges(self) -> int:
        return self.transactions[self.best].new_branch_edges

    @property
    def state_write_count(self) -> int:
        return self.transactions[self.best].state_write_count


@dataclass
class Seed:
    txs: Tuple[TxSpec, ...]
    lineage: Tuple[int, ...] = ()
    id: int = 0
    evaluation: Optional[SeedEvaluation] = None

    def to_dict(self, abi: AbiDescriptor) -> Dict:
        return {
            "id": self.id,
            "lineage": list(self.lineage),
            "txs": [tx.to_dict(abi) for tx in self.txs],
        }

    @classmethod
    def from_dict(cls, data: Dict, abi: AbiDescriptor) -> "Seed":
        return cls(
            txs=tuple(TxSpec.from_dict(tx, abi) for tx in data["txs"]),
            lineage=tuple(data.get("lineage", ())),
            id=data.get("id", 0),
        )


class MutationPool:
    """
    Deduplicated 256-bit values grouped by where they came from. A value is
    kept under the first provenance it arrived with.
    """

    def __init__(self):
        self._values: Dict[str, List[int]] = {p: [] for p in PROVENANCES}
        self._seen: Set[int] = set()
        # Storage slot to the state-target values for that slot.
        self._targets: Dict[int, List[int]] = {}

    def __len__(self) -> int:
        return len(self._seen)

    def __contains__(self, value: int) -> bool:
        return value % WORD_MOD in self._seen

    def add(self, value: int, provenance: str) -> None:
        if provenance not in self._values:
            raise ValueError(f"Unknown provenance: {provenance}")
        value %= WORD_MOD
        if value not in self._seen:
            self._seen.add(value)
            self._values[provenance].append(value)

    def extend(self, values, provenance: str) -> None:
        for value in values:
            self.add(value, provenance)

    def values(self, provenance: str) -> List[int]:
        return list(self._values[provenance])

    def add_targets(self, slot: int, values: Iterable[int]) -> None:
        """Add state-target values that belong to one storage slot."""
        known = self._targets.setdefault(slot, [])
        for value in values:
            value %= WORD_MOD
            if value not in known:
                known.append(value)
            self.add(value, STATE_TARGET_BOUND)

    def targets(self, slot: int) -> List[int]:
        return list(self._targets.get(slot, ()))

    def sample(self, rng: np.random.Generator, slot: Optional[int] = None) -> int:
        """
        Pick a provenance uniformly among non-empty ones, then a value. For an
        argument known to end up in ``slot``, pick among that slot's target
        values instead.
        """
        if slot is not None and self._targets.get(slot):
            values = self._targets[slot]
            return values[int(rng.integers(len(values)))]
        classes = [p for p in PROVENANCES if self._values[p]]
        if not classes:
            raise ValueError("Cannot sample from an empty mutation pool")
        values = self._values[classes[int(rng.integers(len(classes)))]]
        return values[int(rng.integers(len(values)))]


# (selector, sender): mapping slots differ between callers.
CallKey = Tuple[int, int]


def call_key(tx: TxSpec) -> CallKey:
    return tx.selector, tx.sender


class RawIndex:
    """Storage slots each function was seen to read and write, per sender."""

    def __init__(self):
        self.reads: Dict[CallKey, Set[int]] = defaultdict(set)
        self.writes: Dict[CallKey, Set[int]] = defaultdict(set)

    def observe(self, trace: ExecutionTrace) -> None:
        key = (trace.tx.selector, trace.tx.sender)
        self.reads[key] |= trace.slots_read
        if not trace.reverted:
            self.writes[key] |= trace.slots_written

    def reads_of(self, seed: Seed) -> Set[int]:
        return set().union(*(self.reads.get(call_key(tx), set()) for tx in seed.txs))

    def writes_of(self, seed: Seed) -> Set[int]:
        return set().union(*(self.writes.get(call_key(tx), set()) for tx in seed.txs))


class ArgumentSlots:
    """
    Arguments whose value a function stores verbatim, as
    (selector, argument index) to storage slot. The first match wins.
    """

    def __init__(self):
        self.slots: Dict[Tuple[int, int], int] = {}

    def observe(self, tx: TxSpec, trace: ExecutionTrace) -> None:
        if trace.reverted:
            return
        for write in trace.storage_writes:
            if write.depth or not write.value:
                continue
            for index, arg in enumerate(tx.args):
                if write.value in pool_words(arg):
                    self.slots.setdefault((tx.selector, index), write.slot)

    def get(self, selector: int, index: int) -> Optional[int]:
        return self.slots.get((selector, index))


class WriterArchive:
    """
    Transactions that wrote storage without reverting, per function and
    sender. Only those whose writes land closest to the state targets are
    kept; writes to other slots all score 0.
    """

    def __init__(self, slot_targets: Mapping[int, IntervalSet], capacity: int = 4):
        self.slot_targets = dict(slot_targets)
        self.capacity = capacity
        self.entries: Dict[CallKey, List[TxSpec]] = {}
        self.scores: Dict[CallKey, int] = {}
        self.slots: Dict[CallKey, Set[int]] = defaultdict(set)

    def score(self, trace: ExecutionTrace) -> int:
        return sum(
            range_distance([trace.final_storage.get(slot, 0)], self.slot_targets[slot])
            for slot in sorted(trace.slots_written)
            if slot in self.slot_targets
        )

    def observe(self, tx: TxSpec, trace: ExecutionTrace) -> None:
        if trace.reverted or not trace.slots_written:
            return
        key = call_key(tx)
        self.slots[key] |= trace.slots_written
        score = self.score(trace)
        if key not in self.scores or score < self.scores[key]:
            self.entries[key] = [tx]
            self.scores[key] = score
        elif score == self.scores[key] and tx not in self.entries[key]:
            self.entries[key] = (self.entries[key] + [tx])[-self.capacity :]

    def writers_of(self, slot: int) -> List[CallKey]:
        return sorted(key for key, slots in self.slots.items() if slot in slots)

    def sample(self, key: CallKey, rng: np.random.Generator) -> TxSpec:
        entries = self.entries[key]
        return entries[int(rng.integers(len(entries)))]


def random_tx(function, rng: np.random.Generator) -> TxSpec:
    args = tuple(random_value(param, rng) for param in function.params)
    value = int(rng.integers(1, MAX_VALUE + 1)) if function.payable else 0
    sender = SENDERS[int(rng.integers(len(SENDERS)))]
    return TxSpec(function.selector, args, value, sender)


def init_seeds(abi: AbiDescriptor, rng: np.random.Generator) -> List[Seed]:
    """Two single-transaction seeds per function."""
    if not abi.functions:
        raise CampaignError("The ABI has no functions to fuzz")
    return [
        Seed((random_tx(function, rng),))
        for function in abi.functions
        for _ in range(2)
    ]


def select_parents(
    probabilities: List[float], count: int, rng: np.random.Generator
) -> List[Tuple[int, int]]:
    """Fitness-proportional draws with replacement, as index pairs."""
    drawn = rng.choice(len(probabilities), size=2 * count, p=probabilities)
    return [(int(a), int(b)) for a, b in zip(drawn[::2], drawn[1::2])]


def _join(first: Seed, second: Seed, max_seq_len: int) -> Seed:
    txs = (first.txs + second.txs)[-max_seq_len:]
    return Seed(txs, lineage=(first.id, second.id))


def _copy(seed: Seed) -> Seed:
    return Seed(seed.txs, lineage=(seed.id,))


def _selectors(seed: Seed) -> Set[int]:
    return {tx.selector for tx in seed.txs}


def crossover(
    first: Seed,
    second: Seed,
    raw: RawIndex,
    rng: np.random.Generator,
    crossover_prob: float = 0.5,
    max_seq_len: int = 5,
) -> Tuple[Seed, Seed]:
    """
    Concatenate writer before reader when one parent writes a slot the
    other reads. Otherwise concatenate in both orders with probability
    ``crossover_prob``, or return copies of the parents.
    """
    forward = raw.writes_of(first) & raw.reads_of(second)
    backward = raw.writes_of(second) & raw.reads_of(first)
    if forward and backward:
        return _join(first, second, max_seq_len), _join(second, first, max_seq_len)
    elif forward:
        return _join(first, second, max_seq_len), _copy(first)
    elif backward:
        return _join(second, first, max_seq_len), _copy(second)

    if rng.random() < crossover_prob:
        return _join(first, second, max_seq_len), _join(second, first, max_seq_len)
    return _copy(first), _copy(second)


def mutate(
    seed: Seed,
    pool: MutationPool,
    abi: AbiDescriptor,
    rng: np.random.Generator,
    pool_mutation_prob: float = 0.5,
    mutation_rate: float = 0.5,
    arg_slots: Optional[ArgumentSlots] = None,
) -> Seed:
    """
    Mutate every argument independently with probability ``mutation_rate``,
    drawing from the pool with probability ``pool_mutation_prob``. Pool draws
    for an argument that ``arg_slots`` maps to a storage slot prefer that
    slot's target values. Selectors are never changed.
    """
    txs = []
    for tx in seed.txs:
        function = abi.by_selector(tx.selector)
        args = list(tx.args)
        for i, param in enumerate(function.params):
            if rng.random() >= mutation_rate:
                continue
            if len(pool) and rng.random() < pool_mutation_prob:
                slot = arg_slots.get(tx.selector, i) if arg_slots is not None else None
                args[i] = coerce(param, pool.sample(rng, slot))
            else:
                args[i] = random_value(param, rng)

        value = tx.value
        if function.payable and rng.random() < REMUTATE_PROB:
            value = int(rng.integers(1, MAX_VALUE + 1))
        sender = tx.sender
        if rng.random() < REMUTATE_PROB:
            sender = SENDERS[int(rng.integers(len(SENDERS)))]
        txs.append(TxSpec(tx.selector, tuple(args), value, sender))
    return Seed(tuple(txs), lineage=seed.lineage)


def splice(
    seed: Seed,
    raw: RawIndex,
    archive: WriterArchive,
    rng: np.random.Generator,
    splice_prob: float = 0.75,
    max_seq_len: int = 5,
    extra_reads: Iterable[int] = (),
) -> Seed:
    """
    Insert archived writers right before the last transaction, for the slots
    it was seen to read plus ``extra_reads``. Each slot not yet covered gets a
    writer of another function with probability ``splice_prob``. Earlier
    transactions are dropped from the front to stay within ``max_seq_len``.
    """
    if not seed.txs or max_seq_len < 2:
        return seed
    last = seed.txs[-1]
    head = seed.txs[:-1]
    reads = raw.reads.get(call_key(last), set()) | set(extra_reads)

    writers: List[TxSpec] = []
    covered: Set[int] = set()
    for slot in sorted(reads):
        if slot in covered or len(writers) == max_seq_len - 1:
            continue
        keys = [key for key in archive.writers_of(slot) if key[0] != last.selector]
        if not keys or rng.random() >= splice_prob:
            continue
        key = keys[int(rng.integers(len(keys)))]
        covered |= archive.slots[key]
        writer = archive.sample(key, rng)
        if writer not in head and writer not in writers:
            writers.append(writer)

    if not writers:
        return seed
    keep = max_seq_len - 1 - len(writers)
    head = head[len(head) - keep :] if keep < len(head) else head
    return Seed(head + tuple(writers) + (last,), lineage=seed.lineage)


def deploy_fresh(bytecode: bytes, abi: AbiDescriptor) -> Tuple[WorldState, int]:
    state = WorldState()
    contract = deploy(state, bytecode)
    for account in SENDERS:
        state.balances[account] = SENDER_FUNDS
    state.harnesses.add(ATTACKER)
    for slot, value in abi.deployment.storage.items():
        state.sstore(contract, slot, value)
    state.balances[contract] = abi.deployment.balance
    return state, contract


class SeedRun(NamedTuple):
    traces: List[ExecutionTrace]
    # Contract storage before each transaction.
    baselines: List[Dict[int, int]]
    findings: List[Finding]


def run_seed(
    seed: Seed, bytecode: bytes, abi: AbiDescriptor, max_steps: int = 100_000
) -> SeedRun:
    """Execute a seed from a fresh deployment and run the trace oracles."""
    state, contract = deploy_fresh(bytecode, abi)
    context = OracleContext(contract, DEPLOYER, ReentryPolicy.ONCE, max_steps)
    ledger = SeedLedger()
    traces, baselines, findings = [], [], []
    for index, spec in enumerate(seed.txs):
        if contract in state.destroyed:
            break
        baselines.append(state.contract_storage(contract))
        trace, after = execute(
            state, contract, spec.transaction(abi), ReentryPolicy.ONCE, max_steps
        )
        for finding in check_trace(trace, state, after, context, ledger):
            findings.append(finding._replace(tx_index=index, seed=seed))
        traces.append(trace)
        state = after
    return SeedRun(traces, baselines, findings)


class GenerationMetrics(NamedTuple):
    generation: int
    executed: int
    avg_code_distance: float
    avg_state_distance: float
    coverage: float
    best_fitness: float
    targets_reached: int


@dataclass
class CampaignResult:
    config: CampaignConfig
    static: StaticAnalysis
    metrics: List[GenerationMetrics]
    findings: List[Finding]
    executed: int
    generations: int
    # Code target index to the first generation that reached it.
    reached: Dict[int, int]
    wall_time: Optional[float] = None

    def generations_to_target(self, bug_class: Optional[str] = None) -> int:
        """
        First generation reaching a code target of ``bug_class`` (any class
        when None). Censored to the number of generations run.
        """
        hits = [
            generation
            for index, generation in self.reached.items()
            if bug_class is None
            or self.static.code_targets[index].bug_class.value == bug_class
        ]
        return min(hits) if hits else self.generations


class _Campaign:
    def __init__(self, static: StaticAnalysis, config: CampaignConfig):
        self.static = static
        self.abi = static.abi
        self.config = config
        self.params = FitnessParams.from_config(config)
        self.rng = np.random.default_rng(config.rng_seed)
        self.pool = MutationPool()
        self.raw = RawIndex()
        self.flow = ValueFlow()
        self.covered: Set[Tuple[int, bool]] = set()
        self.findings: Dict[Tuple[BugClass, int], Finding] = {}
        self.reached: Dict[int, int] = {}
        self.executed = 0
        self.next_id = 0
        self.population_size = config.population_size or 2 * len(self.abi.functions)

        self.pool.extend(SENDERS, OBSERVED_TX_VALUE)
        slot_targets: Dict[int, IntervalSet] = {}
        if self.params.state_guidance:
            for st in static.state_targets:
                if not st.satisfiable:
                    continue
                for box in (st.ranges,) + st.alternatives:
                    for slot, intervals in sorted(box.items()):
                        self.pool.add_targets(slot, intervals.boundary_values())
                        known = slot_targets.get(slot, IntervalSet())
                        slot_targets[slot] = known.union(intervals)
        self.target_slots = sorted(slot_targets)
        self.arg_slots = ArgumentSlots()
        self.archive = WriterArchive(slot_targets)

    def number(self, seeds: List[Seed]) -> List[Seed]:
        for seed in seeds:
            seed.id = self.next_id
            self.next_id += 1
        return seeds

    def metrics_of(self, run: SeedRun) -> List[TxMetrics]:
        metrics = []
        max_dist = Fraction(self.config.max_dist)
        for trace, baseline in zip(run.traces, run.baselines):
            if self.static.distances is None:
                code = max_dist
            else:
                code = code_distance(
                    trace.executed_blocks,
                    self.static.distances,
                    n_fraction=self.config.n_fraction,
                    max_dist=max_dist,
                )
            state = state_distance(trace, self.static.state_targets, baseline).value
            metrics.append(
                TxMetrics(
                    code_distance=code,
                    state_distance=state,
                    new_branch_edges=len(trace.branch_edges - self.covered),
                    state_write_count=len(trace.slots_written),
                )
            )
        return metrics

    def observe(self, seed: Seed, run: SeedRun, generation: int) -> None:
        for index, trace in enumerate(run.traces):
            self.flow.observe(trace, seed, index)
            self.raw.observe(trace)
            self.arg_slots.observe(seed.txs[index], trace)
            self.archive.observe(seed.txs[index], trace)
            for value in seed.txs[index].args:
                self.pool.extend(pool_words(value), OBSERVED_TX_VALUE)
            if seed.txs[index].value:
                self.pool.add(seed.txs[index].value, OBSERVED_TX_VALUE)
            for access in trace.storage_reads + trace.storage_writes:
                self.pool.add(access.value, OBSERVED_STORAGE_VALUE)

        for finding in run.findings:
            if finding.key not in self.findings:
                self.findings[finding.key] = finding
                logger.info(
                    "Generation %d: %s at pc %d",
                    generation,
                    finding.bug_class.value,
                    finding.anchor_pc,
                )

        for index, target in enumerate(self.static.code_targets):
            if index in self.reached:
                continue
            st = self.static.state_targets[index]
            for trace, baseline in zip(run.traces, run.baselines):
                if target.block_id not in trace.executed_blocks:
                    continue
                if st.satisfiable and target_distance(trace, st.ranges, baseline):
                    continue
                self.reached[index] = generation
                break

    def next_generation(self, evaluated: List[Seed]) -> List[Seed]:
        config = self.config
        fitnesses = [seed.evaluation.fitness for seed in evaluated]
        ranked = sorted(range(len(evaluated)), key=lambda i: (-fitnesses[i], i))
        children = [_copy(evaluated[i]) for i in ranked[: config.elite_count]]
        children = children[: self.population_size]

        probabilities = selection_probabilities(fitnesses)
        while len(children) < self.population_size:
            needed = (self.population_size - len(children) + 1) // 2
            for a, b in select_parents(probabilities, needed, self.rng):
                pair = crossover(
                    evaluated[a],
                    evaluated[b],
                    self.raw,
                    self.rng,
                    config.crossover_prob,
                    config.max_seq_len,
                )
                for child in pair:
                    if len(children) < self.population_size:
                        mutant = mutate(
                            child,
                            self.pool,
                            self.abi,
                            self.rng,
                            config.pool_mutation_prob,
                            config.mutation_rate,
                            self.arg_slots,
                        )
                        children.append(
                            splice(
                                mutant,
                                self.raw,
                                self.archive,
                                self.rng,
                                config.splice_prob,
                                config.max_seq_len,
                                self.target_slots,
                            )
                        )
        self.restore_missing_functions(children, evaluated, ranked)
        return self.number(children)

    def restore_missing_functions(
        self, children: List[Seed], evaluated: List[Seed], ranked: List[int]
    ) -> None:
        """
        Give every function that dropped out of ``children`` a seed again:
        a mutated copy of the fittest evaluated seed calling it, or a fresh
        single transaction. Elites are never replaced, nor is the last child
        calling some function when another choice exists.
        """
        holders = Counter(s for child in children for s in _selectors(child))
        replaceable = list(range(len(children) - 1, self.config.elite_count - 1, -1))
        for function in self.abi.functions:
            if holders[function.selector]:
                continue
            if not replaceable:
                break
            index = next(
                (
                    i
                    for i in replaceable
                    if all(holders[s] > 1 for s in _selectors(children[i]))
                ),
                replaceable[0],
            )
            replaceable.remove(index)

            candidates = (
                evaluated[i] for i in ranked if function.selector in _selectors(evaluated[i])
            )
            holder = next(candidates, None)
            if holder is None:
                seed = Seed((random_tx(function, self.rng),))
            else:
                seed = mutate(
                    _copy(holder),
                    self.pool,
                    self.abi,
                    self.rng,
                    self.config.pool_mutation_prob,
                    self.config.mutation_rate,
                    self.arg_slots,
                )
            logger.debug("Restoring %s into the population", function.name)
            holders.subtract(_selectors(children[index]))
            holders.update(_selectors(seed))
            children[index] = seed

    def run(self) -> CampaignResult:
        config = self.config
        start = time.monotonic()
        population = self.number(init_seeds(self.abi, self.rng))
        total_edges = self.static.cfg.branch_edge_count
        metrics: List[GenerationMetrics] = []
        generation = 0

        while True:
            generation += 1
            evaluated: List[Seed] = []
            runs: List[List[TxMetrics]] = []
            new_edges: Set[Tuple[int, bool]] = set()
            for seed in population:
                if self.executed >= config.max_test_cases:
                    break
                run = run_seed(seed, self.static.bytecode, self.abi, config.max_steps)
                self.executed += len(run.traces)
                if not run.traces:
                    continue
                runs.append(self.metrics_of(run))
                evaluated.append(seed)
                for trace in run.traces:
                    new_edges |= trace.branch_edges
                self.observe(seed, run, generation)
                seed.evaluation = SeedEvaluation(runs[-1], findings=run.findings)

            if not evaluated:
                generation -= 1
                break
            self.covered |= new_edges

            stats = Normalization.from_metrics(m for tx in runs for m in tx)
            for seed in evaluated:
                evaluation = seed.evaluation
                scores = [
                    fitness([m], stats, self.params, total_edges)
                    for m in evaluation.transactions
                ]
                evaluation.fitness = max(scores)
                evaluation.best = scores.index(evaluation.fitness)

            all_metrics = [m for tx in runs for m in tx]
            metrics.append(
                GenerationMetrics(
                    generation=generation,
                    executed=self.executed,
                    avg_code_distance=float(
                        sum((m.code_distance for m in all_metrics), Fraction(0))
                        / len(all_metrics)
                    ),
                    avg_state_distance=float(
                        sum((m.state_distance for m in all_metrics), Fraction(0))
                        / len(all_metrics)
                    ),
                    coverage=len(self.covered) / total_edges if total_edges else 0.0,
                    best_fitness=float(max(s.evaluation.fitness for s in evaluated)),
                    targets_reached=len(self.reached),
                )
            )
            logger.info(
                "Generation %d: %d executed, best fitness %.4f",
                generation,
                self.executed,
                metrics[-1].best_fitness,
            )

            if self.executed >= config.max_test_cases:
                break
            if config.timeout is not None and time.monotonic() - start > config.timeout:
                logger.info("Campaign timed out after %d generations", generation)
                break
            population = self.next_generation(evaluated)

        end = check_campaign_end(self.flow)
        if end is not None:
            self.findings.setdefault(end.key, end)
            logger.info("LockEther: %s", end.description)

        findings = sorted(
            self.findings.values(), key=lambda f: (f.bug_class.rank, f.anchor_pc)
        )
        return CampaignResult(
            config=config,
            static=self.static,
            metrics=metrics,
            findings=findings,
            executed=self.executed,
            generations=generation,
            reached=dict(sorted(self.reached.items())),
            wall_time=time.monotonic() - start if config.record_wall_time else None,
        )


def run_campaign(
    bytecode: bytes,
    abi: AbiDescriptor,
    config: Optional[CampaignConfig] = None,
    static: Optional[StaticAnalysis] = None,
) -> CampaignResult:
    """
    Fuzz a contract until the test case budget or the timeout is used up.

    Parameters
    ----------
    bytecode: bytes
        Runtime bytecode.
    abi: AbiDescriptor
    config: CampaignConfig, optional
    static: StaticAnalysis, optional
        Computed from ``bytecode`` and ``abi`` when not given.

    Returns
    -------
    result: CampaignResult
    """
    config = config or CampaignConfig()
    if static is None:
        static = analyze(bytecode, abi, config)
    logger.info(
        "Campaign on %s: budget %d, rng seed %d, ablation %s",
        static.contract_id[:12],
        config.max_test_cases,
        config.rng_seed,
        config.ablation,
    )
    return _Campaign(static, config).run()
