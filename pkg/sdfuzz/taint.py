"""
Static abstract interpretation of stack and memory over the CFG.

Each value carries an optional constant, a set of source labels and an
optional structural expression used to identify storage slots. The pass
records, for every instruction, the abstract operands it consumes, merged
over all abstract states that reach it.
"""
import logging
from collections import defaultdict, deque
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Set, Tuple

from sdfuzz.bytecode import Instruction
from sdfuzz.cfg import Cfg
from sdfuzz.opcodes import (
    BINARY_OPS,
    BLOCK_FIELDS,
    UNARY_OPS,
    dup_depth,
    evaluate_binary,
    evaluate_unary,
    info,
    push_width,
    swap_depth,
)

logger = logging.getLogger(__name__)

# Labels shared by the static pass and the interpreter.
CALLDATA = "calldata"
STORAGE = "storage"
CALLER = "caller"
BLOCKDATA = "blockdata"
CALLVALUE = "callvalue"
ENVIRONMENT = "environment"
NO_LABELS: FrozenSet[str] = frozenset()
# The value is an equality test involving the caller.
CALLER_EQ = "caller-eq"
# The value was loaded from a slot whose key involves the caller.
CALLER_INDEX = "caller-index"

MAX_STATES_PER_BLOCK = 8
MAX_VISITS = 20_000
MAX_DEPTH = 64
MAX_MEMORY_ENTRIES = 64


class AbstractValue(NamedTuple):
    const: Optional[int] = None
    labels: FrozenSet[str] = frozenset()
    expr: Optional[tuple] = None

    @classmethod
    def constant(cls, value: int) -> "AbstractValue":
        return cls(value, frozenset(), ("const", value))

    def join(self, other: "AbstractValue") -> "AbstractValue":
        return AbstractValue(
            self.const if self.const == other.const else None,
            self.labels | other.labels,
            self.expr if self.expr == other.expr else None,
        )


TOP = AbstractValue()


class MemoryEntry(NamedTuple):
    # start None means the region is not constant and overlaps everything.
    start: Optional[int]
    end: Optional[int]
    value: AbstractValue


class TaintFacts(NamedTuple):
    operands: Dict[int, Tuple[AbstractValue, ...]]
    regions: Dict[int, FrozenSet[str]]
    visited: Set[int]

    def operand(self, pc: int, position: int) -> AbstractValue:
        values = self.operands.get(pc)
        if values is None or position >= len(values):
            return TOP
        return values[position]


def _overlapping(memory, start, end):
    for entry in memory:
        if entry.start is None or (entry.start < end and start < entry.end):
            yield entry


def _region_labels(memory, offset: AbstractValue, size: AbstractValue) -> FrozenSet[str]:
    if size.const == 0:
        return frozenset()
    if offset.const is None or size.const is None:
        entries = memory
    else:
        entries = _overlapping(memory, offset.const, offset.const + size.const)
    found = set()
    for entry in entries:
        found |= entry.value.labels
    return frozenset(found)


def _read_word(memory, offset: AbstractValue) -> AbstractValue:
    if offset.const is None:
        return AbstractValue(None, _region_labels(memory, offset, TOP), None)
    start = offset.const
    for entry in reversed(memory):
        if entry.start is None or (entry.start < start + 32 and start < entry.end):
            if entry.start == start and entry.end == start + 32:
                return entry.value
            return AbstractValue(None, entry.value.labels, None)
    return AbstractValue.constant(0)


def _hash(memory, offset: AbstractValue, size: AbstractValue) -> AbstractValue:
    labels = _region_labels(memory, offset, size)
    if offset.const is None or size.const is None or size.const % 32:
        return AbstractValue(None, labels, None)
    words = [
        _read_word(memory, AbstractValue.constant(offset.const + 32 * i))
        for i in range(size.const // 32)
    ]
    if any(word.expr is None for word in words):
        return AbstractValue(None, labels, None)
    return AbstractValue(None, labels, ("sha3", tuple(word.expr for word in words)))


def _mentions_caller(expr) -> bool:
    if expr == ("caller",):
        return True
    if isinstance(expr, tuple):
        return any(_mentions_caller(part) for part in expr if isinstance(part, tuple))
    return False


def _source(name: str, operand: AbstractValue) -> AbstractValue:
    if name == "CALLER":
        return AbstractValue(None, frozenset({CALLER}), ("caller",))
    elif name == "CALLVALUE":
        return AbstractValue(None, frozenset({CALLVALUE}), ("callvalue",))
    elif name in BLOCK_FIELDS:
        return AbstractValue(None, frozenset({BLOCKDATA}), (name.lower(),))
    elif name == "CALLDATALOAD":
        return AbstractValue(
            None, frozenset({CALLDATA}) | operand.labels, ("calldata", operand.expr)
        )
    elif name == "CALLDATASIZE":
        return AbstractValue(None, frozenset({CALLDATA}), None)
    elif name == "SLOAD":
        labels = {STORAGE}
        if _mentions_caller(operand.expr):
            labels.add(CALLER_INDEX)
        expr = ("sload", operand.expr) if operand.expr is not None else None
        return AbstractValue(None, frozenset(labels), expr)
    return AbstractValue(None, frozenset({ENVIRONMENT}), None)


class _State(NamedTuple):
    stack: Tuple[AbstractValue, ...]
    memory: Tuple[MemoryEntry, ...]


def _step(
    stack: List[AbstractValue],
    memory: List[MemoryEntry],
    instruction: Instruction,
    operands: Dict[int, Tuple[AbstractValue, ...]],
    regions: Dict[int, FrozenSet[str]],
) -> None:
    name = instruction.opcode
    pc = instruction.pc

    if push_width(name):
        stack.append(AbstractValue.constant(instruction.value))
        return
    if dup_depth(name) is not None:
        n = dup_depth(name)
        stack.append(stack[-n] if len(stack) >= n else TOP)
        return
    if swap_depth(name) is not None:
        n = swap_depth(name)
        while len(stack) < n + 1:
            stack.insert(0, TOP)
        stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
        return

    op = info(name)
    popped = tuple(stack.pop() if stack else TOP for _ in range(op.pops))
    previous = operands.get(pc)
    if previous is None:
        operands[pc] = popped
    else:
        operands[pc] = tuple(a.join(b) for a, b in zip(previous, popped))

    if name in BINARY_OPS:
        a, b = popped
        labels = a.labels | b.labels
        if name == "EQ" and (CALLER in a.labels or CALLER in b.labels):
            labels |= {CALLER_EQ}
        if a.const is not None and b.const is not None:
            stack.append(
                AbstractValue(
                    evaluate_binary(name, a.const, b.const),
                    labels,
                    ("const", evaluate_binary(name, a.const, b.const)),
                )
            )
        else:
            stack.append(AbstractValue(None, labels, None))
    elif name in UNARY_OPS:
        (a,) = popped
        if a.const is not None:
            value = evaluate_unary(name, a.const)
            stack.append(AbstractValue(value, a.labels, ("const", value)))
        else:
            stack.append(AbstractValue(None, a.labels, None))
    elif name == "MLOAD":
        stack.append(_read_word(memory, popped[0]))
    elif name == "SHA3":
        stack.append(_hash(memory, popped[0], popped[1]))
    elif name in ("MSTORE", "MSTORE8"):
        offset, value = popped
        width = 32 if name == "MSTORE" else 1
        if offset.const is None:
            memory.append(MemoryEntry(None, None, AbstractValue(None, value.labels)))
        elif name == "MSTORE":
            memory.append(MemoryEntry(offset.const, offset.const + width, value))
        else:
            memory.append(
                MemoryEntry(
                    offset.const, offset.const + width, AbstractValue(None, value.labels)
                )
            )
    elif name == "CALLDATACOPY":
        destination, _, size = popped
        copied = AbstractValue(None, frozenset({CALLDATA}))
        if destination.const is None or size.const is None:
            memory.append(MemoryEntry(None, None, copied))
        elif size.const > 0:
            memory.append(
                MemoryEntry(destination.const, destination.const + size.const, copied)
            )
    elif name in ("CALL", "DELEGATECALL", "STATICCALL"):
        shift = 1 if name == "CALL" else 0
        args = _region_labels(memory, popped[2 + shift], popped[3 + shift])
        regions[pc] = regions.get(pc, frozenset()) | args
        out_offset, out_size = popped[4 + shift], popped[5 + shift]
        if out_offset.const is None or out_size.const is None:
            memory.append(MemoryEntry(None, None, TOP))
        elif out_size.const > 0:
            memory.append(
                MemoryEntry(out_offset.const, out_offset.const + out_size.const, TOP)
            )
        stack.append(AbstractValue(None, frozenset({ENVIRONMENT}), None))
    elif op.pushes:
        stack.append(_source(name, popped[0] if popped else TOP))

    if len(stack) > MAX_DEPTH:
        del stack[: len(stack) - MAX_DEPTH]
    if len(memory) > MAX_MEMORY_ENTRIES:
        del memory[: len(memory) - MAX_MEMORY_ENTRIES]


def analyze_taint(cfg: Cfg) -> TaintFacts:
    """
    Propagate abstract values from the entry over the (pre-unroll) CFG.

    Parameters
    ----------
    cfg: Cfg

    Returns
    -------
    facts: TaintFacts
        Merged operands per instruction, labels of the argument memory region
        per call instruction, and the blocks that were visited.
    """
    operands: Dict[int, Tuple[AbstractValue, ...]] = {}
    regions: Dict[int, FrozenSet[str]] = {}
    seen: Dict[int, Set[_State]] = defaultdict(set)
    worklist = deque([(cfg.entry, _State((), ()))])
    visits = 0

    while worklist and visits < MAX_VISITS:
        block_id, state = worklist.popleft()
        block = cfg[block_id]
        if block.sink is not None or state in seen[block_id]:
            continue
        if len(seen[block_id]) >= MAX_STATES_PER_BLOCK:
            continue
        seen[block_id].add(state)
        visits += 1

        stack = list(state.stack)
        memory = list(state.memory)
        for instruction in block.instructions:
            _step(stack, memory, instruction, operands, regions)

        following = _State(tuple(stack), tuple(memory))
        for successor, _ in block.successors:
            worklist.append((successor, following))

    if worklist:
        logger.warning("Taint analysis stopped after %d block visits", visits)
    return TaintFacts(operands, regions, set(seen))
