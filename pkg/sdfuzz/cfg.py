"""
Control-flow graph recovery and loop unrolling.
"""
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import networkx as nx

from sdfuzz.bytecode import Instruction
from sdfuzz.opcodes import (
    BINARY_OPS,
    JUMPS,
    TERMINATORS,
    dup_depth,
    evaluate_binary,
    info,
    push_width,
    swap_depth,
)

logger = logging.getLogger(__name__)

UNKNOWN = "UNKNOWN"
REVERT = "REVERT"
HALT = "HALT"

# Bounds of the constant-stack pass used to resolve dynamic jumps.
MAX_ENTRY_STACKS = 4
MAX_BLOCK_VISITS = 20_000
MAX_TRACKED_DEPTH = 64


class EdgeKind(str, Enum):
    FALLTHROUGH = "fallthrough"
    JUMP = "jump"
    BRANCH_TRUE = "branch-true"
    BRANCH_FALSE = "branch-false"


class UnrollBudgetExceeded(RuntimeError):
    pass


@dataclass
class BasicBlock:
    id: int
    start_pc: int
    end_pc: int
    instructions: Tuple[Instruction, ...]
    successors: List[Tuple[int, EdgeKind]] = field(default_factory=list)
    sink: Optional[str] = None
    # Provenance: the block this one was copied from, and the loop iteration.
    original: Optional[int] = None
    iteration: int = 0
    dead: bool = False

    def __post_init__(self):
        if self.original is None:
            self.original = self.id

    @property
    def terminator(self) -> Optional[Instruction]:
        return self.instructions[-1] if self.instructions else None

    @property
    def ends_in_jumpi(self) -> bool:
        return self.terminator is not None and self.terminator.opcode == "JUMPI"

    def successor(self, kind: EdgeKind) -> Optional[int]:
        for block_id, edge_kind in self.successors:
            if edge_kind == kind:
                return block_id
        return None


class Cfg:
    def __init__(
        self,
        blocks: Sequence[BasicBlock],
        entry: int = 0,
        unroll_bound: int = 20,
        unrolled: bool = False,
    ):
        self.blocks: Dict[int, BasicBlock] = {block.id: block for block in blocks}
        self.entry = entry
        self.unroll_bound = unroll_bound
        self.unrolled = unrolled

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[BasicBlock]:
        return (self.blocks[i] for i in sorted(self.blocks))

    def __getitem__(self, block_id: int) -> BasicBlock:
        return self.blocks[block_id]

    @cached_property
    def graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(sorted(self.blocks))
        for block in self:
            for successor, kind in block.successors:
                if graph.has_edge(block.id, successor):
                    graph.edges[block.id, successor]["kinds"] += (kind,)
                else:
                    graph.add_edge(block.id, successor, kinds=(kind,))
        return graph

    @cached_property
    def pc_to_block(self) -> Dict[int, int]:
        mapping = {}
        for block in self:
            if block.iteration == 0:
                for instruction in block.instructions:
                    mapping.setdefault(instruction.pc, block.id)
        return mapping

    def block_of(self, pc: int) -> int:
        return self.pc_to_block[pc]

    @property
    def edges(self) -> List[Tuple[int, int, EdgeKind]]:
        return [
            (block.id, successor, kind)
            for block in self
            for successor, kind in block.successors
        ]

    @property
    def branch_edge_count(self) -> int:
        return 2 * sum(1 for block in self if block.ends_in_jumpi)

    def edge_kinds(self, source: int, target: int) -> Tuple[EdgeKind, ...]:
        return self.graph.edges[source, target]["kinds"]

    def sink(self, kind: str) -> Optional[int]:
        for block in self:
            if block.sink == kind:
                return block.id
        return None

    def copies_of(self, original: int) -> List[int]:
        return [block.id for block in self if block.original == original]

    @property
    def provenance(self) -> Dict[int, Tuple[int, int]]:
        return {block.id: (block.original, block.iteration) for block in self}

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.graph)


def _partition(instructions: Sequence[Instruction]) -> List[List[Instruction]]:
    chunks = []
    current: List[Instruction] = []
    for instruction in instructions:
        if instruction.opcode == "JUMPDEST" and current:
            chunks.append(current)
            current = []
        current.append(instruction)
        if instruction.opcode in JUMPS or instruction.opcode in TERMINATORS:
            chunks.append(current)
            current = []
    if current:
        chunks.append(current)
    return chunks


def _direct_target(chunk: Sequence[Instruction]) -> Optional[int]:
    if len(chunk) >= 2 and push_width(chunk[-2].opcode):
        return chunk[-2].value
    return None


def _abstract_step(stack: List[Optional[int]], instruction: Instruction) -> None:
    name = instruction.opcode
    dup = dup_depth(name)
    swap = swap_depth(name)
    if push_width(name):
        stack.append(instruction.value)
    elif dup is not None:
        stack.append(stack[-dup] if len(stack) >= dup else None)
    elif swap is not None:
        while len(stack) < swap + 1:
            stack.insert(0, None)
        stack[-1], stack[-1 - swap] = stack[-1 - swap], stack[-1]
    elif name in BINARY_OPS:
        a = stack.pop() if stack else None
        b = stack.pop() if stack else None
        if a is None or b is None:
            stack.append(None)
        else:
            stack.append(evaluate_binary(name, a, b))
    else:
        op = info(name)
        del stack[max(0, len(stack) - op.pops) :]
        stack.extend([None] * op.pushes)
    if len(stack) > MAX_TRACKED_DEPTH:
        del stack[: len(stack) - MAX_TRACKED_DEPTH]


def _observed_jump_targets(
    chunks: Sequence[Sequence[Instruction]], jumpdests: Set[int]
) -> Dict[int, Set[Optional[int]]]:
    """
    Run a bounded constant-stack pass from the entry and collect, for every
    chunk ending in a jump, the destinations seen on the stack. ``None`` marks
    a destination that was not a constant, or a chunk the pass gave up on.
    """
    start_index = {chunk[0].pc: i for i, chunk in enumerate(chunks)}
    seen: Dict[int, Set[tuple]] = defaultdict(set)
    observed: Dict[int, Set[Optional[int]]] = defaultdict(set)
    worklist = deque([(0, ())])
    visits = 0

    while worklist:
        index, entry_stack = worklist.popleft()
        if entry_stack in seen[index]:
            continue
        chunk = chunks[index]
        last = chunk[-1]
        if len(seen[index]) >= MAX_ENTRY_STACKS or visits >= MAX_BLOCK_VISITS:
            if last.opcode in JUMPS:
                observed[index].add(None)
            continue
        seen[index].add(entry_stack)
        visits += 1

        stack = list(entry_stack)
        body = chunk[:-1] if last.opcode in JUMPS else chunk
        for instruction in body:
            _abstract_step(stack, instruction)

        following = index + 1 if index + 1 < len(chunks) else None
        if last.opcode in JUMPS:
            destination = stack[-1] if stack else None
            _abstract_step(stack, last)
            observed[index].add(destination)
            if destination in jumpdests:
                worklist.append((start_index[destination], tuple(stack)))
            if last.opcode == "JUMPI" and following is not None:
                worklist.append((following, tuple(stack)))
        elif last.opcode not in TERMINATORS and following is not None:
            worklist.append((following, tuple(stack)))

    return observed


def build_cfg(instructions: Sequence[Instruction], unroll_bound: int = 20) -> Cfg:
    """
    Partition instructions into basic blocks and connect them.

    Jump destinations come from a PUSH immediately preceding the jump, or
    otherwise from a bounded constant-stack pass. Unresolved jumps lead to
    an UNKNOWN sink, constant jumps to a non-JUMPDEST offset to a REVERT
    sink. A JUMPI at the end of the code falls through to a HALT sink.

    Parameters
    ----------
    instructions: Sequence[Instruction]
    unroll_bound: int
        Stored on the graph as the default bound for ``unroll_loops``.

    Returns
    -------
    cfg: Cfg
    """
    if not instructions:
        raise ValueError("Cannot build a CFG without instructions")

    chunks = _partition(instructions)
    jumpdests = {i.pc for i in instructions if i.opcode == "JUMPDEST"}
    start_index = {chunk[0].pc: i for i, chunk in enumerate(chunks)}
    blocks = [
        BasicBlock(
            id=i,
            start_pc=chunk[0].pc,
            end_pc=chunk[-1].pc,
            instructions=tuple(chunk),
        )
        for i, chunk in enumerate(chunks)
    ]

    sinks: Dict[str, BasicBlock] = {}

    def sink(kind: str) -> int:
        if kind not in sinks:
            block_id = len(blocks) + len(sinks)
            sinks[kind] = BasicBlock(
                id=block_id, start_pc=-1, end_pc=-1, instructions=(), sink=kind
            )
        return sinks[kind].id

    observed = None
    for i, block in enumerate(blocks):
        last = block.terminator
        following = i + 1 if i + 1 < len(blocks) else None
        if last.opcode in JUMPS:
            destination = _direct_target(block.instructions)
            if destination is None:
                if observed is None:
                    observed = _observed_jump_targets(chunks, jumpdests)
                values = observed.get(i, set())
                if len(values) == 1 and None not in values:
                    destination = next(iter(values))
                    logger.debug("Resolved jump at pc %d to %d", last.pc, destination)

            if destination is None:
                target = sink(UNKNOWN)
            elif destination in jumpdests:
                target = start_index[destination]
            else:
                target = sink(REVERT)

            if last.opcode == "JUMP":
                block.successors = [(target, EdgeKind.JUMP)]
            else:
                fallthrough = following if following is not None else sink(HALT)
                block.successors = [
                    (target, EdgeKind.BRANCH_TRUE),
                    (fallthrough, EdgeKind.BRANCH_FALSE),
                ]
        elif last.opcode in TERMINATORS or following is None:
            block.successors = []
        else:
            block.successors = [(following, EdgeKind.FALLTHROUGH)]

    all_blocks = blocks + sorted(sinks.values(), key=lambda b: b.id)
    cfg = Cfg(all_blocks, entry=0, unroll_bound=unroll_bound)
    reachable = nx.descendants(cfg.graph, cfg.entry) | {cfg.entry}
    for block in all_blocks:
        block.dead = block.id not in reachable
    return cfg


def back_edges(cfg: Cfg) -> Set[Tuple[int, int]]:
    """Back edges of a depth-first search from the entry, in successor order."""

    def successors(block_id: int) -> List[int]:
        return list(dict.fromkeys(s for s, _ in cfg[block_id].successors))

    found = set()
    on_stack = {cfg.entry}
    finished = set()
    stack = [(cfg.entry, iter(successors(cfg.entry)))]
    while stack:
        node, children = stack[-1]
        for child in children:
            if child in on_stack:
                found.add((node, child))
            elif child not in finished:
                on_stack.add(child)
                stack.append((child, iter(successors(child))))
                break
        else:
            stack.pop()
            on_stack.discard(node)
            finished.add(node)
    return found


def unroll_loops(
    cfg: Cfg, bound: Optional[int] = None, block_budget: int = 50_000
) -> Cfg:
    """
    Return an acyclic copy of the CFG.

    Every block is copied once per loop iteration, where the iteration index
    counts the back edges taken so far along a path. Back edges leaving the
    last iteration are dropped. Copies are numbered in breadth-first order
    from the entry and remember the block and iteration they come from.

    Raises
    ------
    UnrollBudgetExceeded
        When the copy count exceeds ``block_budget``.
    """
    bound = cfg.unroll_bound if bound is None else bound
    if bound < 1:
        raise ValueError(f"Unroll bound must be at least 1, received: {bound}")

    loops = back_edges(cfg)
    if not loops:
        return cfg

    ids = {(cfg.entry, 0): 0}
    queue = deque([(cfg.entry, 0)])
    copies = []
    while queue:
        original, iteration = queue.popleft()
        successors = []
        for successor, kind in cfg[original].successors:
            if (original, successor) in loops:
                if iteration + 1 >= bound:
                    continue
                copy = (successor, iteration + 1)
            else:
                copy = (successor, iteration)
            if copy not in ids:
                ids[copy] = len(ids)
                if len(ids) > block_budget:
                    raise UnrollBudgetExceeded(
                        f"Unrolling with bound {bound} exceeds the budget of "
                        f"{block_budget} blocks"
                    )
                queue.append(copy)
            successors.append((ids[copy], kind))

        block = cfg[original]
        copies.append(
            BasicBlock(
                id=ids[(original, iteration)],
                start_pc=block.start_pc,
                end_pc=block.end_pc,
                instructions=block.instructions,
                successors=successors,
                sink=block.sink,
                original=original,
                iteration=iteration,
            )
        )

    logger.debug(
        "Unrolled %d back edges into %d blocks (bound %d)", len(loops), len(copies), bound
    )
    return Cfg(copies, entry=0, unroll_bound=bound, unrolled=True)
