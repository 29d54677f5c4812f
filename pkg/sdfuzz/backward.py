"""
State targets: storage value ranges under which a code target is reachable.

For every entry-to-target path of the unrolled CFG, the condition of each
JUMPI on the path is reconstructed by walking the instructions before it in
reverse. The walk tracks "holes": stack positions whose value is still
needed. Every instruction that produced a needed value defines its hole in
terms of fresh holes for its own operands, until nothing is needed anymore
or the entry is reached. The resulting definitions are then evaluated with
the expression constructors from ``sdfuzz.symbolic``.
"""
import logging
from itertools import islice
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from sdfuzz.bytecode import Instruction
from sdfuzz.cfg import Cfg, EdgeKind
from sdfuzz.constraints import (
    TRUE,
    Box,
    branch_condition,
    conjoin,
    disjoin,
    is_partially_unknown,
    sample_box,
    serialize_box,
    solve,
)
from sdfuzz.opcodes import BINARY_OPS, UNARY_OPS, dup_depth, info, push_width, swap_depth
from sdfuzz.symbolic import (
    CLOBBERS,
    DEFAULT_DEPTH_BOUND,
    Const,
    MemoryWrite,
    SymExpr,
    Unknown,
    binop,
    calldata,
    hash_memory,
    leaf,
    read_word,
    storage,
    unop,
)
from sdfuzz.targets import CodeTarget

logger = logging.getLogger(__name__)

DEFAULT_PATH_LIMIT = 10_000


class Path(NamedTuple):
    blocks: Tuple[int, ...]
    # Direction None: both edges of the JUMPI lead to the next block.
    branch_points: Tuple[Tuple[int, Optional[bool]], ...]


class PathEnumeration(NamedTuple):
    paths: List[Path]
    truncated: bool


class StateTarget(NamedTuple):
    target: CodeTarget
    ranges: Box
    satisfiable: bool
    alternatives: Tuple[Box, ...] = ()
    constraint: object = TRUE
    truncated: bool = False
    partially_unknown: bool = False
    path_count: int = 0
    diagnostic: str = ""

    @property
    def is_empty(self) -> bool:
        return self.satisfiable and not self.ranges

    def to_dict(self) -> Dict:
        return {
            "target": self.target.to_dict(),
            "ranges": serialize_box(self.ranges),
            "satisfiable": self.satisfiable,
            "alternatives": [serialize_box(box) for box in self.alternatives],
            "truncated": self.truncated,
            "partially_unknown": self.partially_unknown,
            "path_count": self.path_count,
            "diagnostic": self.diagnostic,
        }


def _branch_points(cfg: Cfg, blocks: Sequence[int]) -> Tuple[Tuple[int, Optional[bool]], ...]:
    points = []
    for block_id, following in zip(blocks, blocks[1:]):
        block = cfg[block_id]
        if not block.ends_in_jumpi:
            continue
        kinds = cfg.edge_kinds(block_id, following)
        if len(kinds) > 1:
            points.append((block_id, None))
        else:
            points.append((block_id, kinds[0] == EdgeKind.BRANCH_TRUE))
    return tuple(points)


def find_paths(
    cfg: Cfg, target_block: int, limit: int = DEFAULT_PATH_LIMIT
) -> PathEnumeration:
    """
    Enumerate simple paths from the entry to any copy of ``target_block``.

    Parameters
    ----------
    cfg: Cfg
        An acyclic (unrolled) CFG.
    target_block: int
        Block id in the CFG before unrolling.
    limit: int
        At most this many paths are returned; ``truncated`` is set when more
        exist.

    Returns
    -------
    enumeration: PathEnumeration
    """
    if not cfg.is_acyclic():
        raise ValueError("Paths are enumerated over an acyclic CFG")

    copies = set(cfg.copies_of(target_block))
    if not copies:
        return PathEnumeration([], False)

    relevant = set(copies)
    for copy in copies:
        relevant |= nx.ancestors(cfg.graph, copy)
    if cfg.entry not in relevant:
        return PathEnumeration([], False)

    found: List[Tuple[int, ...]] = []
    if cfg.entry in copies:
        found.append((cfg.entry,))
    others = copies - {cfg.entry}
    if others:
        subgraph = cfg.graph.subgraph(relevant)
        generator = nx.all_simple_paths(subgraph, cfg.entry, others)
        found.extend(tuple(p) for p in islice(generator, limit + 1 - len(found)))

    truncated = len(found) > limit
    if truncated:
        logger.warning(
            "Path enumeration to block %d stopped at %d paths", target_block, limit
        )
        found = found[:limit]
    paths = [Path(blocks, _branch_points(cfg, blocks)) for blocks in found]
    return PathEnumeration(paths, truncated)


class _Reconstruction:
    """Hole bookkeeping for one reverse walk."""

    def __init__(self):
        self.definitions: Dict[int, tuple] = {}
        # (index, offset hole, size, size hole, value hole), newest first.
        self.writes: List[tuple] = []
        self.reading = False
        self.count = 0

    def hole(self) -> int:
        self.count += 1
        return self.count - 1

    def step(self, index: int, instruction: Instruction, pending: Dict[int, int]):
        name = instruction.opcode
        following: Dict[int, int] = {}

        def bind(position: int, hole: int) -> None:
            if position in following:
                self.definitions[hole] = ("alias", following[position])
            else:
                following[position] = hole

        def fresh(position: int) -> int:
            if position not in following:
                following[position] = self.hole()
            return following[position]

        if push_width(name):
            for position, hole in pending.items():
                if position == 0:
                    self.definitions[hole] = ("const", instruction.value)
                else:
                    bind(position - 1, hole)
            return following

        n = dup_depth(name)
        if n is not None:
            for position, hole in pending.items():
                bind(n - 1 if position == 0 else position - 1, hole)
            return following

        n = swap_depth(name)
        if n is not None:
            for position, hole in pending.items():
                if position == 0:
                    bind(n, hole)
                elif position == n:
                    bind(0, hole)
                else:
                    bind(position, hole)
            return following

        op = info(name)
        produced = pending.get(0) if op.pushes else None
        for position, hole in pending.items():
            if position >= op.pushes:
                bind(position - op.pushes + op.pops, hole)

        if self.reading:
            if name == "MSTORE":
                self.writes.append((index, fresh(0), 32, None, fresh(1)))
            elif name == "MSTORE8":
                self.writes.append((index, fresh(0), 1, None, None))
            elif name in CLOBBERS:
                offset, size = CLOBBERS[name]
                self.writes.append((index, fresh(offset), None, fresh(size), None))

        if produced is None:
            return following
        if name in BINARY_OPS:
            definition = ("binary", name, fresh(0), fresh(1))
        elif name in UNARY_OPS:
            definition = ("unary", name, fresh(0))
        elif name == "SLOAD":
            definition = ("sload", fresh(0))
        elif name == "CALLDATALOAD":
            definition = ("calldataload", fresh(0))
        elif name == "MLOAD":
            definition = ("mload", fresh(0), index)
            self.reading = True
        elif name == "SHA3":
            definition = ("sha3", fresh(0), fresh(1), index)
            self.reading = True
        else:
            definition = ("leaf", name)
        self.definitions[produced] = definition
        return following

    def _writes_before(self, index: int) -> List[tuple]:
        return [write for write in reversed(self.writes) if write[0] < index]

    def _dependencies(self, definition: Optional[tuple]) -> List[int]:
        if definition is None:
            return []
        kind = definition[0]
        if kind == "alias":
            return [definition[1]]
        elif kind == "binary":
            return [definition[2], definition[3]]
        elif kind in ("unary",):
            return [definition[2]]
        elif kind in ("sload", "calldataload"):
            return [definition[1]]
        elif kind in ("mload", "sha3"):
            holes = [h for h in definition[1:-1]]
            for _, offset, _, size, value in self._writes_before(definition[-1]):
                holes.extend(h for h in (offset, size, value) if h is not None)
            return holes
        return []

    def _memory(self, index: int, values: Dict[int, SymExpr]) -> List[MemoryWrite]:
        memory = []
        for _, offset, size, size_hole, value in self._writes_before(index):
            if size_hole is not None:
                size = _const_or_none(values[size_hole])
            memory.append(
                MemoryWrite(
                    _const_or_none(values[offset]),
                    size,
                    values[value] if value is not None else Unknown("memory write"),
                )
            )
        return memory

    def _evaluate(self, definition, values, bound) -> SymExpr:
        if definition is None:
            return Unknown("value from before the code")
        kind = definition[0]
        if kind == "const":
            return Const(definition[1])
        elif kind == "alias":
            return values[definition[1]]
        elif kind == "binary":
            _, name, left, right = definition
            return binop(name, values[left], values[right], bound)
        elif kind == "unary":
            return unop(definition[1], values[definition[2]], bound)
        elif kind == "sload":
            return storage(values[definition[1]])
        elif kind == "calldataload":
            return calldata(values[definition[1]])
        elif kind == "mload":
            _, offset, index = definition
            return read_word(self._memory(index, values), values[offset])
        elif kind == "sha3":
            _, offset, size, index = definition
            return hash_memory(self._memory(index, values), values[offset], values[size])
        return leaf(definition[1])

    def resolve(self, root: int, bound: int) -> SymExpr:
        values: Dict[int, SymExpr] = {}
        stack = [root]
        while stack:
            hole = stack[-1]
            if hole in values:
                stack.pop()
                continue
            definition = self.definitions.get(hole)
            missing = [h for h in self._dependencies(definition) if h not in values]
            if missing:
                stack.extend(missing)
                continue
            values[hole] = self._evaluate(definition, values, bound)
            stack.pop()
        return values[root]


def _const_or_none(expr: SymExpr) -> Optional[int]:
    return expr.value if isinstance(expr, Const) else None


def reconstruct_condition(
    instructions: Sequence[Instruction], bound: int = DEFAULT_DEPTH_BOUND
) -> SymExpr:
    """
    Reconstruct the condition operand of the JUMPI that ends
    ``instructions``, in terms of the state before the first instruction.
    """
    if not instructions or instructions[-1].opcode != "JUMPI":
        raise ValueError("Instructions must end in a JUMPI")

    reconstruction = _Reconstruction()
    condition = reconstruction.hole()
    pending = {1: condition}
    for index in range(len(instructions) - 2, -1, -1):
        if not pending and not reconstruction.reading:
            break
        pending = reconstruction.step(index, instructions[index], pending)
    return reconstruction.resolve(condition, bound)


class StateAnalyzer:
    """
    Derives state targets over one unrolled CFG. Reconstructed conditions
    are shared between paths with the same block prefix.
    """

    def __init__(
        self,
        cfg: Cfg,
        path_limit: int = DEFAULT_PATH_LIMIT,
        bound: int = DEFAULT_DEPTH_BOUND,
    ):
        self.cfg = cfg
        self.path_limit = path_limit
        self.bound = bound
        self._conditions: Dict[Tuple[int, ...], SymExpr] = {}

    def condition(self, prefix: Sequence[int]) -> SymExpr:
        key = tuple(self.cfg[block_id].original for block_id in prefix)
        if key not in self._conditions:
            instructions = [
                instruction
                for block_id in prefix
                for instruction in self.cfg[block_id].instructions
            ]
            self._conditions[key] = reconstruct_condition(instructions, self.bound)
        return self._conditions[key]

    def branch_constraint(self, path: Path, branch_point: Tuple[int, Optional[bool]]):
        block_id, direction = branch_point
        if direction is None:
            return TRUE
        position = path.blocks.index(block_id)
        return branch_condition(self.condition(path.blocks[: position + 1]), direction)

    def derive(self, target: CodeTarget) -> StateTarget:
        enumeration = find_paths(self.cfg, target.block_id, self.path_limit)
        if not enumeration.paths:
            return StateTarget(
                target, {}, False, diagnostic="target block is unreachable"
            )

        path_constraints = []
        alternatives: List[Box] = []
        partially_unknown = False
        for path in enumeration.paths:
            branch = [self.branch_constraint(path, point) for point in path.branch_points]
            partially_unknown |= any(is_partially_unknown(c) for c in branch)
            constraint = conjoin(branch)
            path_constraints.append(constraint)
            solution = solve(constraint)
            if solution.satisfiable and solution.ranges not in alternatives:
                alternatives.append(solution.ranges)

        constraint = disjoin(path_constraints)
        solution = solve(constraint)
        diagnostic = ""
        if not solution.satisfiable:
            diagnostic = "all paths are unsatisfiable"
        elif enumeration.truncated:
            diagnostic = f"path enumeration stopped at {self.path_limit} paths"
        logger.debug(
            "State target for %s at pc %d: %d paths, %d slots",
            target.bug_class.value,
            target.anchor_pc,
            len(enumeration.paths),
            len(solution.ranges),
        )
        return StateTarget(
            target=target,
            ranges=solution.ranges,
            satisfiable=solution.satisfiable,
            alternatives=tuple(alternatives),
            constraint=constraint,
            truncated=enumeration.truncated,
            partially_unknown=partially_unknown,
            path_count=len(enumeration.paths),
            diagnostic=diagnostic,
        )


def backward_branch_constraints(
    cfg: Cfg, path: Path, branch_point: Tuple[int, Optional[bool]]
):
    """Constraint for one branch point of a path taking its required direction."""
    return StateAnalyzer(cfg).branch_constraint(path, branch_point)


def derive_state_target(
    cfg: Cfg, target: CodeTarget, path_limit: int = DEFAULT_PATH_LIMIT
) -> StateTarget:
    return StateAnalyzer(cfg, path_limit).derive(target)


def sample_assignment(state_target: StateTarget, rng: np.random.Generator) -> Dict[int, int]:
    """
    A concrete storage assignment satisfying one contributing path, chosen
    uniformly among the satisfiable ones.
    """
    if not state_target.satisfiable or not state_target.alternatives:
        return {}
    choice = int(rng.integers(len(state_target.alternatives)))
    return sample_box(state_target.alternatives[choice], rng)
