"""
Symbolic expressions over contract state and inputs.

Expressions are immutable and hashable. They are built through the
``binop``, ``unop`` and ``sha3`` constructors, which fold constants and cap
the depth, so two evaluators that use the constructors on the same
instruction sequence produce structurally equal trees.
"""
from dataclasses import dataclass, field
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple, Type

from eth_hash.auto import keccak

from sdfuzz.bytecode import Instruction
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

DEFAULT_DEPTH_BOUND = 64
MAX_HASHED_WORDS = 4


class SymExpr:
    __slots__ = ()

    @property
    def children(self) -> Tuple["SymExpr", ...]:
        return ()

    @property
    def depth(self) -> int:
        return 1 + max((child.depth for child in self.children), default=0)

    def walk(self) -> Iterator["SymExpr"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def contains(self, *kinds: Type["SymExpr"]) -> bool:
        return any(isinstance(node, kinds) for node in self.walk())


@dataclass(frozen=True)
class Const(SymExpr):
    value: int


@dataclass(frozen=True)
class StorageSlot(SymExpr):
    slot: SymExpr

    @property
    def children(self):
        return (self.slot,)


@dataclass(frozen=True)
class Calldata(SymExpr):
    offset: SymExpr

    @property
    def children(self):
        return (self.offset,)


@dataclass(frozen=True)
class Caller(SymExpr):
    pass


@dataclass(frozen=True)
class CallValue(SymExpr):
    pass


@dataclass(frozen=True)
class BlockField(SymExpr):
    kind: str


@dataclass(frozen=True)
class UnOp(SymExpr):
    op: str
    arg: SymExpr

    @property
    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class BinOp(SymExpr):
    # ``left`` is the operand that was on top of the stack.
    op: str
    left: SymExpr
    right: SymExpr

    @property
    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Sha3(SymExpr):
    words: Tuple[SymExpr, ...]

    @property
    def children(self):
        return self.words


@dataclass(frozen=True)
class Unknown(SymExpr):
    reason: str = field(default="", compare=False)


def binop(op: str, left: SymExpr, right: SymExpr, bound: int = DEFAULT_DEPTH_BOUND):
    if isinstance(left, Const) and isinstance(right, Const):
        return Const(evaluate_binary(op, left.value, right.value))
    if isinstance(left, Unknown) or isinstance(right, Unknown):
        return Unknown(f"{op} of unknown operand")
    if 1 + max(left.depth, right.depth) > bound:
        return Unknown("depth bound")
    return BinOp(op, left, right)


def unop(op: str, arg: SymExpr, bound: int = DEFAULT_DEPTH_BOUND):
    if isinstance(arg, Const):
        return Const(evaluate_unary(op, arg.value))
    if isinstance(arg, Unknown):
        return Unknown(f"{op} of unknown operand")
    if 1 + arg.depth > bound:
        return Unknown("depth bound")
    return UnOp(op, arg)


def sha3(words: Sequence[SymExpr]):
    words = tuple(words)
    if any(isinstance(word, Unknown) for word in words):
        return Unknown("hash of unknown memory")
    if all(isinstance(word, Const) for word in words):
        data = b"".join(word.value.to_bytes(32, "big") for word in words)
        return Const(int.from_bytes(keccak(data), "big"))
    return Sha3(words)


def storage(slot: SymExpr):
    if isinstance(slot, Unknown):
        return Unknown("storage at unknown slot")
    return StorageSlot(slot)


def calldata(offset: SymExpr):
    if isinstance(offset, Unknown):
        return Unknown("calldata at unknown offset")
    return Calldata(offset)


class MemoryWrite(NamedTuple):
    # offset None means the written region is not constant.
    offset: Optional[int]
    size: Optional[int]
    value: SymExpr


def read_word(writes: Sequence[MemoryWrite], offset: SymExpr) -> SymExpr:
    """
    Value of the 32-byte memory word at ``offset`` given the writes before it,
    oldest first. Only an exact, word-aligned preceding MSTORE yields its
    value; untouched memory reads as zero.
    """
    if not isinstance(offset, Const):
        return Unknown("memory read at unknown offset")
    start = offset.value
    for write in reversed(writes):
        if write.size == 0:
            continue
        if write.offset is None or write.size is None:
            return Unknown("memory clobbered at unknown offset")
        if write.offset < start + 32 and start < write.offset + write.size:
            if write.offset == start and write.size == 32:
                return write.value
            return Unknown("partially overlapping memory write")
    return Const(0)


def hash_memory(writes: Sequence[MemoryWrite], offset: SymExpr, size: SymExpr):
    if not isinstance(offset, Const) or not isinstance(size, Const):
        return Unknown("hash of unknown memory region")
    if size.value % 32 or size.value > 32 * MAX_HASHED_WORDS:
        return Unknown("hash of unaligned memory region")
    words = [
        read_word(writes, Const(offset.value + 32 * i)) for i in range(size.value // 32)
    ]
    return sha3(words)


def leaf(name: str) -> SymExpr:
    if name == "CALLER":
        return Caller()
    elif name == "CALLVALUE":
        return CallValue()
    elif name in BLOCK_FIELDS:
        return BlockField(name)
    return Unknown(f"{name} is not modelled")


# Memory regions written by an opcode, as (offset position, size position)
# on the stack before it executes.
CLOBBERS = {
    "CALLDATACOPY": (0, 2),
    "CALL": (5, 6),
    "DELEGATECALL": (4, 5),
    "STATICCALL": (4, 5),
}


def _const_or_none(expr: SymExpr) -> Optional[int]:
    return expr.value if isinstance(expr, Const) else None


class ForwardResult(NamedTuple):
    stack: List[SymExpr]
    condition: Optional[SymExpr]


def forward_evaluate(
    instructions: Sequence[Instruction], bound: int = DEFAULT_DEPTH_BOUND
) -> ForwardResult:
    """
    Symbolically execute straight-line code from an empty stack.

    Storage reads are expressions over the state before the code runs. When
    the last instruction is a JUMPI, its condition operand is returned.

    Parameters
    ----------
    instructions: Sequence[Instruction]
    bound: int
        Depth bound for constructed expressions.

    Returns
    -------
    result: ForwardResult
        The stack (top last) before the final JUMPI, or after the last
        instruction, and the JUMPI condition when there is one.
    """
    stack: List[SymExpr] = []
    writes: List[MemoryWrite] = []

    def pop() -> SymExpr:
        return stack.pop() if stack else Unknown("value from before the code")

    def peek(position: int) -> SymExpr:
        return stack[-1 - position] if position < len(stack) else Unknown("underflow")

    for index, instruction in enumerate(instructions):
        name = instruction.opcode
        if name == "JUMPI" and index == len(instructions) - 1:
            return ForwardResult(stack, peek(1))

        if name in CLOBBERS:
            offset_position, size_position = CLOBBERS[name]
            writes.append(
                MemoryWrite(
                    _const_or_none(peek(offset_position)),
                    _const_or_none(peek(size_position)),
                    Unknown("clobbered"),
                )
            )

        if push_width(name):
            stack.append(Const(instruction.value))
        elif dup_depth(name) is not None:
            stack.append(peek(dup_depth(name) - 1))
        elif swap_depth(name) is not None:
            n = swap_depth(name)
            while len(stack) < n + 1:
                stack.insert(0, Unknown("underflow"))
            stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
        elif name in BINARY_OPS:
            left = pop()
            right = pop()
            stack.append(binop(name, left, right, bound))
        elif name in UNARY_OPS:
            stack.append(unop(name, pop(), bound))
        elif name == "SLOAD":
            stack.append(storage(pop()))
        elif name == "CALLDATALOAD":
            stack.append(calldata(pop()))
        elif name == "MLOAD":
            stack.append(read_word(writes, pop()))
        elif name == "SHA3":
            offset = pop()
            size = pop()
            stack.append(hash_memory(writes, offset, size))
        elif name in ("MSTORE", "MSTORE8"):
            offset = pop()
            value = pop()
            size = 32 if name == "MSTORE" else 1
            stored = value if name == "MSTORE" else Unknown("byte store")
            writes.append(MemoryWrite(_const_or_none(offset), size, stored))
        else:
            op = info(name)
            for _ in range(op.pops):
                pop()
            if op.pushes:
                stack.append(leaf(name))

    return ForwardResult(stack, None)
