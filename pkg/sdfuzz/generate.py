"""
Random programs for property checks.

``guarded_contract`` writes a contract whose only route to a SELFDESTRUCT
passes a chain of storage guards; every other direction reverts.
``straight_line`` writes a block of code ending in a JUMPI whose condition
is built only from modelled values, so symbolic evaluation never meets an
unknown leaf.
"""
from typing import Dict, List, NamedTuple

import numpy as np

from sdfuzz.abi import AbiDescriptor, parse_abi
from sdfuzz.assembler import assemble
from sdfuzz.opcodes import evaluate_binary, evaluate_unary

GUARD_OPS = ("LT", "GT", "EQ", "SLT", "SGT")
MAX_CONSTANT = 1000

LEAVES = ("CALLER", "CALLVALUE", "TIMESTAMP", "NUMBER")
BINARY = ("ADD", "SUB", "MUL", "AND", "OR", "XOR", "LT", "GT", "EQ", "SLT", "SGT")
UNARY = ("ISZERO", "NOT")

GENERATED_ABI = {
    "functions": [
        {"name": "poke", "selector": "0x00000001", "params": [], "payable": False}
    ]
}


class Guard(NamedTuple):
    slot: int
    op: str
    constant: int
    negated: bool

    def satisfied(self, value: int) -> bool:
        # The constant is on top of the stack when the comparison runs.
        result = evaluate_binary(self.op, self.constant, value)
        if self.negated:
            result = evaluate_unary("ISZERO", result)
        return result != 0


class GeneratedContract(NamedTuple):
    source: str
    bytecode: bytes
    abi: AbiDescriptor
    guards: List[Guard]
    target_pc: int

    def satisfied_by(self, storage: Dict[int, int]) -> bool:
        return all(g.satisfied(storage.get(g.slot, 0)) for g in self.guards)


def guarded_contract(rng: np.random.Generator, max_guards: int = 3) -> GeneratedContract:
    """
    A chain of one to ``max_guards`` storage guards in front of an
    unprotected SELFDESTRUCT.
    """
    n_guards = int(rng.integers(1, max_guards + 1))
    slots = [int(s) for s in rng.choice(8, size=n_guards, replace=True)]
    guards = [
        Guard(
            slot=slot,
            op=str(rng.choice(GUARD_OPS)),
            constant=int(rng.integers(0, MAX_CONSTANT)),
            negated=bool(rng.random() < 0.3),
        )
        for slot in slots
    ]

    lines = []
    for i, guard in enumerate(guards):
        lines += [f"PUSH {guard.slot}", "SLOAD", f"PUSH {guard.constant}", guard.op]
        if guard.negated:
            lines.append("ISZERO")
        lines += [f"PUSH @g{i + 1}", "JUMPI", "PUSH 0", "DUP1", "REVERT"]
        lines.append(f"g{i + 1}: JUMPDEST")
    lines += ["CALLER", "SELFDESTRUCT"]
    source = "\n".join(lines) + "\n"

    bytecode = assemble(source)
    target_pc = len(bytecode) - 3
    return GeneratedContract(source, bytecode, parse_abi(GENERATED_ABI), guards, target_pc)


def straight_line(rng: np.random.Generator, length: int = 12) -> str:
    """
    Source for ``length`` random value-producing steps followed by a JUMPI
    on the top of the stack. Memory is only written and read at constant
    offsets.
    """
    lines: List[str] = []
    height = 0
    stored: List[int] = []

    def push_value():
        nonlocal height
        roll = rng.random()
        if roll < 0.3:
            lines.append(f"PUSH {int(rng.integers(0, MAX_CONSTANT))}")
        elif roll < 0.5:
            lines.extend([f"PUSH {int(rng.integers(0, 8))}", "SLOAD"])
        elif roll < 0.65:
            lines.extend([f"PUSH {4 + 32 * int(rng.integers(0, 3))}", "CALLDATALOAD"])
        elif roll < 0.8 and stored:
            lines.extend([f"PUSH {int(rng.choice(stored))}", "MLOAD"])
        else:
            lines.append(str(rng.choice(LEAVES)))
        height += 1

    for _ in range(length):
        roll = rng.random()
        if height < 2 or roll < 0.3:
            push_value()
        elif roll < 0.6:
            lines.append(str(rng.choice(BINARY)))
            height -= 1
        elif roll < 0.7:
            lines.append(str(rng.choice(UNARY)))
        elif roll < 0.8:
            lines.append(f"DUP{int(rng.integers(1, min(height, 4) + 1))}")
            height += 1
        elif roll < 0.9:
            lines.append(f"SWAP{int(rng.integers(1, min(height - 1, 3) + 1))}")
        else:
            offset = 32 * int(rng.integers(0, 4))
            lines += [f"PUSH {offset}", "MSTORE"]
            stored.append(offset)
            height -= 1

    if height == 0:
        push_value()
    lines += ["PUSH @end", "JUMPI", "end: JUMPDEST", "STOP"]
    return "\n".join(lines) + "\n"
