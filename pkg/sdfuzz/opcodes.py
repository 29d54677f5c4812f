"""
Opcode table and concrete 256-bit word arithmetic.

The table is shared by the disassembler, the interpreter, the static taint
pass and the symbolic evaluators, so stack arity is defined in one place.
"""
from typing import Dict, NamedTuple, Optional

WORD_BITS = 256
WORD_MOD = 1 << WORD_BITS
WORD_MAX = WORD_MOD - 1
SIGN_BIT = 1 << (WORD_BITS - 1)


class OpInfo(NamedTuple):
    code: int
    name: str
    pops: int
    pushes: int


def _build_table() -> Dict[int, OpInfo]:
    entries = [
        (0x00, "STOP", 0, 0),
        (0x01, "ADD", 2, 1),
        (0x02, "MUL", 2, 1),
        (0x03, "SUB", 2, 1),
        (0x04, "DIV", 2, 1),
        (0x06, "MOD", 2, 1),
        (0x10, "LT", 2, 1),
        (0x11, "GT", 2, 1),
        (0x12, "SLT", 2, 1),
        (0x13, "SGT", 2, 1),
        (0x14, "EQ", 2, 1),
        (0x15, "ISZERO", 1, 1),
        (0x16, "AND", 2, 1),
        (0x17, "OR", 2, 1),
        (0x18, "XOR", 2, 1),
        (0x19, "NOT", 1, 1),
        (0x1B, "SHL", 2, 1),
        (0x1C, "SHR", 2, 1),
        (0x20, "SHA3", 2, 1),
        (0x30, "ADDRESS", 0, 1),
        (0x31, "BALANCE", 1, 1),
        (0x33, "CALLER", 0, 1),
        (0x34, "CALLVALUE", 0, 1),
        (0x35, "CALLDATALOAD", 1, 1),
        (0x36, "CALLDATASIZE", 0, 1),
        (0x37, "CALLDATACOPY", 3, 0),
        (0x41, "COINBASE", 0, 1),
        (0x42, "TIMESTAMP", 0, 1),
        (0x43, "NUMBER", 0, 1),
        (0x44, "PREVRANDAO", 0, 1),
        (0x45, "GASLIMIT", 0, 1),
        (0x50, "POP", 1, 0),
        (0x51, "MLOAD", 1, 1),
        (0x52, "MSTORE", 2, 0),
        (0x53, "MSTORE8", 2, 0),
        (0x54, "SLOAD", 1, 1),
        (0x55, "SSTORE", 2, 0),
        (0x56, "JUMP", 1, 0),
        (0x57, "JUMPI", 2, 0),
        (0x5A, "GAS", 0, 1),
        (0x5B, "JUMPDEST", 0, 0),
        (0xF1, "CALL", 7, 1),
        (0xF3, "RETURN", 2, 0),
        (0xF4, "DELEGATECALL", 6, 1),
        (0xFA, "STATICCALL", 6, 1),
        (0xFD, "REVERT", 2, 0),
        (0xFE, "INVALID", 0, 0),
        (0xFF, "SELFDESTRUCT", 1, 0),
    ]
    for width in range(1, 33):
        entries.append((0x5F + width, f"PUSH{width}", 0, 1))
    for n in range(1, 17):
        entries.append((0x7F + n, f"DUP{n}", n, n + 1))
        entries.append((0x8F + n, f"SWAP{n}", n + 1, n + 1))
    for n in range(5):
        entries.append((0xA0 + n, f"LOG{n}", n + 2, 0))
    return {code: OpInfo(code, name, pops, pushes) for code, name, pops, pushes in entries}


BY_CODE: Dict[int, OpInfo] = _build_table()
BY_NAME: Dict[str, OpInfo] = {info.name: info for info in BY_CODE.values()}

TERMINATORS = frozenset({"STOP", "RETURN", "REVERT", "SELFDESTRUCT", "INVALID"})
JUMPS = frozenset({"JUMP", "JUMPI"})
BLOCK_FIELDS = frozenset({"TIMESTAMP", "NUMBER", "COINBASE", "PREVRANDAO", "GASLIMIT"})
CALLS = frozenset({"CALL", "DELEGATECALL", "STATICCALL"})
BINARY_OPS = frozenset(
    {
        "ADD",
        "MUL",
        "SUB",
        "DIV",
        "MOD",
        "LT",
        "GT",
        "SLT",
        "SGT",
        "EQ",
        "AND",
        "OR",
        "XOR",
        "SHL",
        "SHR",
    }
)
COMPARISONS = frozenset({"LT", "GT", "SLT", "SGT", "EQ"})
UNARY_OPS = frozenset({"ISZERO", "NOT"})


def info(name: str) -> OpInfo:
    try:
        return BY_NAME[name]
    except KeyError:
        raise ValueError(f"Unknown mnemonic: {name}")


def push_width(name: str) -> int:
    """Immediate width of a PUSH mnemonic, 0 for everything else."""
    if name.startswith("PUSH"):
        return int(name[4:])
    return 0


def dup_depth(name: str) -> Optional[int]:
    return int(name[3:]) if name.startswith("DUP") else None


def swap_depth(name: str) -> Optional[int]:
    return int(name[4:]) if name.startswith("SWAP") else None


def to_signed(value: int) -> int:
    return value - WORD_MOD if value & SIGN_BIT else value


def to_unsigned(value: int) -> int:
    return value & WORD_MAX


def evaluate_binary(name: str, a: int, b: int) -> int:
    """
    Apply a binary opcode to concrete words.

    ``a`` is the top of the stack when the opcode executes, ``b`` the item
    below it, following the operand order of the instruction set.
    """
    if name == "ADD":
        return (a + b) & WORD_MAX
    elif name == "MUL":
        return (a * b) & WORD_MAX
    elif name == "SUB":
        return (a - b) & WORD_MAX
    elif name == "DIV":
        return 0 if b == 0 else a // b
    elif name == "MOD":
        return 0 if b == 0 else a % b
    elif name == "LT":
        return int(a < b)
    elif name == "GT":
        return int(a > b)
    elif name == "SLT":
        return int(to_signed(a) < to_signed(b))
    elif name == "SGT":
        return int(to_signed(a) > to_signed(b))
    elif name == "EQ":
        return int(a == b)
    elif name == "AND":
        return a & b
    elif name == "OR":
        return a | b
    elif name == "XOR":
        return a ^ b
    elif name == "SHL":
        return 0 if a >= WORD_BITS else (b << a) & WORD_MAX
    elif name == "SHR":
        return 0 if a >= WORD_BITS else b >> a
    raise ValueError(f"Not a binary opcode: {name}")


def evaluate_unary(name: str, a: int) -> int:
    if name == "ISZERO":
        return int(a == 0)
    elif name == "NOT":
        return a ^ WORD_MAX
    raise ValueError(f"Not a unary opcode: {name}")
