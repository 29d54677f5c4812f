"""
A small assembler for authoring contracts.

Grammar
-------
Statements are separated by newlines or by ``/``. Everything after ``;`` on
a line is a comment. A statement is one of:

* ``name:`` defines a label at the current offset. A statement may follow
  the label on the same line, e.g. ``loop: JUMPDEST``.
* ``MNEMONIC`` for any opcode without immediate.
* ``PUSHn value`` with a decimal or ``0x`` hexadecimal value that must fit
  in ``n`` bytes.
* ``PUSH value`` picks the smallest width that fits the value.
* ``PUSH @label`` pushes the offset of a label as a 2-byte immediate;
  ``PUSHn @label`` uses the given width.

Labels may be referenced before they are defined.
"""
import re
from typing import Dict, List, NamedTuple, Optional, Tuple

from sdfuzz.opcodes import BY_NAME, push_width

LABEL = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


class AssemblyError(ValueError):
    pass


class _Statement(NamedTuple):
    line: int
    mnemonic: str
    width: int
    value: Optional[int]
    label: Optional[str]


def _parse_int(token: str, line: int) -> int:
    try:
        value = int(token, 0)
    except ValueError:
        raise AssemblyError(f"line {line}: invalid immediate: {token}")
    if value < 0:
        raise AssemblyError(f"line {line}: negative immediate: {token}")
    return value


def _minimal_width(value: int) -> int:
    return max(1, (value.bit_length() + 7) // 8)


def _parse_statement(tokens: List[str], line: int) -> _Statement:
    mnemonic = tokens[0].upper()
    operand = tokens[1] if len(tokens) > 1 else None
    if len(tokens) > 2:
        raise AssemblyError(f"line {line}: too many operands: {' '.join(tokens)}")

    if mnemonic == "PUSH" or (mnemonic.startswith("PUSH") and mnemonic in BY_NAME):
        if operand is None:
            raise AssemblyError(f"line {line}: {mnemonic} requires an operand")
        width = push_width(mnemonic) if mnemonic != "PUSH" else 0
        if operand.startswith("@"):
            label = operand[1:]
            if not LABEL.match(label):
                raise AssemblyError(f"line {line}: invalid label reference: {operand}")
            width = width or 2
            return _Statement(line, f"PUSH{width}", width, None, label)
        value = _parse_int(operand, line)
        if width == 0:
            width = _minimal_width(value)
            if width > 32:
                raise AssemblyError(f"line {line}: immediate overflow: {operand}")
        elif value.bit_length() > 8 * width:
            raise AssemblyError(
                f"line {line}: immediate overflow for {mnemonic}: {operand}"
            )
        return _Statement(line, f"PUSH{width}", width, value, None)

    if mnemonic not in BY_NAME:
        raise AssemblyError(f"line {line}: unknown mnemonic: {tokens[0]}")
    if operand is not None:
        raise AssemblyError(f"line {line}: {mnemonic} takes no operand")
    return _Statement(line, mnemonic, 0, None, None)


def _split(text: str) -> List[Tuple[int, str]]:
    pieces = []
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split(";", 1)[0]
        for piece in content.split("/"):
            piece = piece.strip()
            if piece:
                pieces.append((number, piece))
    return pieces


def assemble(text: str) -> bytes:
    """
    Assemble mini-asm source into bytecode.

    Parameters
    ----------
    text: str
        Source in the mini-asm grammar.

    Returns
    -------
    bytecode: bytes
    """
    labels: Dict[str, int] = {}
    statements: List[_Statement] = []
    offset = 0

    # First pass: sizes and label offsets.
    for line, piece in _split(text):
        tokens = piece.split()
        while tokens and tokens[0].endswith(":"):
            name = tokens.pop(0)[:-1]
            if not LABEL.match(name):
                raise AssemblyError(f"line {line}: invalid label: {name}")
            if name in labels:
                raise AssemblyError(f"line {line}: duplicate label: {name}")
            labels[name] = offset
        if not tokens:
            continue
        statement = _parse_statement(tokens, line)
        statements.append(statement)
        offset += 1 + statement.width

    # Second pass: emit.
    output = bytearray()
    for statement in statements:
        output.append(BY_NAME[statement.mnemonic].code)
        if statement.width == 0:
            continue
        value = statement.value
        if statement.label is not None:
            if statement.label not in labels:
                raise AssemblyError(
                    f"line {statement.line}: undefined label: {statement.label}"
                )
            value = labels[statement.label]
            if value.bit_length() > 8 * statement.width:
                raise AssemblyError(
                    f"line {statement.line}: label {statement.label} does not fit "
                    f"in {statement.mnemonic}"
                )
        output.extend(value.to_bytes(statement.width, "big"))

    return bytes(output)
