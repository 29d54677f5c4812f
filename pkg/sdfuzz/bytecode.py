"""
Decoding of runtime bytecode into instructions.
"""
import logging
import pathlib
import re
from typing import List, NamedTuple, Optional, Union

from eth_utils import decode_hex

from sdfuzz.opcodes import BY_CODE, push_width

logger = logging.getLogger(__name__)


class Instruction(NamedTuple):
    pc: int
    opcode: str
    immediate: Optional[bytes] = None

    @property
    def size(self) -> int:
        return 1 + (len(self.immediate) if self.immediate is not None else 0)

    @property
    def next_pc(self) -> int:
        return self.pc + self.size

    @property
    def value(self) -> Optional[int]:
        if self.immediate is None:
            return None
        return int.from_bytes(self.immediate, "big")

    def __str__(self) -> str:
        if self.immediate is None:
            return f"{self.pc:#06x} {self.opcode}"
        return f"{self.pc:#06x} {self.opcode} 0x{self.immediate.hex()}"


def disassemble(bytecode: bytes) -> List[Instruction]:
    """
    Decode bytecode into an ordered instruction list.

    Unknown bytes decode as single byte INVALID instructions. A PUSH whose
    immediate runs past the end of the code decodes as INVALID and ends
    decoding.

    Parameters
    ----------
    bytecode: bytes

    Returns
    -------
    instructions: List[Instruction]
    """
    if len(bytecode) == 0:
        raise ValueError("Cannot disassemble empty bytecode")

    instructions = []
    pc = 0
    while pc < len(bytecode):
        op = BY_CODE.get(bytecode[pc])
        if op is None:
            instructions.append(Instruction(pc, "INVALID"))
            pc += 1
            continue

        width = push_width(op.name)
        if width:
            immediate = bytecode[pc + 1 : pc + 1 + width]
            if len(immediate) < width:
                logger.debug("Truncated %s at pc %d", op.name, pc)
                instructions.append(Instruction(pc, "INVALID"))
                break
            instructions.append(Instruction(pc, op.name, bytes(immediate)))
        else:
            instructions.append(Instruction(pc, op.name))
        pc += 1 + width

    return instructions


def parse_hex(text: str) -> bytes:
    # Whitespace, including line breaks, may be used freely in hex files.
    compact = re.sub(r"\s+", "", text)
    if compact in ("", "0x", "0X"):
        raise ValueError("Bytecode file contains no hex digits")
    return decode_hex(compact)


def read_bytecode(path: Union[str, pathlib.Path]) -> bytes:
    """
    Read bytecode from a hex file or assemble it from a mini-asm file.
    """
    from sdfuzz.assembler import assemble

    path = pathlib.Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    text = path.read_text()
    if path.suffix == ".easm":
        return assemble(text)
    return parse_hex(text)
