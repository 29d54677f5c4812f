"""
Deterministic interpreter for the supported opcode subset.

Every transaction runs on a clone of the world state. External calls are
stubbed: they succeed, move the attached value and write zero-filled return
data. A call to an attacker harness address may re-enter the contract once,
which is what the reentrancy oracle relies on.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Set, Tuple

from eth_hash.auto import keccak

from sdfuzz.bytecode import Instruction, disassemble
from sdfuzz.cfg import build_cfg
from sdfuzz.opcodes import (
    BINARY_OPS,
    BLOCK_FIELDS,
    UNARY_OPS,
    WORD_MAX,
    dup_depth,
    evaluate_binary,
    evaluate_unary,
    info,
    push_width,
    swap_depth,
)
from sdfuzz.taint import (
    BLOCKDATA,
    CALLDATA,
    CALLER,
    CALLVALUE,
    ENVIRONMENT,
    NO_LABELS,
    STORAGE,
)

logger = logging.getLogger(__name__)

ADDRESS_MASK = (1 << 160) - 1
DEPLOYER = 0x1111111111111111111111111111111111111111
ATTACKER = 0xAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA
SENDER_FUNDS = 10**24

MAX_STACK = 1024
MAX_MEMORY = 1 << 20


class ExecStatus(str, Enum):
    STOPPED = "stopped"
    RETURNED = "returned"
    REVERTED = "reverted"
    INVALID = "invalid"
    STACK_UNDERFLOW = "stack-underflow"
    STACK_OVERFLOW = "stack-overflow"
    BAD_JUMP = "bad-jump"
    OUT_OF_STEPS = "out-of-steps"
    INSUFFICIENT_FUNDS = "insufficient-funds"
    NON_PAYABLE = "non-payable"

    @property
    def succeeded(self) -> bool:
        return self in (ExecStatus.STOPPED, ExecStatus.RETURNED)


class ReentryPolicy(str, Enum):
    NONE = "none"
    ONCE = "once"


@dataclass(frozen=True)
class BlockEnv:
    timestamp: int = 1_000_000
    number: int = 1_000
    coinbase: int = 0
    prevrandao: int = 0
    gaslimit: int = 0

    def perturbed(self, timestamp: int = 0, number: int = 0) -> "BlockEnv":
        return BlockEnv(
            timestamp=max(0, self.timestamp + timestamp),
            number=max(0, self.number + number),
            coinbase=self.coinbase,
            prevrandao=self.prevrandao,
            gaslimit=self.gaslimit,
        )

    def field(self, opcode: str) -> int:
        return getattr(self, opcode.lower())


@dataclass
class WorldState:
    storage: Dict[Tuple[int, int], int] = field(default_factory=dict)
    balances: Dict[int, int] = field(default_factory=dict)
    code: Dict[int, bytes] = field(default_factory=dict)
    block_env: BlockEnv = field(default_factory=BlockEnv)
    harnesses: Set[int] = field(default_factory=set)
    destroyed: Set[int] = field(default_factory=set)
    next_address: int = 1

    def clone(self) -> "WorldState":
        return WorldState(
            storage=dict(self.storage),
            balances=dict(self.balances),
            code=dict(self.code),
            block_env=self.block_env,
            harnesses=set(self.harnesses),
            destroyed=set(self.destroyed),
            next_address=self.next_address,
        )

    def sload(self, address: int, slot: int) -> int:
        return self.storage.get((address, slot), 0)

    def sstore(self, address: int, slot: int, value: int) -> None:
        # Zero words are not stored, so equal states compare equal.
        if value == 0:
            self.storage.pop((address, slot), None)
        else:
            self.storage[(address, slot)] = value

    def balance(self, address: int) -> int:
        return self.balances.get(address, 0)

    def transfer(self, source: int, target: int, value: int) -> bool:
        if value == 0:
            return True
        if self.balance(source) < value:
            return False
        self.balances[source] = self.balance(source) - value
        self.balances[target] = self.balance(target) + value
        return True

    def contract_storage(self, address: int) -> Dict[int, int]:
        return {
            slot: value
            for (owner, slot), value in sorted(self.storage.items())
            if owner == address
        }


@dataclass(frozen=True)
class Transaction:
    sender: int
    selector: int
    args: bytes = b""
    value: int = 0
    block_env_override: Optional[BlockEnv] = None
    # False: the function rejects any attached value.
    payable: bool = True

    @property
    def calldata(self) -> bytes:
        return self.selector.to_bytes(4, "big") + self.args


class StorageAccess(NamedTuple):
    pc: int
    slot: int
    value: int
    depth: int
    seq: int


class CallRecord(NamedTuple):
    pc: int
    kind: str
    target: int
    target_class: str
    value: int
    gas: int
    success: bool
    reentered: bool
    depth: int
    args_tainted: bool
    seq: int


class Transfer(NamedTuple):
    pc: int
    recipient: int
    value: int
    depth: int
    seq: int


class SelfDestructRecord(NamedTuple):
    pc: int
    beneficiary: int
    value: int
    depth: int
    seq: int


@dataclass
class ExecutionTrace:
    tx: Transaction
    status: ExecStatus = ExecStatus.STOPPED
    executed_blocks: List[int] = field(default_factory=list)
    branch_edges: Set[Tuple[int, bool]] = field(default_factory=set)
    storage_reads: List[StorageAccess] = field(default_factory=list)
    storage_writes: List[StorageAccess] = field(default_factory=list)
    calls: List[CallRecord] = field(default_factory=list)
    transfers: List[Transfer] = field(default_factory=list)
    selfdestructs: List[SelfDestructRecord] = field(default_factory=list)
    outgoing_value: int = 0
    reverted: bool = False
    final_storage: Dict[int, int] = field(default_factory=dict)
    reads_block_data: bool = False
    return_data: bytes = b""
    steps: int = 0

    @property
    def slots_read(self) -> Set[int]:
        return {access.slot for access in self.storage_reads}

    @property
    def slots_written(self) -> Set[int]:
        return {access.slot for access in self.storage_writes}


class Program(NamedTuple):
    instructions: Dict[int, Instruction]
    jumpdests: FrozenSet[int]
    block_starts: Dict[int, int]
    block_of: Dict[int, int]


@lru_cache(maxsize=128)
def load_program(code: bytes) -> Program:
    """Decoded code plus the pc to block-id maps of its CFG."""
    instructions = disassemble(code)
    cfg = build_cfg(instructions)
    block_starts = {}
    block_of = {}
    for block in cfg:
        if block.sink is not None:
            continue
        block_starts[block.start_pc] = block.id
        for instruction in block.instructions:
            block_of[instruction.pc] = block.id
    return Program(
        instructions={i.pc: i for i in instructions},
        jumpdests=frozenset(i.pc for i in instructions if i.opcode == "JUMPDEST"),
        block_starts=block_starts,
        block_of=block_of,
    )


def deploy(state: WorldState, runtime_bytecode: bytes) -> int:
    """
    Install runtime bytecode at a fresh, counter-derived address.
    """
    load_program(bytes(runtime_bytecode))
    address = state.next_address
    state.next_address += 1
    state.code[address] = bytes(runtime_bytecode)
    return address


def target_class(labels: FrozenSet[str]) -> str:
    if CALLDATA in labels:
        return "calldata-derived"
    elif STORAGE in labels:
        return "storage-derived"
    elif not labels:
        return "constant"
    return "other"


class _Fault(Exception):
    def __init__(self, status: ExecStatus):
        super().__init__(status.value)
        self.status = status


class _Frame:
    def __init__(self, address: int, caller: int, calldata: bytes, value: int, depth: int):
        self.address = address
        self.caller = caller
        self.calldata = calldata
        self.value = value
        self.depth = depth
        self.stack: List[int] = []
        self.taint: List[FrozenSet[str]] = []
        self.memory = bytearray()
        self.memory_taint: Dict[int, FrozenSet[str]] = {}

    def push(self, value: int, labels: FrozenSet[str] = NO_LABELS) -> None:
        if len(self.stack) >= MAX_STACK:
            raise _Fault(ExecStatus.STACK_OVERFLOW)
        self.stack.append(value & WORD_MAX)
        self.taint.append(labels)

    def pop(self) -> Tuple[int, FrozenSet[str]]:
        if not self.stack:
            raise _Fault(ExecStatus.STACK_UNDERFLOW)
        return self.stack.pop(), self.taint.pop()

    def pop_value(self) -> int:
        return self.pop()[0]

    def expand(self, offset: int, size: int) -> None:
        if size == 0:
            return
        end = offset + size
        if end > MAX_MEMORY:
            raise _Fault(ExecStatus.INVALID)
        if end > len(self.memory):
            words = (end + 31) // 32
            self.memory.extend(bytes(32 * words - len(self.memory)))

    def read(self, offset: int, size: int) -> bytes:
        self.expand(offset, size)
        return bytes(self.memory[offset : offset + size])

    def write(self, offset: int, data: bytes, labels: FrozenSet[str]) -> None:
        self.expand(offset, len(data))
        self.memory[offset : offset + len(data)] = data
        for i in range(offset, offset + len(data)):
            if labels:
                self.memory_taint[i] = labels
            else:
                self.memory_taint.pop(i, None)

    def labels(self, offset: int, size: int) -> FrozenSet[str]:
        if size == 0 or not self.memory_taint:
            return NO_LABELS
        found = set()
        for i in range(offset, min(offset + size, MAX_MEMORY)):
            found.update(self.memory_taint.get(i, ()))
        return frozenset(found)


class _Interpreter:
    def __init__(
        self,
        state: WorldState,
        env: BlockEnv,
        trace: ExecutionTrace,
        policy: ReentryPolicy,
        max_steps: int,
    ):
        self.state = state
        self.env = env
        self.trace = trace
        self.policy = policy
        self.max_steps = max_steps
        self.steps = 0
        self.seq = 0
        self.reentered = False

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def run(self, frame: _Frame) -> Tuple[ExecStatus, bytes]:
        try:
            return self._run(frame)
        except _Fault as fault:
            return fault.status, b""

    def _run(self, frame: _Frame) -> Tuple[ExecStatus, bytes]:
        program = load_program(self.state.code[frame.address])
        pc = 0
        while True:
            if self.steps >= self.max_steps:
                return ExecStatus.OUT_OF_STEPS, b""
            instruction = program.instructions.get(pc)
            if instruction is None:
                return ExecStatus.STOPPED, b""
            self.steps += 1
            block = program.block_starts.get(pc)
            if block is not None:
                self.trace.executed_blocks.append(block)

            name = instruction.opcode
            next_pc = instruction.next_pc

            if push_width(name):
                frame.push(instruction.value)
            elif dup_depth(name) is not None:
                n = dup_depth(name)
                if len(frame.stack) < n:
                    raise _Fault(ExecStatus.STACK_UNDERFLOW)
                frame.push(frame.stack[-n], frame.taint[-n])
            elif swap_depth(name) is not None:
                n = swap_depth(name)
                if len(frame.stack) < n + 1:
                    raise _Fault(ExecStatus.STACK_UNDERFLOW)
                for items in (frame.stack, frame.taint):
                    items[-1], items[-1 - n] = items[-1 - n], items[-1]
            elif name in BINARY_OPS:
                a, a_labels = frame.pop()
                b, b_labels = frame.pop()
                frame.push(evaluate_binary(name, a, b), a_labels | b_labels)
            elif name in UNARY_OPS:
                a, labels = frame.pop()
                frame.push(evaluate_unary(name, a), labels)
            elif name == "JUMP":
                destination = frame.pop_value()
                if destination not in program.jumpdests:
                    return ExecStatus.BAD_JUMP, b""
                next_pc = destination
            elif name == "JUMPI":
                destination = frame.pop_value()
                condition = frame.pop_value()
                self.trace.branch_edges.add((program.block_of[pc], condition != 0))
                if condition != 0:
                    if destination not in program.jumpdests:
                        return ExecStatus.BAD_JUMP, b""
                    next_pc = destination
            elif name == "JUMPDEST":
                pass
            elif name == "POP":
                frame.pop()
            elif name == "STOP":
                return ExecStatus.STOPPED, b""
            elif name in ("RETURN", "REVERT"):
                offset = frame.pop_value()
                size = frame.pop_value()
                data = frame.read(offset, size)
                status = ExecStatus.RETURNED if name == "RETURN" else ExecStatus.REVERTED
                return status, data
            elif name == "INVALID":
                return ExecStatus.INVALID, b""
            elif name == "SELFDESTRUCT":
                self._selfdestruct(frame, instruction)
                return ExecStatus.STOPPED, b""
            elif name in ("CALL", "DELEGATECALL", "STATICCALL"):
                self._call(frame, instruction)
            else:
                self._environment(frame, instruction)

            pc = next_pc

    def _environment(self, frame: _Frame, instruction: Instruction) -> None:
        name = instruction.opcode
        state = self.state
        if name == "SHA3":
            offset = frame.pop_value()
            size = frame.pop_value()
            data = frame.read(offset, size)
            digest = int.from_bytes(keccak(data), "big")
            frame.push(digest, frame.labels(offset, size))
        elif name == "ADDRESS":
            frame.push(frame.address, frozenset({ENVIRONMENT}))
        elif name == "BALANCE":
            address, labels = frame.pop()
            frame.push(state.balance(address & ADDRESS_MASK), labels | {ENVIRONMENT})
        elif name == "CALLER":
            frame.push(frame.caller, frozenset({CALLER}))
        elif name == "CALLVALUE":
            frame.push(frame.value, frozenset({CALLVALUE}))
        elif name == "CALLDATALOAD":
            offset = frame.pop_value()
            word = frame.calldata[offset : offset + 32].ljust(32, b"\x00")
            frame.push(int.from_bytes(word, "big"), frozenset({CALLDATA}))
        elif name == "CALLDATASIZE":
            frame.push(len(frame.calldata), frozenset({CALLDATA}))
        elif name == "CALLDATACOPY":
            destination = frame.pop_value()
            offset = frame.pop_value()
            size = frame.pop_value()
            frame.expand(destination, size)
            data = frame.calldata[offset : offset + size].ljust(size, b"\x00")
            frame.write(destination, data, frozenset({CALLDATA}))
        elif name in BLOCK_FIELDS:
            self.trace.reads_block_data = True
            frame.push(self.env.field(name), frozenset({BLOCKDATA}))
        elif name == "GAS":
            frame.push(self.max_steps - self.steps, frozenset({ENVIRONMENT}))
        elif name == "MLOAD":
            offset = frame.pop_value()
            frame.push(
                int.from_bytes(frame.read(offset, 32), "big"), frame.labels(offset, 32)
            )
        elif name == "MSTORE":
            offset = frame.pop_value()
            value, labels = frame.pop()
            frame.write(offset, value.to_bytes(32, "big"), labels)
        elif name == "MSTORE8":
            offset = frame.pop_value()
            value, labels = frame.pop()
            frame.write(offset, bytes([value & 0xFF]), labels)
        elif name == "SLOAD":
            slot = frame.pop_value()
            value = state.sload(frame.address, slot)
            self.trace.storage_reads.append(
                StorageAccess(instruction.pc, slot, value, frame.depth, self.next_seq())
            )
            frame.push(value, frozenset({STORAGE}))
        elif name == "SSTORE":
            slot = frame.pop_value()
            value = frame.pop_value()
            state.sstore(frame.address, slot, value)
            self.trace.storage_writes.append(
                StorageAccess(instruction.pc, slot, value, frame.depth, self.next_seq())
            )
        elif name.startswith("LOG"):
            for _ in range(info(name).pops):
                frame.pop()
        else:
            raise _Fault(ExecStatus.INVALID)

    def _send(self, frame: _Frame, pc: int, recipient: int, value: int) -> bool:
        if not self.state.transfer(frame.address, recipient, value):
            return False
        if value > 0:
            self.trace.transfers.append(
                Transfer(pc, recipient, value, frame.depth, self.next_seq())
            )
        return True

    def _call(self, frame: _Frame, instruction: Instruction) -> None:
        kind = instruction.opcode
        gas = frame.pop_value()
        address, address_labels = frame.pop()
        address &= ADDRESS_MASK
        value = frame.pop_value() if kind == "CALL" else 0
        args_offset = frame.pop_value()
        args_size = frame.pop_value()
        return_offset = frame.pop_value()
        return_size = frame.pop_value()

        frame.expand(args_offset, args_size)
        args_tainted = CALLDATA in frame.labels(args_offset, args_size)
        success = self._send(frame, instruction.pc, address, value)
        reenter = (
            success
            and kind == "CALL"
            and self.policy == ReentryPolicy.ONCE
            and address in self.state.harnesses
            and not self.reentered
        )
        self.trace.calls.append(
            CallRecord(
                pc=instruction.pc,
                kind=kind,
                target=address,
                target_class=target_class(address_labels),
                value=value,
                gas=gas,
                success=success,
                reentered=reenter,
                depth=frame.depth,
                args_tainted=args_tainted,
                seq=self.next_seq(),
            )
        )

        if reenter:
            self.reentered = True
            snapshot = self.state.clone()
            recorded = self._record_lengths()
            inner = _Frame(
                address=frame.address,
                caller=address,
                calldata=self.trace.tx.calldata,
                value=0,
                depth=frame.depth + 1,
            )
            status, _ = self.run(inner)
            logger.debug("Re-entry at pc %d ended with %s", instruction.pc, status.value)
            if not status.succeeded:
                self._restore(snapshot, recorded)
            if status == ExecStatus.OUT_OF_STEPS:
                raise _Fault(status)

        frame.expand(return_offset, return_size)
        frame.write(return_offset, bytes(return_size), NO_LABELS)
        frame.push(int(success), frozenset({ENVIRONMENT}))

    def _record_lengths(self) -> Tuple[int, int, int, int]:
        trace = self.trace
        return (
            len(trace.calls),
            len(trace.transfers),
            len(trace.selfdestructs),
            len(trace.storage_writes),
        )

    def _restore(self, snapshot: WorldState, recorded: Tuple[int, int, int, int]) -> None:
        self.state.storage = snapshot.storage
        self.state.balances = snapshot.balances
        self.state.destroyed = snapshot.destroyed
        # Effects of the failed frame are undone, so are their records.
        calls, transfers, selfdestructs, writes = recorded
        del self.trace.calls[calls:]
        del self.trace.transfers[transfers:]
        del self.trace.selfdestructs[selfdestructs:]
        del self.trace.storage_writes[writes:]

    def _selfdestruct(self, frame: _Frame, instruction: Instruction) -> None:
        beneficiary = frame.pop_value() & ADDRESS_MASK
        value = self.state.balance(frame.address)
        self.state.transfer(frame.address, beneficiary, value)
        self.state.destroyed.add(frame.address)
        self.trace.selfdestructs.append(
            SelfDestructRecord(
                instruction.pc, beneficiary, value, frame.depth, self.next_seq()
            )
        )


def execute(
    state: WorldState,
    contract: int,
    tx: Transaction,
    reentry_policy: ReentryPolicy = ReentryPolicy.NONE,
    max_steps: int = 100_000,
) -> Tuple[ExecutionTrace, WorldState]:
    """
    Execute one transaction against a deployed contract.

    The input state is never mutated. Faults and reverts do not raise: they
    set ``trace.reverted`` and return the input state, while the trace keeps
    everything that happened before the fault.

    Parameters
    ----------
    state: WorldState
    contract: int
        Address of the deployed contract.
    tx: Transaction
    reentry_policy: ReentryPolicy
        ``ONCE`` lets a value-bearing CALL to an attacker harness re-enter the
        contract a single time with the same calldata.
    max_steps: int
        Instruction budget for the whole transaction, re-entry included.

    Returns
    -------
    trace: ExecutionTrace
    state: WorldState
    """
    if contract not in state.code:
        raise ValueError(f"No contract deployed at {contract:#x}")
    if contract in state.destroyed:
        raise ValueError(f"Contract at {contract:#x} has self-destructed")

    working = state.clone()
    env = tx.block_env_override or state.block_env
    trace = ExecutionTrace(tx=tx)
    interpreter = _Interpreter(working, env, trace, reentry_policy, max_steps)

    if tx.value and not tx.payable:
        status, data = ExecStatus.NON_PAYABLE, b""
    elif not working.transfer(tx.sender, contract, tx.value):
        status, data = ExecStatus.INSUFFICIENT_FUNDS, b""
    else:
        frame = _Frame(contract, tx.sender, tx.calldata, tx.value, 0)
        status, data = interpreter.run(frame)

    trace.status = status
    trace.steps = interpreter.steps
    trace.return_data = data
    trace.reverted = not status.succeeded
    result = state if trace.reverted else working
    if not trace.reverted:
        trace.outgoing_value = sum(t.value for t in trace.transfers)
    touched = trace.slots_read | trace.slots_written
    trace.final_storage = {slot: result.sload(contract, slot) for slot in sorted(touched)}
    return trace, result
