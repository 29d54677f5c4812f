"""
Trace predicates deciding whether a vulnerability was triggered.

Oracles never touch the state they are given: differential re-executions
run through ``execute``, which works on a clone.
"""
import dataclasses
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Set, Tuple

from sdfuzz.targets import BugClass
from sdfuzz.vm import (
    DEPLOYER,
    ExecutionTrace,
    ReentryPolicy,
    WorldState,
    execute,
)

logger = logging.getLogger(__name__)

# Timestamp in seconds and block number offsets used for re-execution.
PERTURBATIONS = ((3600, 0), (-3600, 0), (0, 100), (0, -100))


class Finding(NamedTuple):
    bug_class: BugClass
    anchor_pc: int
    description: str
    tx_index: int = -1
    seed: Any = None

    @property
    def key(self) -> Tuple[BugClass, int]:
        return self.bug_class, self.anchor_pc


class OracleContext(NamedTuple):
    contract: int
    deployer: int = DEPLOYER
    reentry_policy: ReentryPolicy = ReentryPolicy.ONCE
    max_steps: int = 100_000


@dataclass
class SeedLedger:
    """Value moved between the contract and each account within one seed."""

    deposits: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    received: Dict[int, int] = field(default_factory=lambda: defaultdict(int))

    def record(self, trace: ExecutionTrace) -> None:
        if trace.reverted:
            return
        self.deposits[trace.tx.sender] += trace.tx.value
        for transfer in trace.transfers:
            self.received[transfer.recipient] += transfer.value
        for record in trace.selfdestructs:
            self.received[record.beneficiary] += record.value


def _outflows(trace: ExecutionTrace) -> List[int]:
    if trace.reverted:
        return []
    pcs = [t.pc for t in trace.transfers]
    pcs += [s.pc for s in trace.selfdestructs if s.value > 0]
    return pcs


def check_reentrancy(trace: ExecutionTrace) -> List[Finding]:
    if trace.reverted:
        return []
    found = []
    for outer in trace.calls:
        if not (outer.depth == 0 and outer.value > 0 and outer.success and outer.reentered):
            continue
        inner = [
            c
            for c in trace.calls
            if c.depth == 1 and c.value > 0 and c.success and c.seq > outer.seq
        ]
        if not inner:
            continue
        read_before = {a.slot for a in trace.storage_reads if a.depth == 0 and a.seq < outer.seq}
        written_after = {
            a.slot for a in trace.storage_writes if a.depth == 0 and a.seq > outer.seq
        }
        stale = read_before & written_after
        if stale:
            found.append(
                Finding(
                    BugClass.REENTRANCY,
                    outer.pc,
                    f"Re-entered call at pc {outer.pc} sent value twice; "
                    f"slot(s) {', '.join(hex(s) for s in sorted(stale))} updated afterwards",
                )
            )
    return found


def check_suicidal(
    trace: ExecutionTrace, after: WorldState, context: OracleContext
) -> List[Finding]:
    if trace.reverted or trace.tx.sender == context.deployer:
        return []
    if context.contract not in after.destroyed:
        return []
    return [
        Finding(
            BugClass.SUICIDAL,
            record.pc,
            f"SELFDESTRUCT at pc {record.pc} executed by {trace.tx.sender:#x}",
        )
        for record in trace.selfdestructs
    ]


def check_ether_leak(
    trace: ExecutionTrace, ledger: SeedLedger, context: OracleContext
) -> List[Finding]:
    """Call after ``ledger.record(trace)``."""
    sender = trace.tx.sender
    if trace.reverted or sender == context.deployer:
        return []
    pcs = [t.pc for t in trace.transfers if t.recipient == sender]
    pcs += [s.pc for s in trace.selfdestructs if s.beneficiary == sender and s.value]
    if not pcs or ledger.received[sender] <= ledger.deposits[sender]:
        return []
    return [
        Finding(
            BugClass.ETHER_LEAK,
            min(pcs),
            f"{sender:#x} received {ledger.received[sender]} wei after depositing "
            f"{ledger.deposits[sender]}",
        )
    ]


def check_delegatecall(trace: ExecutionTrace) -> List[Finding]:
    if trace.reverted:
        return []
    found = []
    for call in trace.calls:
        if call.kind != "DELEGATECALL":
            continue
        if call.target_class == "calldata-derived":
            found.append(
                Finding(
                    BugClass.CONTROLLED_DELEGATECALL,
                    call.pc,
                    f"DELEGATECALL at pc {call.pc} to a calldata-derived address",
                )
            )
        if call.args_tainted:
            found.append(
                Finding(
                    BugClass.DANGEROUS_DELEGATECALL,
                    call.pc,
                    f"DELEGATECALL at pc {call.pc} with calldata-derived arguments",
                )
            )
    return found


def check_block_dependency(
    trace: ExecutionTrace, before: WorldState, context: OracleContext
) -> List[Finding]:
    if not trace.reads_block_data:
        return []
    original = set(_outflows(trace))
    env = trace.tx.block_env_override or before.block_env
    for timestamp, number in PERTURBATIONS:
        tx = dataclasses.replace(
            trace.tx, block_env_override=env.perturbed(timestamp, number)
        )
        other, _ = execute(
            before, context.contract, tx, context.reentry_policy, context.max_steps
        )
        changed = original ^ set(_outflows(other))
        if changed and other.branch_edges != trace.branch_edges:
            pc = min(changed)
            logger.debug("Perturbed block data changed transfers at %s", sorted(changed))
            return [
                Finding(
                    BugClass.BLOCK_DEPENDENCY,
                    pc,
                    f"Transfer at pc {pc} depends on block data "
                    f"(timestamp {timestamp:+d}, number {number:+d})",
                )
            ]
    return []


def check_trace(
    trace: ExecutionTrace,
    before: WorldState,
    after: WorldState,
    context: OracleContext,
    ledger: Optional[SeedLedger] = None,
) -> List[Finding]:
    """
    Run every per-transaction oracle on one trace.

    Parameters
    ----------
    trace: ExecutionTrace
    before: WorldState
        State the transaction started from; used for re-execution.
    after: WorldState
        State after the transaction.
    context: OracleContext
    ledger: SeedLedger, optional
        Value accounting of the seed so far. The trace is recorded into it.

    Returns
    -------
    findings: list of Finding
    """
    if ledger is None:
        ledger = SeedLedger()
    ledger.record(trace)

    findings = (
        check_reentrancy(trace)
        + check_suicidal(trace, after, context)
        + check_ether_leak(trace, ledger, context)
        + check_delegatecall(trace)
        + check_block_dependency(trace, before, context)
    )
    return findings


@dataclass
class ValueFlow:
    """Whether funds ever entered, and ever left, the contract in a campaign."""

    received: bool = False
    sent: bool = False
    first_deposit: Optional[Tuple[Any, int]] = None

    def observe(self, trace: ExecutionTrace, seed: Any = None, tx_index: int = -1) -> None:
        if trace.reverted:
            return
        if trace.tx.value > 0:
            self.received = True
            if self.first_deposit is None:
                self.first_deposit = (seed, tx_index)
        if _outflows(trace):
            self.sent = True


def check_campaign_end(flow: ValueFlow) -> Optional[Finding]:
    if not flow.received or flow.sent:
        return None
    seed, tx_index = flow.first_deposit
    return Finding(
        BugClass.LOCK_ETHER,
        0,
        "The contract received value and never sent any out",
        tx_index,
        seed,
    )


def replay_keys(traces: List[ExecutionTrace], findings: List[Finding]) -> Set[Tuple[BugClass, int]]:
    keys = {finding.key for finding in findings}
    flow = ValueFlow()
    for trace in traces:
        flow.observe(trace)
    end = check_campaign_end(flow)
    if end is not None:
        keys.add(end.key)
    return keys
