"""
Pattern matching of hazardous behaviour over the CFG.

Matches are deliberately over-approximate: the fuzzing campaign decides
which of them are real.
"""
import logging
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Set, Tuple

import networkx as nx

from sdfuzz.cfg import Cfg
from sdfuzz.taint import (
    BLOCKDATA,
    CALLDATA,
    CALLER,
    CALLER_EQ,
    CALLER_INDEX,
    CALLVALUE,
    TaintFacts,
    analyze_taint,
)

logger = logging.getLogger(__name__)

STIPEND = 2300


class BugClass(str, Enum):
    ETHER_LEAK = "EtherLeak"
    BLOCK_DEPENDENCY = "BlockDependency"
    REENTRANCY = "Reentrancy"
    CONTROLLED_DELEGATECALL = "ControlledDelegatecall"
    DANGEROUS_DELEGATECALL = "DangerousDelegatecall"
    SUICIDAL = "Suicidal"
    LOCK_ETHER = "LockEther"

    @property
    def rank(self) -> int:
        return list(BugClass).index(self)


class CodeTarget(NamedTuple):
    block_id: int
    bug_class: BugClass
    anchor_pc: int
    evidence: Tuple[Tuple[int, str], ...]
    whole_contract: bool = False

    def to_dict(self) -> Dict:
        return {
            "block_id": self.block_id,
            "bug_class": self.bug_class.value,
            "anchor_pc": self.anchor_pc,
            "evidence": [[pc, role] for pc, role in self.evidence],
            "whole_contract": self.whole_contract,
        }


class _Site(NamedTuple):
    pc: int
    block_id: int
    opcode: str


class _Matcher:
    def __init__(self, cfg: Cfg, facts: TaintFacts):
        self.cfg = cfg
        self.facts = facts
        self.sites: List[_Site] = [
            _Site(instruction.pc, block.id, instruction.opcode)
            for block in cfg
            if not block.dead and block.id in facts.visited
            for instruction in block.instructions
        ]
        self.idom = nx.immediate_dominators(cfg.graph, cfg.entry)

    def of(self, *opcodes: str) -> List[_Site]:
        return [site for site in self.sites if site.opcode in opcodes]

    def dominators(self, block_id: int) -> List[int]:
        """Strict dominators of a block, nearest first."""
        found = []
        while block_id in self.idom and self.idom[block_id] != block_id:
            block_id = self.idom[block_id]
            found.append(block_id)
        return found

    def guarded_by(self, block_id: int, label: str) -> bool:
        for dominator in self.dominators(block_id):
            block = self.cfg[dominator]
            if block.ends_in_jumpi:
                condition = self.facts.operand(block.terminator.pc, 1)
                if label in condition.labels:
                    return True
        return False

    def carries_value(self, site: _Site) -> bool:
        return self.facts.operand(site.pc, 2).const != 0

    def before(self, site: _Site, other: _Site, ancestors: Set[int]) -> bool:
        return other.block_id in ancestors or (
            other.block_id == site.block_id and other.pc < site.pc
        )

    def after(self, site: _Site, other: _Site, descendants: Set[int]) -> bool:
        return other.block_id in descendants or (
            other.block_id == site.block_id and other.pc > site.pc
        )

    def reentrancy(self) -> List[CodeTarget]:
        found = []
        for call in self.of("CALL"):
            gas = self.facts.operand(call.pc, 0)
            destination = self.facts.operand(call.pc, 1)
            if gas.const is not None and gas.const <= STIPEND:
                continue
            if destination.const is not None and CALLDATA not in destination.labels:
                continue

            ancestors = nx.ancestors(self.cfg.graph, call.block_id)
            descendants = nx.descendants(self.cfg.graph, call.block_id)
            reads = [
                site
                for site in self.of("SLOAD")
                if self.before(call, site, ancestors)
                and self.facts.operand(site.pc, 0).expr is not None
            ]
            writes = [
                site
                for site in self.of("SSTORE")
                if self.after(call, site, descendants)
                and self.facts.operand(site.pc, 0).expr is not None
            ]
            match = self._same_slot(reads, writes)
            if match is not None:
                read, write = match
                evidence = ((read.pc, "read"), (call.pc, "call"), (write.pc, "write"))
                found.append(
                    CodeTarget(call.block_id, BugClass.REENTRANCY, call.pc, evidence)
                )
        return found

    def _same_slot(self, reads, writes) -> Optional[Tuple[_Site, _Site]]:
        for read in sorted(reads):
            slot = self.facts.operand(read.pc, 0).expr
            for write in sorted(writes):
                if self.facts.operand(write.pc, 0).expr == slot:
                    return read, write
        return None

    def delegatecalls(self) -> List[CodeTarget]:
        found = []
        for site in self.of("DELEGATECALL"):
            if CALLDATA in self.facts.operand(site.pc, 1).labels:
                found.append(
                    CodeTarget(
                        site.block_id,
                        BugClass.CONTROLLED_DELEGATECALL,
                        site.pc,
                        ((site.pc, "delegatecall"),),
                    )
                )
            if CALLDATA in self.facts.regions.get(site.pc, frozenset()):
                found.append(
                    CodeTarget(
                        site.block_id,
                        BugClass.DANGEROUS_DELEGATECALL,
                        site.pc,
                        ((site.pc, "delegatecall"),),
                    )
                )
        return found

    def block_dependency(self) -> List[CodeTarget]:
        transfers = [
            site
            for site in self.of("CALL", "SELFDESTRUCT")
            if site.opcode == "SELFDESTRUCT" or self.carries_value(site)
        ]
        guards: Dict[_Site, List[int]] = {}
        for branch in self.of("JUMPI"):
            if BLOCKDATA not in self.facts.operand(branch.pc, 1).labels:
                continue
            reachable = nx.descendants(self.cfg.graph, branch.block_id)
            for transfer in transfers:
                if transfer.block_id in reachable:
                    guards.setdefault(transfer, []).append(branch.pc)

        return [
            CodeTarget(
                transfer.block_id,
                BugClass.BLOCK_DEPENDENCY,
                transfer.pc,
                tuple((pc, "guard") for pc in sorted(pcs)) + ((transfer.pc, "transfer"),),
            )
            for transfer, pcs in guards.items()
        ]

    def suicidal(self) -> List[CodeTarget]:
        return [
            CodeTarget(
                site.block_id, BugClass.SUICIDAL, site.pc, ((site.pc, "selfdestruct"),)
            )
            for site in self.of("SELFDESTRUCT")
            if not self.guarded_by(site.block_id, CALLER_EQ)
        ]

    def ether_leak(self) -> List[CodeTarget]:
        found = []
        for site in self.of("CALL"):
            if not self.carries_value(site):
                continue
            beneficiary = self.facts.operand(site.pc, 1)
            value = self.facts.operand(site.pc, 2)
            if not beneficiary.labels & {CALLER, CALLDATA}:
                continue
            if CALLVALUE in value.labels or self.guarded_by(site.block_id, CALLER_INDEX):
                continue
            found.append(
                CodeTarget(site.block_id, BugClass.ETHER_LEAK, site.pc, ((site.pc, "call"),))
            )
        return found

    def lock_ether(self, payable: bool) -> List[CodeTarget]:
        if not payable:
            return []
        for block in self.cfg:
            for instruction in block.instructions:
                if instruction.opcode == "SELFDESTRUCT":
                    return []
                if instruction.opcode == "CALL":
                    if self.facts.operand(instruction.pc, 2).const != 0:
                        return []
        entry = self.cfg[self.cfg.entry]
        return [
            CodeTarget(entry.id, BugClass.LOCK_ETHER, entry.start_pc, (), whole_contract=True)
        ]


def find_code_targets(cfg: Cfg, abi, facts: Optional[TaintFacts] = None) -> List[CodeTarget]:
    """
    Match the hazardous-behaviour patterns over a pre-unroll CFG.

    Parameters
    ----------
    cfg: Cfg
    abi: AbiDescriptor
        Only the payable flags of its functions are used.
    facts: TaintFacts, optional
        Computed with ``analyze_taint`` when not given.

    Returns
    -------
    targets: list of CodeTarget
        Ordered by bug class, then anchor pc.
    """
    if cfg.unrolled:
        raise ValueError("Code targets are matched on the CFG before unrolling")
    if facts is None:
        facts = analyze_taint(cfg)

    matcher = _Matcher(cfg, facts)
    payable = any(function.payable for function in abi.functions)
    found = (
        matcher.ether_leak()
        + matcher.block_dependency()
        + matcher.reentrancy()
        + matcher.delegatecalls()
        + matcher.suicidal()
        + matcher.lock_ether(payable)
    )

    unique = {}
    for target in found:
        unique.setdefault((target.bug_class, target.anchor_pc), target)
    targets = [unique[key] for key in sorted(unique, key=lambda k: (k[0].rank, k[1]))]
    logger.debug("Matched %d code targets", len(targets))
    return targets
