import pytest

from sdfuzz.assembler import assemble
from sdfuzz.bytecode import disassemble, read_bytecode
from sdfuzz.cfg import (
    HALT,
    REVERT,
    UNKNOWN,
    EdgeKind,
    UnrollBudgetExceeded,
    back_edges,
    build_cfg,
    unroll_loops,
)
from sdfuzz.corpus import fixture

LOOP = """
PUSH 0
loop: JUMPDEST
PUSH 1 / ADD
DUP1 / PUSH 10 / GT / PUSH @loop / JUMPI
STOP
"""


def cfg_of(source):
    return build_cfg(disassemble(assemble(source)))


def test_branch_guard_blocks():
    easm, _ = fixture("branch_guard")
    cfg = build_cfg(disassemble(read_bytecode(easm)))
    assert [(b.id, b.start_pc, b.end_pc) for b in cfg] == [(0, 0, 10), (1, 11, 11), (2, 12, 14)]
    assert cfg[0].successors == [(2, EdgeKind.BRANCH_TRUE), (1, EdgeKind.BRANCH_FALSE)]
    assert cfg[1].successors == []
    assert cfg.branch_edge_count == 2
    assert cfg.block_of(12) == 2
    assert cfg.block_of(13) == 2
    assert cfg.is_acyclic()
    assert back_edges(cfg) == set()
    assert unroll_loops(cfg) is cfg


def test_resolved_dynamic_jump():
    cfg = cfg_of("PUSH @target / PUSH 1 / SWAP1 / JUMP / target: JUMPDEST / STOP")
    assert cfg[0].successors == [(1, EdgeKind.JUMP)]
    assert cfg.sink(UNKNOWN) is None


def test_sinks():
    cfg = cfg_of("PUSH 0 / CALLDATALOAD / JUMP")
    assert cfg.sink(UNKNOWN) == 1
    assert cfg[0].successors == [(1, EdgeKind.JUMP)]

    cfg = cfg_of("PUSH 5 / JUMP / STOP")
    assert cfg.sink(REVERT) == 2
    assert cfg[0].successors == [(2, EdgeKind.JUMP)]
    assert cfg[1].dead
    assert not cfg[0].dead

    cfg = cfg_of("x: JUMPDEST / PUSH 0 / PUSH @x / JUMPI")
    assert cfg.sink(HALT) == 1
    assert cfg[0].successors == [(0, EdgeKind.BRANCH_TRUE), (1, EdgeKind.BRANCH_FALSE)]


def test_back_edges():
    cfg = cfg_of(LOOP)
    assert back_edges(cfg) == {(1, 1)}
    assert not cfg.is_acyclic()


def test_unroll_loops():
    cfg = cfg_of(LOOP)
    unrolled = unroll_loops(cfg, bound=3)
    assert unrolled.unrolled
    assert unrolled.is_acyclic()
    assert len(unrolled) == 7
    assert unrolled.copies_of(1) == [1, 2, 4]
    assert unrolled.copies_of(2) == [3, 5, 6]
    assert unrolled.provenance[4] == (1, 2)
    # The last iteration keeps only its exit.
    assert unrolled[4].successors == [(6, EdgeKind.BRANCH_FALSE)]
    # Program counters map to the first iteration.
    assert unrolled.block_of(2) == 1


def test_unroll_bound_one():
    unrolled = unroll_loops(cfg_of(LOOP), bound=1)
    assert len(unrolled) == 3
    assert unrolled.is_acyclic()


def test_unroll_errors():
    cfg = cfg_of(LOOP)
    with pytest.raises(ValueError, match="at least 1"):
        unroll_loops(cfg, bound=0)
    with pytest.raises(UnrollBudgetExceeded):
        unroll_loops(cfg, bound=20, block_budget=3)


def test_empty_code():
    with pytest.raises(ValueError):
        build_cfg([])
