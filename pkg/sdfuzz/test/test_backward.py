import itertools

import numpy as np
import pytest

from sdfuzz.abi import read_abi
from sdfuzz.analyze import analyze
from sdfuzz.assembler import assemble
from sdfuzz.backward import (
    StateAnalyzer,
    backward_branch_constraints,
    derive_state_target,
    find_paths,
    reconstruct_condition,
    sample_assignment,
)
from sdfuzz.bytecode import disassemble, read_bytecode
from sdfuzz.cfg import build_cfg, unroll_loops
from sdfuzz.constraints import TRUE, Compare, IntervalSet
from sdfuzz.corpus import fixture
from sdfuzz.generate import guarded_contract, straight_line
from sdfuzz.opcodes import SIGN_BIT, WORD_MAX
from sdfuzz.symbolic import BinOp, Const, StorageSlot, Unknown, forward_evaluate
from sdfuzz.targets import BugClass, CodeTarget
from sdfuzz.vm import ATTACKER, Transaction, WorldState, deploy, execute

TWO_PATHS = """
PUSH 0 / SLOAD / PUSH 5 / EQ / PUSH @target / JUMPI
PUSH 1 / SLOAD / PUSH 7 / EQ / PUSH @target / JUMPI
STOP
target: JUMPDEST / CALLER / SELFDESTRUCT
"""


def diamonds(k):
    lines = []
    for i in range(k):
        lines.append(f"PUSH {32 * i} / CALLDATALOAD / PUSH @join{i} / JUMPI")
        lines.append("PUSH 1 / POP")
        lines.append(f"join{i}: JUMPDEST")
    lines.append("CALLER / SELFDESTRUCT")
    return "\n".join(lines)


def cfg_of(source):
    return unroll_loops(build_cfg(disassemble(assemble(source))))


def target_at(cfg, pc):
    return CodeTarget(cfg.block_of(pc), BugClass.SUICIDAL, pc, ())


def selfdestruct_pc(bytecode):
    return next(i.pc for i in disassemble(bytecode) if i.opcode == "SELFDESTRUCT")


def reaches(bytecode, storage, block_id):
    state = WorldState()
    contract = deploy(state, bytecode)
    for slot, value in storage.items():
        state.sstore(contract, slot, value)
    trace, _ = execute(state, contract, Transaction(ATTACKER, 1))
    return block_id in trace.executed_blocks


def test_storage_guard_fixture():
    easm, abi = fixture("branch_guard")
    bytecode = read_bytecode(easm)
    static = analyze(bytecode, read_abi(abi))
    (state_target,) = static.state_targets
    assert state_target.satisfiable
    assert state_target.ranges == {0x0D: IntervalSet([(0, 4)])}
    assert state_target.path_count == 1
    assert state_target.to_dict()["ranges"] == {"0xd": [[0, 4]]}

    block_id = state_target.target.block_id
    for value in range(11):
        expected = state_target.ranges[0x0D].contains(value)
        assert reaches(bytecode, {0x0D: value}, block_id) == expected


def test_motivating_bank():
    easm, abi = fixture("fancybank")
    static = analyze(read_bytecode(easm), read_abi(abi))
    (state_target,) = [
        st for st in static.state_targets if st.target.bug_class == BugClass.REENTRANCY
    ]
    assert state_target.satisfiable
    assert state_target.ranges == {1: IntervalSet([(31, 39)]), 2: IntervalSet.point(1)}
    assert not state_target.truncated


def test_two_paths():
    bytecode = assemble(TWO_PATHS)
    cfg = cfg_of(TWO_PATHS)
    target = target_at(cfg, selfdestruct_pc(bytecode))
    enumeration = find_paths(cfg, target.block_id)
    assert sorted(p.blocks for p in enumeration.paths) == [(0, 1, 3), (0, 3)]
    assert not enumeration.truncated

    state_target = derive_state_target(cfg, target)
    assert state_target.satisfiable
    assert state_target.path_count == 2
    # The union over both paths leaves no slot constrained.
    assert state_target.ranges == {}
    assert set(map(frozenset, (box.items() for box in state_target.alternatives))) == {
        frozenset({0: IntervalSet.point(5)}.items()),
        frozenset(
            {0: IntervalSet([(0, 4), (6, WORD_MAX)]), 1: IntervalSet.point(7)}.items()
        ),
    }


def test_branch_constraint_of_a_path():
    bytecode = assemble(TWO_PATHS)
    cfg = cfg_of(TWO_PATHS)
    target = target_at(cfg, selfdestruct_pc(bytecode))
    path = next(p for p in find_paths(cfg, target.block_id).paths if len(p.blocks) == 3)
    assert path.branch_points == ((0, False), (1, True))
    slot = StorageSlot(Const(0))
    assert backward_branch_constraints(cfg, path, path.branch_points[0]) == Compare(
        "ne", Const(5), slot
    )


@pytest.mark.parametrize("k", [1, 3, 5])
def test_diamond_path_count(k):
    source = diamonds(k)
    cfg = cfg_of(source)
    target = target_at(cfg, selfdestruct_pc(assemble(source)))
    enumeration = find_paths(cfg, target.block_id)
    assert len(enumeration.paths) == 2**k
    # Both edges of every diamond are free.
    state_target = StateAnalyzer(cfg).derive(target)
    assert state_target.satisfiable
    assert state_target.ranges == {}


def test_path_limit():
    source = diamonds(3)
    cfg = cfg_of(source)
    target = target_at(cfg, selfdestruct_pc(assemble(source)))
    enumeration = find_paths(cfg, target.block_id, limit=4)
    assert enumeration.truncated
    assert len(enumeration.paths) == 4

    state_target = StateAnalyzer(cfg, path_limit=4).derive(target)
    assert state_target.truncated
    assert state_target.diagnostic == "path enumeration stopped at 4 paths"


def test_unreachable_target():
    source = "STOP / dead: JUMPDEST / CALLER / SELFDESTRUCT"
    bytecode = assemble(source)
    cfg = cfg_of(source)
    state_target = derive_state_target(cfg, target_at(cfg, selfdestruct_pc(bytecode)))
    assert not state_target.satisfiable
    assert state_target.diagnostic == "target block is unreachable"
    assert sample_assignment(state_target, np.random.default_rng(0)) == {}


def test_paths_need_acyclic_cfg():
    cfg = build_cfg(disassemble(assemble("x: JUMPDEST / PUSH 1 / PUSH @x / JUMPI / STOP")))
    with pytest.raises(ValueError, match="acyclic"):
        find_paths(cfg, 0)


def test_reconstruct_needs_jumpi():
    with pytest.raises(ValueError, match="JUMPI"):
        reconstruct_condition(disassemble(assemble("PUSH 1 / POP")))


def test_reconstruct_through_memory_and_hash():
    source = """
    CALLER / PUSH 0 / MSTORE / PUSH 3 / PUSH 32 / MSTORE
    PUSH 64 / PUSH 0 / SHA3 / SLOAD
    PUSH 4 / CALLDATALOAD / GT
    PUSH @end / JUMPI
    end: JUMPDEST
    """
    instructions = disassemble(assemble(source))
    prefix = instructions[: next(i for i, x in enumerate(instructions) if x.opcode == "JUMPI") + 1]
    condition = reconstruct_condition(prefix)
    assert condition == forward_evaluate(prefix).condition
    assert isinstance(condition, BinOp)
    assert condition.op == "GT"
    assert not condition.contains(Unknown)


def test_unmodelled_values_are_unknown():
    source = "PUSH 0 / PUSH 0 / PUSH 0 / PUSH 0 / PUSH 0 / CALLER / GAS / CALL / PUSH @end / JUMPI / end: JUMPDEST"
    instructions = disassemble(assemble(source))
    condition = reconstruct_condition(instructions[:-1])
    assert isinstance(condition, Unknown)


def test_forward_backward_agreement():
    rng = np.random.default_rng(20)
    for _ in range(100):
        instructions = disassemble(assemble(straight_line(rng)))
        end = max(i for i, x in enumerate(instructions) if x.opcode == "JUMPI")
        prefix = instructions[: end + 1]
        backward = reconstruct_condition(prefix)
        forward = forward_evaluate(prefix).condition
        assert backward == forward
        assert not backward.contains(Unknown)


def guard_candidates(contract):
    values = {0, SIGN_BIT - 1, SIGN_BIT, WORD_MAX}
    for guard in contract.guards:
        values |= {guard.constant - 1, guard.constant, guard.constant + 1}
    return sorted(v for v in values if v >= 0)


def test_solver_soundness():
    for seed in range(200):
        rng = np.random.default_rng(seed)
        contract = guarded_contract(rng)
        cfg = cfg_of(contract.source)
        target = target_at(cfg, contract.target_pc)
        state_target = StateAnalyzer(cfg).derive(target)

        if state_target.satisfiable:
            assignment = sample_assignment(state_target, rng)
            assert contract.satisfied_by(assignment), contract.source
            assert reaches(contract.bytecode, assignment, target.block_id), contract.source
        else:
            # No assignment built from the guard boundaries satisfies every guard.
            slots = sorted({g.slot for g in contract.guards})
            candidates = guard_candidates(contract)
            for values in itertools.product(candidates, repeat=len(slots)):
                assert not contract.satisfied_by(dict(zip(slots, values))), contract.source


def test_state_target_of_satisfiable_guard_is_exact():
    rng = np.random.default_rng(7)
    for _ in range(20):
        contract = guarded_contract(rng, max_guards=1)
        (guard,) = contract.guards
        cfg = cfg_of(contract.source)
        state_target = derive_state_target(cfg, target_at(cfg, contract.target_pc))
        candidates = guard_candidates(contract)
        if not state_target.satisfiable:
            assert not any(guard.satisfied(value) for value in candidates)
            continue
        intervals = state_target.ranges.get(guard.slot, IntervalSet.full())
        for value in candidates:
            assert intervals.contains(value) == guard.satisfied(value)


def test_both_edges_to_the_same_block():
    source = "PUSH 0 / CALLDATALOAD / PUSH @next / JUMPI / next: JUMPDEST / CALLER / SELFDESTRUCT"
    cfg = cfg_of(source)
    (path,) = find_paths(cfg, cfg.block_of(selfdestruct_pc(assemble(source)))).paths
    assert path.branch_points == ((0, None),)
    assert backward_branch_constraints(cfg, path, path.branch_points[0]) == TRUE
