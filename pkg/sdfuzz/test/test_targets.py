import pytest

from sdfuzz.abi import parse_abi, read_abi
from sdfuzz.analyze import analyze
from sdfuzz.assembler import assemble
from sdfuzz.bytecode import disassemble, read_bytecode
from sdfuzz.cfg import build_cfg, unroll_loops
from sdfuzz.corpus import fixture
from sdfuzz.targets import BugClass, find_code_targets

VULNERABLE = [
    ("reentrancy", BugClass.REENTRANCY),
    ("ether_leak", BugClass.ETHER_LEAK),
    ("suicidal", BugClass.SUICIDAL),
    ("controlled_delegatecall", BugClass.CONTROLLED_DELEGATECALL),
    ("dangerous_delegatecall", BugClass.DANGEROUS_DELEGATECALL),
    ("block_dependency", BugClass.BLOCK_DEPENDENCY),
    ("lock_ether", BugClass.LOCK_ETHER),
]

POKE = {"functions": [{"name": "poke", "selector": "0x00000001", "params": []}]}


def static_of(name):
    easm, abi = fixture(name)
    return analyze(read_bytecode(easm), read_abi(abi))


def of_class(targets, bug_class):
    return [t for t in targets if t.bug_class == bug_class]


def test_fancybank_reentrancy():
    static = static_of("fancybank")
    found = of_class(static.code_targets, BugClass.REENTRANCY)
    assert len(found) == 1
    target = found[0]
    assert [role for _, role in target.evidence] == ["read", "call", "write"]
    read_pc, call_pc, write_pc = (pc for pc, _ in target.evidence)
    assert read_pc < call_pc < write_pc
    assert target.anchor_pc == call_pc
    assert static.cfg.block_of(call_pc) == target.block_id


def test_fancybank_safe_has_no_reentrancy():
    static = static_of("fancybank_safe")
    assert of_class(static.code_targets, BugClass.REENTRANCY) == []


@pytest.mark.parametrize("name, bug_class", VULNERABLE)
def test_vulnerable_fixtures(name, bug_class):
    assert of_class(static_of(name).code_targets, bug_class)


def test_lock_ether_is_whole_contract():
    static = static_of("lock_ether")
    (target,) = of_class(static.code_targets, BugClass.LOCK_ETHER)
    assert target.whole_contract
    assert target.block_id == static.cfg.entry
    assert target.evidence == ()


def test_lock_ether_needs_payable():
    bytecode = assemble("STOP")
    assert find_code_targets(build_cfg(disassemble(bytecode)), parse_abi(POKE)) == []


def test_guarded_selfdestruct():
    # Only the owner in slot 0 may destroy the contract.
    source = """
    PUSH 0 / SLOAD / CALLER / EQ / PUSH @kill / JUMPI
    STOP
    kill: JUMPDEST / CALLER / SELFDESTRUCT
    """
    cfg = build_cfg(disassemble(assemble(source)))
    assert find_code_targets(cfg, parse_abi(POKE)) == []

    unguarded = "PUSH 0 / SLOAD / PUSH @kill / JUMPI / STOP / kill: JUMPDEST / CALLER / SELFDESTRUCT"
    cfg = build_cfg(disassemble(assemble(unguarded)))
    (target,) = find_code_targets(cfg, parse_abi(POKE))
    assert target.bug_class == BugClass.SUICIDAL


def test_targets_are_ordered():
    for name, _ in VULNERABLE:
        targets = static_of(name).code_targets
        keys = [(t.bug_class.rank, t.anchor_pc) for t in targets]
        assert keys == sorted(keys)
        assert len(set(keys)) == len(keys)


def test_empty_contract():
    static = analyze(assemble("STOP"), parse_abi(POKE))
    assert static.code_targets == []
    assert static.state_targets == []
    assert static.distances is None
    content = static.to_dict()
    assert content["code_targets"] == []
    assert content["state_targets"] == []
    assert content["cfg"]["blocks"] == 1


def test_unrolled_cfg_is_rejected():
    source = "PUSH 0 / loop: JUMPDEST / PUSH 1 / ADD / DUP1 / PUSH @loop / JUMPI / STOP"
    cfg = unroll_loops(build_cfg(disassemble(assemble(source))), bound=2)
    with pytest.raises(ValueError, match="before unrolling"):
        find_code_targets(cfg, parse_abi(POKE))
