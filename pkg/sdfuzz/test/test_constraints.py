import numpy as np
import pytest

from sdfuzz.constraints import (
    FALSE,
    TRUE,
    And,
    Compare,
    IntervalSet,
    IsZero,
    NonZero,
    Or,
    branch_condition,
    conjoin,
    disjoin,
    is_partially_unknown,
    is_state_related,
    require,
    sample_box,
    serialize_box,
    solve,
)
from sdfuzz.opcodes import WORD_MAX
from sdfuzz.symbolic import Caller, Const, Unknown, binop, calldata, storage, unop

D = storage(Const(0x0D))
DUE = storage(Const(1))
UNLOCK = storage(Const(2))


def test_interval_set_normalises():
    values = IntervalSet([(10, 20), (0, 3), (4, 5), (19, 30), (50, 40)])
    assert values.to_list() == [[0, 5], [10, 30]]
    assert values.contains(12)
    assert not values.contains(7)
    assert IntervalSet([(-5, 2)]).to_list() == [[0, 2]]
    assert IntervalSet.full().is_full()
    assert IntervalSet().is_empty()


def test_interval_set_distance():
    values = IntervalSet([(31, 39)])
    assert values.distance(35) == 0
    assert values.distance(25) == 6
    assert values.distance(45) == 6
    with pytest.raises(ValueError):
        IntervalSet().distance(1)


def test_interval_set_shift_and_negate():
    assert IntervalSet([(0, 4)]).shift(-2).to_list() == [[0, 2], [WORD_MAX - 1, WORD_MAX]]
    assert IntervalSet([(0, 1)]).negate().to_list() == [[0, 0], [WORD_MAX, WORD_MAX]]


def test_interval_set_boundary_values_and_sample():
    values = IntervalSet([(31, 39), (100, 100)])
    assert values.boundary_values() == [31, 35, 39, 100]
    rng = np.random.default_rng(0)
    assert all(values.contains(values.sample(rng)) for _ in range(50))


def test_require_normalises():
    less = binop("GT", Const(5), D)
    assert require(less, True) == Compare("gt", Const(5), D)
    assert require(unop("ISZERO", less), True) == Compare("le", Const(5), D)
    assert require(Const(3), True) == TRUE
    assert require(Const(0), True) == FALSE
    assert require(D, True) == NonZero(D)
    assert require(D, False) == IsZero(D)


def test_require_boolean_and_or():
    a = binop("EQ", Const(1), UNLOCK)
    b = binop("GT", Const(30), DUE)
    both = binop("AND", a, b)
    assert require(both, True) == And((require(a, True), require(b, True)))
    assert require(both, False) == Or((require(a, False), require(b, False)))


def test_conjoin_disjoin():
    c = Compare("eq", D, Const(1))
    assert conjoin([]) == TRUE
    assert conjoin([TRUE, c]) == c
    assert conjoin([c, FALSE]) == FALSE
    assert disjoin([]) == FALSE
    assert disjoin([c, TRUE]) == TRUE
    assert disjoin([FALSE, c]) == c
    nested = conjoin([c, conjoin([c, Compare("lt", D, Const(3))])])
    assert isinstance(nested, And)
    assert len(nested.parts) == 3


def test_storage_less_than_five():
    # JUMPI taken when 5 > storage[0x0d].
    condition = binop("GT", Const(5), D)
    solution = solve(branch_condition(condition, True))
    assert solution.satisfiable
    assert solution.ranges == {0x0D: IntervalSet([(0, 4)])}

    solution = solve(branch_condition(condition, False))
    assert solution.ranges == {0x0D: IntervalSet([(5, WORD_MAX)])}


def test_open_range():
    constraint = conjoin(
        [
            Compare("gt", DUE, Const(30)),
            Compare("lt", DUE, Const(40)),
            Compare("eq", UNLOCK, Const(1)),
        ]
    )
    solution = solve(constraint)
    assert solution.satisfiable
    assert solution.ranges == {1: IntervalSet([(31, 39)]), 2: IntervalSet.point(1)}
    assert serialize_box(solution.ranges) == {"0x1": [[31, 39]], "0x2": [[1, 1]]}


def test_unsatisfiable():
    constraint = conjoin([Compare("eq", D, Const(3)), Compare("ne", D, Const(3))])
    solution = solve(constraint)
    assert not solution.satisfiable
    assert solution.ranges == {}
    assert not solve(FALSE).satisfiable


def test_affine_terms():
    # storage[1] + 10 < 15 over unsigned words wraps around.
    solution = solve(Compare("lt", binop("ADD", Const(10), DUE), Const(15)))
    assert solution.ranges == {
        1: IntervalSet([(0, 4), (WORD_MAX - 9, WORD_MAX)])
    }
    # 100 - storage[1] == 40
    solution = solve(Compare("eq", binop("SUB", Const(100), DUE), Const(40)))
    assert solution.ranges == {1: IntervalSet.point(60)}


def test_signed_comparison():
    solution = solve(Compare("slt", DUE, Const(0)))
    assert solution.ranges == {1: IntervalSet([(1 << 255, WORD_MAX)])}


def test_disjunction_over_approximates():
    constraint = disjoin(
        [
            Compare("eq", DUE, Const(5)),
            conjoin([Compare("ne", DUE, Const(5)), Compare("eq", UNLOCK, Const(7))]),
        ]
    )
    solution = solve(constraint)
    assert solution.satisfiable
    assert solution.ranges == {}

    constraint = disjoin([Compare("lt", DUE, Const(3)), Compare("eq", DUE, Const(9))])
    assert solve(constraint).ranges == {1: IntervalSet([(0, 2), (9, 9)])}


def test_unmodelled_atoms_are_unconstrained():
    constraint = conjoin(
        [
            Compare("gt", calldata(Const(4)), Const(3)),
            Compare("eq", storage(Caller()), Const(1)),
            Compare("lt", DUE, Const(10)),
        ]
    )
    assert solve(constraint).ranges == {1: IntervalSet([(0, 9)])}


def test_constraint_classification():
    c = Compare("lt", DUE, Const(10))
    assert is_state_related(c)
    assert not is_state_related(Compare("lt", calldata(Const(4)), Const(10)))
    assert is_partially_unknown(conjoin([c, NonZero(Unknown("call result"))]))
    assert not is_partially_unknown(c)


def test_sample_box():
    box = {1: IntervalSet([(31, 39)]), 2: IntervalSet.point(1)}
    sample = sample_box(box, np.random.default_rng(3))
    assert list(sample) == [1, 2]
    assert 31 <= sample[1] <= 39
    assert sample[2] == 1
