"""
Branch constraints and an interval solver over 256-bit storage words.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np

from sdfuzz.opcodes import SIGN_BIT, WORD_MAX, WORD_MOD, to_signed
from sdfuzz.symbolic import BinOp, Const, StorageSlot, SymExpr, UnOp, Unknown

# Intervals


class IntervalSet:
    """Sorted, disjoint, non-adjacent inclusive intervals of unsigned words."""

    __slots__ = ("intervals",)

    def __init__(self, intervals: Iterable[Tuple[int, int]] = ()):
        clipped = sorted(
            (max(lo, 0), min(hi, WORD_MAX))
            for lo, hi in intervals
            if lo <= hi and hi >= 0 and lo <= WORD_MAX
        )
        merged: List[Tuple[int, int]] = []
        for lo, hi in clipped:
            if merged and lo <= merged[-1][1] + 1:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        self.intervals: Tuple[Tuple[int, int], ...] = tuple(merged)

    @classmethod
    def full(cls) -> "IntervalSet":
        return cls([(0, WORD_MAX)])

    @classmethod
    def point(cls, value: int) -> "IntervalSet":
        return cls([(value, value)])

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalSet) and self.intervals == other.intervals

    def __hash__(self) -> int:
        return hash(self.intervals)

    def __repr__(self) -> str:
        return f"IntervalSet({list(self.intervals)})"

    def __iter__(self):
        return iter(self.intervals)

    def is_empty(self) -> bool:
        return not self.intervals

    def is_full(self) -> bool:
        return self.intervals == ((0, WORD_MAX),)

    def contains(self, value: int) -> bool:
        return any(lo <= value <= hi for lo, hi in self.intervals)

    def intersect(self, other: "IntervalSet") -> "IntervalSet":
        result = []
        for a_lo, a_hi in self.intervals:
            for b_lo, b_hi in other.intervals:
                lo, hi = max(a_lo, b_lo), min(a_hi, b_hi)
                if lo <= hi:
                    result.append((lo, hi))
        return IntervalSet(result)

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet(self.intervals + other.intervals)

    def shift(self, delta: int) -> "IntervalSet":
        """The set {x + delta mod 2**256 : x in self}."""
        result = []
        for lo, hi in self.intervals:
            if hi - lo == WORD_MAX:
                return IntervalSet.full()
            a = (lo + delta) % WORD_MOD
            b = (hi + delta) % WORD_MOD
            if a <= b:
                result.append((a, b))
            else:
                result.extend([(a, WORD_MAX), (0, b)])
        return IntervalSet(result)

    def negate(self) -> "IntervalSet":
        """The set {-x mod 2**256 : x in self}."""
        result = []
        for lo, hi in self.intervals:
            if lo == 0:
                result.append((0, 0))
                lo = 1
            if lo <= hi:
                result.append((WORD_MOD - hi, WORD_MOD - lo))
        return IntervalSet(result)

    def distance(self, value: int) -> int:
        """Gap between ``value`` and the nearest member, 0 for members."""
        if not self.intervals:
            raise ValueError("Distance to an empty interval set is undefined")
        gaps = []
        for lo, hi in self.intervals:
            if lo <= value <= hi:
                return 0
            gaps.append(lo - value if value < lo else value - hi)
        return min(gaps)

    def boundary_values(self) -> List[int]:
        """Bounds and midpoints, the values seeded into mutation pools."""
        values = []
        for lo, hi in self.intervals:
            values.extend([lo, hi, lo + (hi - lo) // 2])
        return sorted(set(values))

    def sample(self, rng: np.random.Generator) -> int:
        if not self.intervals:
            raise ValueError("Cannot sample from an empty interval set")
        lo, hi = self.intervals[int(rng.integers(len(self.intervals)))]
        offset = int.from_bytes(rng.bytes(32), "big") % (hi - lo + 1)
        return lo + offset

    def to_list(self) -> List[List[int]]:
        return [[lo, hi] for lo, hi in self.intervals]


def _from_signed(lo: int, hi: int) -> IntervalSet:
    """Unsigned words whose two's complement value lies in [lo, hi]."""
    pieces = []
    if lo <= -1:
        pieces.append((lo + WORD_MOD, min(hi, -1) + WORD_MOD))
    if hi >= 0:
        pieces.append((max(lo, 0), hi))
    return IntervalSet(pieces)


MIN_SIGNED = -SIGN_BIT
MAX_SIGNED = SIGN_BIT - 1


def allowed_values(op: str, value: int) -> IntervalSet:
    """All words ``y`` such that ``y <op> value`` holds."""
    signed = to_signed(value)
    if op == "lt":
        return IntervalSet([(0, value - 1)])
    elif op == "le":
        return IntervalSet([(0, value)])
    elif op == "gt":
        return IntervalSet([(value + 1, WORD_MAX)])
    elif op == "ge":
        return IntervalSet([(value, WORD_MAX)])
    elif op == "eq":
        return IntervalSet.point(value)
    elif op == "ne":
        return IntervalSet([(0, value - 1), (value + 1, WORD_MAX)])
    elif op == "slt":
        return _from_signed(MIN_SIGNED, signed - 1)
    elif op == "sle":
        return _from_signed(MIN_SIGNED, signed)
    elif op == "sgt":
        return _from_signed(signed + 1, MAX_SIGNED)
    elif op == "sge":
        return _from_signed(signed, MAX_SIGNED)
    raise ValueError(f"Unknown relation: {op}")


def holds(op: str, a: int, b: int) -> bool:
    return allowed_values(op, b).contains(a)


# Constraints


@dataclass(frozen=True)
class Truth:
    value: bool


TRUE = Truth(True)
FALSE = Truth(False)


@dataclass(frozen=True)
class NonZero:
    expr: SymExpr


@dataclass(frozen=True)
class IsZero:
    expr: SymExpr


@dataclass(frozen=True)
class Compare:
    op: str
    left: SymExpr
    right: SymExpr


@dataclass(frozen=True)
class And:
    parts: Tuple


@dataclass(frozen=True)
class Or:
    parts: Tuple


NEGATED = {
    "lt": "ge",
    "ge": "lt",
    "gt": "le",
    "le": "gt",
    "slt": "sge",
    "sge": "slt",
    "sgt": "sle",
    "sle": "sgt",
    "eq": "ne",
    "ne": "eq",
}
FLIPPED = {
    "lt": "gt",
    "gt": "lt",
    "le": "ge",
    "ge": "le",
    "slt": "sgt",
    "sgt": "slt",
    "sle": "sge",
    "sge": "sle",
    "eq": "eq",
    "ne": "ne",
}
RELATIONS = {"LT": "lt", "GT": "gt", "SLT": "slt", "SGT": "sgt", "EQ": "eq"}


def conjoin(parts: Iterable) -> object:
    flat = []
    for part in parts:
        if part == FALSE:
            return FALSE
        if part == TRUE:
            continue
        flat.extend(part.parts if isinstance(part, And) else [part])
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disjoin(parts: Iterable) -> object:
    flat = []
    for part in parts:
        if part == TRUE:
            return TRUE
        if part == FALSE:
            continue
        flat.extend(part.parts if isinstance(part, Or) else [part])
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


def _is_boolean(expr: SymExpr) -> bool:
    if isinstance(expr, Const):
        return expr.value in (0, 1)
    if isinstance(expr, UnOp):
        return expr.op == "ISZERO"
    if isinstance(expr, BinOp):
        if expr.op in RELATIONS:
            return True
        if expr.op in ("AND", "OR"):
            return _is_boolean(expr.left) and _is_boolean(expr.right)
    return False


def require(expr: SymExpr, nonzero: bool):
    """
    The constraint that ``expr`` is non-zero (or zero), normalised through
    ISZERO, comparisons and boolean AND/OR.
    """
    if isinstance(expr, Const):
        return Truth((expr.value != 0) == nonzero)
    if isinstance(expr, UnOp) and expr.op == "ISZERO":
        return require(expr.arg, not nonzero)
    if isinstance(expr, BinOp):
        if expr.op in RELATIONS:
            op = RELATIONS[expr.op]
            return Compare(op if nonzero else NEGATED[op], expr.left, expr.right)
        if expr.op in ("AND", "OR") and _is_boolean(expr):
            left = require(expr.left, nonzero)
            right = require(expr.right, nonzero)
            # AND is true when both are; OR is false when both are.
            if (expr.op == "AND") == nonzero:
                return conjoin([left, right])
            return disjoin([left, right])
    return NonZero(expr) if nonzero else IsZero(expr)


def branch_condition(condition: SymExpr, taken: bool):
    """Constraint for a JUMPI taking (or not taking) its jump."""
    return require(condition, taken)


def expressions(constraint) -> List[SymExpr]:
    if isinstance(constraint, (And, Or)):
        return [e for part in constraint.parts for e in expressions(part)]
    if isinstance(constraint, (NonZero, IsZero)):
        return [constraint.expr]
    if isinstance(constraint, Compare):
        return [constraint.left, constraint.right]
    return []


def is_state_related(constraint) -> bool:
    return any(e.contains(StorageSlot) for e in expressions(constraint))


def is_partially_unknown(constraint) -> bool:
    return any(e.contains(Unknown) for e in expressions(constraint))


# Solving


Box = Dict[int, IntervalSet]


class Solution(NamedTuple):
    ranges: Box
    satisfiable: bool


def _affine(expr: SymExpr) -> Optional[Tuple[int, int, int]]:
    """Match ``sign * storage[slot] + offset`` with a constant slot."""
    if isinstance(expr, StorageSlot) and isinstance(expr.slot, Const):
        return expr.slot.value, 1, 0
    if not isinstance(expr, BinOp):
        return None
    if expr.op == "ADD":
        for term, constant in ((expr.left, expr.right), (expr.right, expr.left)):
            inner = _affine(term)
            if inner is not None and isinstance(constant, Const):
                slot, sign, offset = inner
                return slot, sign, offset + constant.value
    elif expr.op == "SUB":
        left = _affine(expr.left)
        if left is not None and isinstance(expr.right, Const):
            slot, sign, offset = left
            return slot, sign, offset - expr.right.value
        right = _affine(expr.right)
        if right is not None and isinstance(expr.left, Const):
            slot, sign, offset = right
            return slot, -sign, expr.left.value - offset
    return None


def _atom(constraint) -> Optional[Box]:
    if isinstance(constraint, NonZero):
        constraint = Compare("ne", constraint.expr, Const(0))
    elif isinstance(constraint, IsZero):
        constraint = Compare("eq", constraint.expr, Const(0))

    op, left, right = constraint.op, constraint.left, constraint.right
    if isinstance(left, Const) and isinstance(right, Const):
        return {} if holds(op, left.value, right.value) else None

    matched = _affine(left)
    if matched is not None and isinstance(right, Const):
        allowed = allowed_values(op, right.value)
    else:
        matched = _affine(right)
        if matched is None or not isinstance(left, Const):
            # Unsupported shapes, calldata-only atoms and symbolic slots.
            return {}
        allowed = allowed_values(FLIPPED[op], left.value)

    slot, sign, offset = matched
    values = allowed.shift(-offset)
    if sign < 0:
        values = values.negate()
    if values.is_empty():
        return None
    return {slot: values}


def _intersect(a: Box, b: Box) -> Optional[Box]:
    result = dict(a)
    for slot, values in b.items():
        merged = result[slot].intersect(values) if slot in result else values
        if merged.is_empty():
            return None
        result[slot] = merged
    return result


def _solve(constraint) -> Optional[Box]:
    if isinstance(constraint, Truth):
        return {} if constraint.value else None
    if isinstance(constraint, And):
        box: Box = {}
        for part in constraint.parts:
            solved = _solve(part)
            if solved is None:
                return None
            box = _intersect(box, solved)
            if box is None:
                return None
        return box
    if isinstance(constraint, Or):
        boxes = [b for b in map(_solve, constraint.parts) if b is not None]
        if not boxes:
            return None
        shared = set(boxes[0]).intersection(*boxes[1:])
        result = {}
        for slot in shared:
            values = boxes[0][slot]
            for other in boxes[1:]:
                values = values.union(other[slot])
            if not values.is_full():
                result[slot] = values
        return result
    return _atom(constraint)


def solve(constraint) -> Solution:
    """
    Over-approximate the storage values that satisfy a constraint.

    Parameters
    ----------
    constraint
        A constraint built by ``require``/``conjoin``/``disjoin``.

    Returns
    -------
    solution: Solution
        Per-slot interval sets, ordered by slot, and whether any assignment
        can satisfy the constraint. Slots that are unconstrained are absent.
    """
    box = _solve(constraint)
    if box is None:
        return Solution({}, False)
    ranges = {slot: values for slot, values in sorted(box.items()) if not values.is_full()}
    return Solution(ranges, True)


def sample_box(box: Box, rng: np.random.Generator) -> Dict[int, int]:
    return {slot: values.sample(rng) for slot, values in sorted(box.items())}


def serialize_box(box: Box) -> Dict[str, List[List[int]]]:
    return {hex(slot): values.to_list() for slot, values in sorted(box.items())}
