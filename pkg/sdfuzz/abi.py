"""
ABI descriptors with explicit selectors, and argument encoding.

Argument values are plain Python objects: non-negative integers for
``uintN``, ``address``, ``bool`` and ``bytesN`` (the N bytes read as a big
endian number), signed integers for ``intN``, and ``bytes`` for the dynamic
kinds ``bytes`` and ``string``.
"""
import json
import pathlib
import re
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from eth_utils import decode_hex, encode_hex

from sdfuzz.opcodes import WORD_MOD, to_unsigned
from sdfuzz.schemata import AbiValidationError, validate_descriptor
from sdfuzz.vm import ATTACKER, DEPLOYER

ArgValue = Union[int, bytes]

MAX_DYNAMIC_LENGTH = 64
DEFAULT_CONTRACT_BALANCE = 10**19
ADDRESS_BITS = 160

_SIZED = re.compile(r"^(u?int)(\d+)$")


class ParamSpec(NamedTuple):
    kind: str
    name: str = ""

    @property
    def is_dynamic(self) -> bool:
        return self.kind in ("bytes", "string")

    @property
    def signed(self) -> bool:
        return self.kind.startswith("int")

    @property
    def bits(self) -> int:
        """Width of the value in bits; 0 for dynamic kinds."""
        if self.kind == "bool":
            return 1
        if self.kind == "address":
            return ADDRESS_BITS
        if self.is_dynamic:
            return 0
        sized = _SIZED.match(self.kind)
        if sized:
            return int(sized.group(2))
        return 8 * int(self.kind[len("bytes") :])

    @property
    def left_aligned(self) -> bool:
        return self.kind.startswith("bytes") and not self.is_dynamic


class FunctionSpec(NamedTuple):
    name: str
    selector: int
    params: Tuple[ParamSpec, ...]
    payable: bool = False

    @property
    def selector_hex(self) -> str:
        return f"0x{self.selector:08x}"

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "selector": self.selector_hex,
            "params": [{"kind": p.kind, "name": p.name} for p in self.params],
            "payable": self.payable,
        }


class Deployment(NamedTuple):
    storage: Dict[int, int]
    balance: int = DEFAULT_CONTRACT_BALANCE


class AbiDescriptor(NamedTuple):
    functions: Tuple[FunctionSpec, ...]
    deployment: Deployment = Deployment({})
    expected_target: Optional[str] = None

    @property
    def has_payable(self) -> bool:
        return any(f.payable for f in self.functions)

    def by_selector(self, selector: int) -> FunctionSpec:
        for function in self.functions:
            if function.selector == selector:
                return function
        raise KeyError(f"No function with selector 0x{selector:08x}")

    def to_dict(self) -> Dict:
        content = {
            "functions": [f.to_dict() for f in self.functions],
            "deployment": {
                "storage": {
                    hex(slot): hex(value)
                    for slot, value in sorted(self.deployment.storage.items())
                },
                "balance": self.deployment.balance,
            },
        }
        if self.expected_target is not None:
            content["expected_target"] = {"bug_class": self.expected_target}
        return content


def _word(value: Union[int, str]) -> int:
    if value == "deployer":
        return DEPLOYER
    elif value == "attacker":
        return ATTACKER
    elif isinstance(value, str):
        return int(value, 16)
    return value


def parse_abi(data: Dict) -> AbiDescriptor:
    """
    Build a descriptor from decoded JSON.

    Raises
    ------
    AbiValidationError
        Carrying every problem found, keyed by location.
    """
    errors = validate_descriptor(data)
    if errors:
        raise AbiValidationError(errors)

    functions = tuple(
        FunctionSpec(
            name=f["name"],
            selector=int.from_bytes(decode_hex(f["selector"]), "big"),
            params=tuple(ParamSpec(p["kind"], p.get("name") or "") for p in f["params"]),
            payable=bool(f.get("payable", False)),
        )
        for f in data["functions"]
    )
    section = data.get("deployment") or {}
    deployment = Deployment(
        storage={
            _word(slot): _word(value)
            for slot, value in (section.get("storage") or {}).items()
        },
        balance=section.get("balance", DEFAULT_CONTRACT_BALANCE),
    )
    expected = data.get("expected_target")
    return AbiDescriptor(
        functions=functions,
        deployment=deployment,
        expected_target=expected["bug_class"] if expected else None,
    )


def read_abi(path: Union[str, pathlib.Path]) -> AbiDescriptor:
    path = pathlib.Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ABI descriptor not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise AbiValidationError({str(path): [f"Invalid JSON: {e}"]}) from e
    return parse_abi(data)


def coerce(param: ParamSpec, value: int) -> ArgValue:
    """Fit an arbitrary 256-bit word into the valid range of a parameter."""
    value %= WORD_MOD
    if param.is_dynamic:
        return value.to_bytes(32, "big")
    if param.kind == "bool":
        return value & 1
    masked = value & ((1 << param.bits) - 1)
    if param.signed:
        sign = 1 << (param.bits - 1)
        return masked - (1 << param.bits) if masked & sign else masked
    return masked


def random_value(param: ParamSpec, rng: np.random.Generator) -> ArgValue:
    if param.is_dynamic:
        length = int(rng.integers(1, MAX_DYNAMIC_LENGTH + 1))
        return rng.bytes(length)
    if param.kind == "bool":
        return int(rng.integers(2))
    word = int.from_bytes(rng.bytes(32), "big")
    return coerce(param, word)


def _static_word(param: ParamSpec, value: int) -> bytes:
    if param.signed:
        value = to_unsigned(value)
    elif param.left_aligned:
        value <<= 256 - param.bits
    return value.to_bytes(32, "big")


def encode_args(params: Sequence[ParamSpec], values: Sequence[ArgValue]) -> bytes:
    """Head and tail encoding of arguments, as the calldata after a selector."""
    if len(params) != len(values):
        raise ValueError(f"Expected {len(params)} arguments, received {len(values)}")

    head_size = 32 * len(params)
    heads: List[bytes] = []
    tails: List[bytes] = []
    offset = head_size
    for param, value in zip(params, values):
        if param.is_dynamic:
            data = bytes(value)
            padded = data + b"\x00" * (-len(data) % 32)
            heads.append(offset.to_bytes(32, "big"))
            tail = len(data).to_bytes(32, "big") + padded
            tails.append(tail)
            offset += len(tail)
        else:
            heads.append(_static_word(param, int(value)))
    return b"".join(heads) + b"".join(tails)


def value_to_json(value: ArgValue) -> str:
    if isinstance(value, bytes):
        return encode_hex(value)
    return str(value)


def value_from_json(param: ParamSpec, text: str) -> ArgValue:
    if param.is_dynamic:
        return decode_hex(text)
    return int(text)


def pool_words(value: ArgValue) -> List[int]:
    """256-bit words contributed to a mutation pool by an observed argument."""
    if isinstance(value, bytes):
        return [int.from_bytes(value[:32].ljust(32, b"\x00"), "big")] if value else []
    return [value % WORD_MOD]
