import abc
import re
from collections import defaultdict
from typing import Any, Dict, List, NamedTuple, Sequence, Tuple, Union

MaybeError = Union[None, str]
ErrorList = List[str]

ACCOUNT_KEYWORDS = ("deployer", "attacker")
BUG_CLASSES = (
    "EtherLeak",
    "BlockDependency",
    "Reentrancy",
    "ControlledDelegatecall",
    "DangerousDelegatecall",
    "Suicidal",
    "LockEther",
)

_SIZED = re.compile(r"^(uint|int)(\d+)$")
_BYTES_N = re.compile(r"^bytes(\d+)$")
_HEX = re.compile(r"^0x[0-9a-fA-F]+$")


def format(data) -> str:
    return ", ".join(map(str, data))


class AbiValidationError(ValueError):
    def __init__(self, errors: Dict[str, List[str]]):
        self.errors = dict(errors)
        lines = [f"{name}: {'; '.join(messages)}" for name, messages in self.errors.items()]
        super().__init__("Invalid ABI descriptor:\n" + "\n".join(lines))


# Base classes


class BaseSchema(abc.ABC):
    """Base class for single value."""

    @abc.abstractmethod
    def validate(self, data, other=None) -> MaybeError:
        pass

    def validate_many(self, data, other=None) -> ErrorList:
        errors = []
        for value in data:
            error = self.validate(value, other)
            if error is not None:
                errors.append(error)
        return errors


class ConsistencySchema(BaseSchema, abc.ABC):
    pass


class IterableSchema(abc.ABC):
    """Base class for collection of values."""

    @abc.abstractmethod
    def validate(self, data, other=None) -> MaybeError:
        pass

    def validate_many(self, data, other=None) -> ErrorList:
        error = self.validate(data, other)
        if error:
            return [error]
        return []


class SchemaContainer(abc.ABC):
    def __init__(self, *schemata):
        self.schemata = schemata

    @abc.abstractmethod
    def validate(self, data, other=None) -> ErrorList:
        pass

    def _validate_schemata(self, data, other=None) -> ErrorList:
        errors = []
        for schema in self.schemata:
            _error = schema.validate(data, other)
            if _error:
                # The first failing schema makes the others meaningless.
                errors.append(_error)
                break
        return errors


class IterableSchemaContainer(abc.ABC):
    def __init__(self, *schemata):
        self.schemata = schemata

    @abc.abstractmethod
    def validate(self, data, other=None) -> ErrorList:
        pass

    def _validate_schemata(self, data, other=None) -> ErrorList:
        errors = []
        for schema in self.schemata:
            _errors = schema.validate_many(data, other)
            if _errors:
                errors.extend(_errors)
        return errors


# Schema containers for a single value.


class Optional(SchemaContainer):
    def validate(self, data, other=None) -> ErrorList:
        if data is None:
            return []
        return self._validate_schemata(data, other)


class Required(SchemaContainer):
    def validate(self, data, other=None) -> ErrorList:
        if data is None:
            return ["a value is required."]
        return self._validate_schemata(data, other)


# Schema containers for multiple values.


class AllRequired(IterableSchemaContainer):
    def validate(self, data, other=None) -> ErrorList:
        if data is None:
            return ["a list of values is required."]
        missing = [i + 1 for i, v in enumerate(data) if v is None]
        if missing:
            return [f"No values provided at position(s): {format(missing)}"]
        return self._validate_schemata(data, other)


# Schemata for a single value.


class IsType(BaseSchema):
    def __init__(self, *types: type):
        self.types = types

    def validate(self, data, _=None) -> MaybeError:
        # bool is an int subclass, but never a valid number here.
        if isinstance(data, bool) and bool not in self.types:
            return f"Expected {self._names()}, received a boolean: {data}"
        if not isinstance(data, self.types):
            return f"Expected {self._names()}, received: {data!r}"
        return None

    def _names(self) -> str:
        return " or ".join(t.__name__ for t in self.types)


class Positive(BaseSchema):
    def validate(self, data, _=None) -> MaybeError:
        if data < 0:
            return f"Number is not positive (>=0): {data}"
        return None


class Identifier(BaseSchema):
    def validate(self, data, _=None) -> MaybeError:
        if not data.isidentifier():
            return f"Not a valid function name: {data}"
        return None


class Selector(BaseSchema):
    def validate(self, data, _=None) -> MaybeError:
        if not _HEX.match(data) or len(data) != 10:
            return f"Selector must be 4 bytes of hex with 0x prefix: {data}"
        return None


class HexWord(BaseSchema):
    def validate(self, data, _=None) -> MaybeError:
        if not _HEX.match(data) or len(data) > 66:
            return f"Not a hex encoded 256-bit word: {data}"
        return None


class ParamKind(BaseSchema):
    def validate(self, data, _=None) -> MaybeError:
        if data in ("bool", "address", "bytes", "string"):
            return None
        sized = _SIZED.match(data)
        if sized:
            bits = int(sized.group(2))
            if bits % 8 or not 8 <= bits <= 256:
                return f"Width of {data} must be a multiple of 8 in [8, 256]"
            return None
        fixed = _BYTES_N.match(data)
        if fixed:
            size = int(fixed.group(1))
            if not 1 <= size <= 32:
                return f"Size of {data} must be in [1, 32]"
            return None
        return f"Unsupported parameter kind: {data}"


class AccountOrWord(BaseSchema):
    def validate(self, data, _=None) -> MaybeError:
        if isinstance(data, str) and data in ACCOUNT_KEYWORDS:
            return None
        if isinstance(data, int) and not isinstance(data, bool):
            if 0 <= data < 2**256:
                return None
            return f"Value out of the 256-bit range: {data}"
        if isinstance(data, str):
            return HexWord().validate(data)
        return f"Expected an integer, hex word or one of {format(ACCOUNT_KEYWORDS)}: {data!r}"


class Membership(BaseSchema):
    def __init__(self, members: Sequence[str]):
        self.members = members

    def validate(self, data, _=None) -> MaybeError:
        if data not in self.members:
            return f"Value {data} not found in: {format(self.members)}"
        return None


# Schemata for a collection of values.


class NotEmpty(IterableSchema):
    def validate(self, data, _=None) -> MaybeError:
        if len(data) == 0:
            return "At least one value is required."
        return None


class Unique(IterableSchema):
    def validate(self, data, _=None) -> MaybeError:
        seen = set()
        repeated = []
        for value in data:
            if value in seen and value not in repeated:
                repeated.append(value)
            seen.add(value)
        if repeated:
            return f"Values are not unique: {format(repeated)}"
        return None


# Consistency schemata


class PayableValue(ConsistencySchema):
    def validate(self, data, _=None) -> MaybeError:
        if data.get("payable") is not None and not isinstance(data["payable"], bool):
            return f"payable must be true or false, received: {data['payable']!r}"
        return None


class StorageKeys(ConsistencySchema):
    def validate(self, data, _=None) -> MaybeError:
        storage = data.get("storage") or {}
        wrong = [key for key in storage if HexWord().validate(key) is not None]
        if wrong:
            return f"Storage keys must be hex slots: {format(wrong)}"
        errors = [AccountOrWord().validate(value) for value in storage.values()]
        errors = [e for e in errors if e is not None]
        if errors:
            return errors[0]
        return None


class ValidationData(NamedTuple):
    schemata: Dict[str, Union[SchemaContainer, IterableSchemaContainer]]
    consistency_schemata: Tuple[ConsistencySchema, ...]
    name: str
    data: Dict[str, Any]
    other: Any = None


def validate_table(vd: ValidationData) -> Dict[str, List[str]]:
    errors = defaultdict(list)
    for variable, schema in vd.schemata.items():
        _errors = schema.validate(vd.data.get(variable), vd.other)
        if _errors:
            errors[f"{vd.name} {variable}"].extend(_errors)

    # The consistency schemata rely on the individual values being valid.
    if not errors:
        for schema in vd.consistency_schemata:
            _error = schema.validate(vd.data, vd.other)
            if _error:
                errors[vd.name].append(_error)

    return dict(errors)


FUNCTION_SCHEMATA = {
    "name": Required(IsType(str), Identifier()),
    "selector": Required(IsType(str), Selector()),
    "params": AllRequired(),
    "payable": Optional(IsType(bool)),
}
PARAM_SCHEMATA = {
    "kind": Required(IsType(str), ParamKind()),
    "name": Optional(IsType(str)),
}
DEPLOYMENT_SCHEMATA = {
    "storage": Optional(IsType(dict)),
    "balance": Optional(IsType(int), Positive()),
}
EXPECTED_TARGET_SCHEMATA = {
    "bug_class": Required(IsType(str), Membership(BUG_CLASSES)),
}


def validate_descriptor(data: Any) -> Dict[str, List[str]]:
    """
    Validate the decoded JSON of an ABI descriptor.

    Returns
    -------
    errors: dict
        Maps a location to its error messages; empty when the descriptor is
        valid.
    """
    if not isinstance(data, dict):
        return {"abi": ["The descriptor must be a JSON object."]}

    functions = data.get("functions")
    errors = validate_table(
        ValidationData({"functions": AllRequired(NotEmpty())}, (), "abi", data)
    )
    if errors or not isinstance(functions, list):
        return errors or {"abi functions": ["Expected a list of functions."]}

    for i, function in enumerate(functions):
        name = f"function {i + 1}"
        if not isinstance(function, dict):
            errors[name] = ["Expected an object."]
            continue
        errors.update(
            validate_table(
                ValidationData(FUNCTION_SCHEMATA, (PayableValue(),), name, function)
            )
        )
        for j, param in enumerate(function.get("params") or []):
            location = f"{name} param {j + 1}"
            if not isinstance(param, dict):
                errors[location] = ["Expected an object."]
                continue
            errors.update(validate_table(ValidationData(PARAM_SCHEMATA, (), location, param)))

    if not errors:
        selectors = [f["selector"].lower() for f in functions]
        names = [f["name"] for f in functions]
        for variable, values in (("selector", selectors), ("name", names)):
            error = Unique().validate(values)
            if error:
                errors[f"abi {variable}"] = [error]

    deployment = data.get("deployment")
    if deployment is not None:
        if not isinstance(deployment, dict):
            errors["deployment"] = ["Expected an object."]
        else:
            errors.update(
                validate_table(
                    ValidationData(
                        DEPLOYMENT_SCHEMATA, (StorageKeys(),), "deployment", deployment
                    )
                )
            )

    expected = data.get("expected_target")
    if expected is not None:
        if not isinstance(expected, dict):
            errors["expected_target"] = ["Expected an object."]
        else:
            errors.update(
                validate_table(
                    ValidationData(EXPECTED_TARGET_SCHEMATA, (), "expected_target", expected)
                )
            )
    return errors
