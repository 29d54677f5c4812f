from unittest import TestCase

from sdfuzz.schemata import (
    AccountOrWord,
    AllRequired,
    IsType,
    Membership,
    NotEmpty,
    Optional,
    ParamKind,
    Positive,
    Required,
    Selector,
    StorageKeys,
    Unique,
    validate_descriptor,
)


def descriptor(**changes):
    data = {
        "functions": [
            {"name": "deposit", "selector": "0xd0e30db0", "params": [], "payable": True},
            {
                "name": "withdraw",
                "selector": "0x2e1a7d4d",
                "params": [{"kind": "uint256", "name": "amount"}],
            },
        ]
    }
    data.update(changes)
    return data


class TestPositive(TestCase):
    def test_positive(self):
        self.assertEqual(Positive().validate(-1), "Number is not positive (>=0): -1")
        self.assertIsNone(Positive().validate(0))
        self.assertIsNone(Positive().validate(1))


class TestOptional(TestCase):
    def test_optional(self):
        self.assertEqual(Optional(Positive()).validate(None), [])
        self.assertEqual(Optional(Positive()).validate(0), [])
        self.assertEqual(
            Optional(Positive()).validate(-1), ["Number is not positive (>=0): -1"]
        )


class TestRequired(TestCase):
    def test_required(self):
        self.assertEqual(Required(Positive()).validate(None), ["a value is required."])
        self.assertEqual(
            Required(Positive()).validate(-1), ["Number is not positive (>=0): -1"]
        )
        self.assertEqual(Required(Positive()).validate(1), [])

    def test_first_failure_only(self):
        errors = Required(IsType(int), Positive()).validate("a")
        self.assertEqual(len(errors), 1)
        self.assertTrue(errors[0].startswith("Expected int"))


class TestIsType(TestCase):
    def test_boolean_is_not_a_number(self):
        self.assertIsNone(IsType(int).validate(3))
        self.assertEqual(
            IsType(int).validate(True), "Expected int, received a boolean: True"
        )
        self.assertIsNone(IsType(bool).validate(True))


class TestSelector(TestCase):
    def test_selector(self):
        self.assertIsNone(Selector().validate("0xd0e30db0"))
        self.assertEqual(
            Selector().validate("0xd0e30d"),
            "Selector must be 4 bytes of hex with 0x prefix: 0xd0e30d",
        )
        self.assertEqual(
            Selector().validate("d0e30db000"),
            "Selector must be 4 bytes of hex with 0x prefix: d0e30db000",
        )


class TestParamKind(TestCase):
    def test_param_kind(self):
        for kind in ("uint256", "int8", "address", "bool", "bytes", "bytes32", "string"):
            self.assertIsNone(ParamKind().validate(kind))
        self.assertEqual(
            ParamKind().validate("uint7"),
            "Width of uint7 must be a multiple of 8 in [8, 256]",
        )
        self.assertEqual(ParamKind().validate("bytes33"), "Size of bytes33 must be in [1, 32]")
        self.assertEqual(ParamKind().validate("tuple"), "Unsupported parameter kind: tuple")


class TestAccountOrWord(TestCase):
    def test_account_or_word(self):
        self.assertIsNone(AccountOrWord().validate("deployer"))
        self.assertIsNone(AccountOrWord().validate("0x1f"))
        self.assertIsNone(AccountOrWord().validate(7))
        self.assertEqual(
            AccountOrWord().validate(2**256), f"Value out of the 256-bit range: {2**256}"
        )
        self.assertEqual(
            AccountOrWord().validate("owner"), "Not a hex encoded 256-bit word: owner"
        )


class TestMembership(TestCase):
    def test_membership(self):
        schema = Membership(("Reentrancy", "Suicidal"))
        self.assertIsNone(schema.validate("Suicidal"))
        self.assertEqual(
            schema.validate("Overflow"),
            "Value Overflow not found in: Reentrancy, Suicidal",
        )


class TestIterableSchemata(TestCase):
    def test_not_empty(self):
        self.assertEqual(AllRequired(NotEmpty()).validate([]), ["At least one value is required."])
        self.assertEqual(AllRequired(NotEmpty()).validate([1]), [])

    def test_unique(self):
        self.assertIsNone(Unique().validate(["a", "b"]))
        self.assertEqual(Unique().validate(["a", "b", "a", "a"]), "Values are not unique: a")

    def test_all_required(self):
        self.assertEqual(
            AllRequired().validate(None), ["a list of values is required."]
        )
        self.assertEqual(
            AllRequired().validate([1, None, None]),
            ["No values provided at position(s): 2, 3"],
        )


class TestStorageKeys(TestCase):
    def test_storage_keys(self):
        self.assertIsNone(StorageKeys().validate({"storage": {"0x0": "deployer"}}))
        self.assertEqual(
            StorageKeys().validate({"storage": {"owner": 1}}),
            "Storage keys must be hex slots: owner",
        )


class TestValidateDescriptor(TestCase):
    def test_valid(self):
        self.assertEqual(validate_descriptor(descriptor()), {})

    def test_not_an_object(self):
        self.assertEqual(
            validate_descriptor([]), {"abi": ["The descriptor must be a JSON object."]}
        )

    def test_no_functions(self):
        self.assertEqual(
            validate_descriptor({"functions": []}),
            {"abi functions": ["At least one value is required."]},
        )

    def test_function_errors(self):
        data = descriptor()
        data["functions"][1]["selector"] = "0x2e1a"
        data["functions"][1]["params"][0]["kind"] = "uint300"
        errors = validate_descriptor(data)
        self.assertEqual(
            errors["function 2 selector"],
            ["Selector must be 4 bytes of hex with 0x prefix: 0x2e1a"],
        )
        self.assertEqual(
            errors["function 2 param 1 kind"],
            ["Width of uint300 must be a multiple of 8 in [8, 256]"],
        )

    def test_duplicate_selector(self):
        data = descriptor()
        data["functions"][1]["selector"] = "0xD0E30DB0"
        self.assertEqual(
            validate_descriptor(data),
            {"abi selector": ["Values are not unique: 0xd0e30db0"]},
        )

    def test_payable_flag(self):
        data = descriptor()
        data["functions"][0]["payable"] = "yes"
        errors = validate_descriptor(data)
        self.assertEqual(
            errors["function 1 payable"], ["Expected bool, received: 'yes'"]
        )

    def test_deployment(self):
        data = descriptor(deployment={"storage": {"0x0": "deployer"}, "balance": -1})
        self.assertEqual(
            validate_descriptor(data),
            {"deployment balance": ["Number is not positive (>=0): -1"]},
        )

    def test_expected_target(self):
        data = descriptor(expected_target={"bug_class": "Overflow"})
        errors = validate_descriptor(data)
        self.assertEqual(list(errors), ["expected_target bug_class"])
