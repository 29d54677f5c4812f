import io
import json
import os
import pathlib
import shutil

import pytest

from sdfuzz.__main__ import (
    EXIT_FAILURE,
    EXIT_INPUT_ERROR,
    EXIT_SUCCESS,
    default_report_path,
    handle,
    main,
    serve,
)
from sdfuzz.corpus import fixture


@pytest.fixture
def contract(tmp_path):
    paths = []
    for path in fixture("suicidal"):
        shutil.copy(path, tmp_path / path.name)
        paths.append(str(tmp_path / path.name))
    return paths


@pytest.fixture
def report_path(tmp_path, contract):
    out = tmp_path / "campaign.json"
    assert main(["fuzz", *contract, "--max-cases", "200", "--out", str(out)]) == EXIT_SUCCESS
    return out


def test_default_report_path():
    assert default_report_path("contracts/bank.easm") == pathlib.Path("contracts/bank.report.json")


def test_analyze(capsys, contract):
    assert main(["analyze", *contract]) == EXIT_SUCCESS
    content = json.loads(capsys.readouterr().out)
    assert "Suicidal" in [t["bug_class"] for t in content["code_targets"]]


def test_fuzz_writes_default_report(capsys, tmp_path, contract):
    assert main(["fuzz", *contract, "--max-cases", "10"]) == EXIT_SUCCESS
    summary = json.loads(capsys.readouterr().out)
    path = tmp_path / "suicidal.report.json"
    assert summary["report"] == str(path)
    assert path.exists()
    assert summary["test_cases"] >= 10


def test_fuzz_metrics_out(tmp_path, contract):
    metrics = tmp_path / "metrics.csv"
    argv = ["fuzz", *contract, "--max-cases", "10", "--ablate", "both", "--metrics-out", str(metrics)]
    assert main(argv) == EXIT_SUCCESS
    assert metrics.read_text().startswith("generation,")


def test_replay(capsys, report_path):
    # Drop the summary printed while the fixture ran the campaign.
    capsys.readouterr()
    assert main(["replay", str(report_path), "0"]) == EXIT_SUCCESS
    assert capsys.readouterr().out.startswith("reproduced: ")

    report = json.loads(report_path.read_text())
    report["findings"][0]["anchor_pc"] += 1
    report_path.write_text(json.dumps(report))
    assert main(["replay", str(report_path), "0"]) == EXIT_FAILURE


def test_input_errors(tmp_path, contract, report_path):
    assert main([]) == EXIT_INPUT_ERROR
    assert main(["analyze", str(tmp_path / "missing.easm"), contract[1]]) == EXIT_INPUT_ERROR
    assert main(["fuzz", *contract, "--max-cases", "0"]) == EXIT_INPUT_ERROR
    assert main(["replay", str(report_path), "99"]) == EXIT_INPUT_ERROR
    assert main(["replay", str(tmp_path / "missing.json"), "0"]) == EXIT_INPUT_ERROR
    with pytest.raises(SystemExit) as excinfo:
        main(["bench", str(tmp_path), "--seeds", "0"])
    assert excinfo.value.code == 2


def test_bench_on_empty_suite(capsys, tmp_path):
    assert main(["bench", str(tmp_path), "--seeds", "1", "--workers", "1"]) == EXIT_SUCCESS
    assert "fixture" in capsys.readouterr().out


def test_handle(contract, report_path):
    assert handle(json.dumps({"operation": "process_ID"})) == str(os.getpid())
    assert handle(json.dumps({"operation": "unknown"})).startswith("Invalid operation.")

    message = handle(json.dumps({"operation": "analyze", "bytecode": contract[0], "abi": contract[1]}))
    assert message.endswith("code target(s)")

    message = handle(json.dumps({"operation": "replay", "report": str(report_path), "finding": 0}))
    assert message.startswith("reproduced: ")


def test_handle_fuzz(tmp_path, contract):
    out = tmp_path / "served.json"
    request = {
        "operation": "fuzz",
        "bytecode": contract[0],
        "abi": contract[1],
        "config": {"max_test_cases": 10},
        "out": str(out),
    }
    assert f"report written to {out}" in handle(json.dumps(request))
    assert out.exists()


def test_serve(capsys, monkeypatch):
    requests = [json.dumps({"operation": "process_ID"}), "{"]
    monkeypatch.setattr("sys.stdin", io.StringIO("\n".join(requests) + "\n"))
    assert serve(None) == EXIT_SUCCESS
    responses = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert responses[0] == {"success": True, "message": "Initialized sdfuzz server"}
    assert responses[1] == {"success": True, "message": str(os.getpid())}
    assert not responses[2]["success"]
