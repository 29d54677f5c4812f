"""
Campaign reports, metrics files and witness replay.
"""
import hashlib
import json
import logging
import pathlib
import shutil
from typing import Any, Dict, List, NamedTuple, Sequence, Union

import pandas as pd
from eth_utils import decode_hex, encode_hex

from sdfuzz.abi import AbiDescriptor, parse_abi
from sdfuzz.config import CampaignConfig
from sdfuzz.fuzzer import CampaignResult, GenerationMetrics, Seed, run_seed
from sdfuzz.oracles import Finding, replay_keys
from sdfuzz.targets import BugClass

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRICS_COLUMNS = list(GenerationMetrics._fields)


class ReportError(ValueError):
    pass


def finding_to_dict(finding: Finding, abi: AbiDescriptor) -> Dict[str, Any]:
    return {
        "bug_class": finding.bug_class.value,
        "anchor_pc": finding.anchor_pc,
        "description": finding.description,
        "tx_index": finding.tx_index,
        "witness": finding.seed.to_dict(abi) if finding.seed is not None else None,
    }


def build_report(result: CampaignResult) -> Dict[str, Any]:
    static = result.static
    abi = static.abi
    return {
        "schema_version": SCHEMA_VERSION,
        "contract": {
            "sha256": static.contract_id,
            "bytecode": encode_hex(static.bytecode),
            "abi": abi.to_dict(),
        },
        "config": result.config.to_dict(),
        "guidance": {
            "code_targets": result.config.ablation not in ("code", "both"),
            "state_targets": result.config.ablation not in ("state", "both"),
        },
        "static": static.to_dict(),
        "metrics": [m._asdict() for m in result.metrics],
        "findings": [finding_to_dict(f, abi) for f in result.findings],
        "totals": {
            "test_cases": result.executed,
            "generations": result.generations,
            "targets_reached": {str(i): g for i, g in result.reached.items()},
            "wall_time": result.wall_time,
        },
    }


def _temporary(path: pathlib.Path) -> pathlib.Path:
    return path.parent / f".{path.name}.tmp"


def write_json(data: Dict[str, Any], path: Union[str, pathlib.Path]) -> None:
    """Write JSON through a temporary file so readers never see partial output."""
    path = pathlib.Path(path)
    temp_path = _temporary(path)
    with open(temp_path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    shutil.move(temp_path, path)


def metrics_frame(metrics: Sequence[GenerationMetrics]) -> pd.DataFrame:
    return pd.DataFrame([m._asdict() for m in metrics], columns=METRICS_COLUMNS)


def write_metrics_csv(
    metrics: Sequence[GenerationMetrics], path: Union[str, pathlib.Path]
) -> None:
    path = pathlib.Path(path)
    temp_path = _temporary(path)
    metrics_frame(metrics).to_csv(temp_path, index=False)
    shutil.move(temp_path, path)


def read_report(path: Union[str, pathlib.Path]) -> Dict[str, Any]:
    path = pathlib.Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Report not found: {path}")
    try:
        report = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ReportError(f"Report is not valid JSON: {e}") from e
    version = report.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ReportError(
            f"Unsupported report schema version {version}, expected {SCHEMA_VERSION}"
        )
    return report


class ReplayVerdict(NamedTuple):
    reproduced: bool
    message: str


def replay(report: Dict[str, Any], finding_index: int) -> ReplayVerdict:
    """
    Re-execute the witness of one finding from a fresh deployment.

    Raises
    ------
    ReportError
        When the index is out of range, the finding has no witness, or the
        bytecode does not match its recorded hash.
    """
    findings: List[Dict] = report.get("findings", [])
    if not 0 <= finding_index < len(findings):
        raise ReportError(
            f"Finding index {finding_index} out of range; the report has "
            f"{len(findings)} finding(s)"
        )
    finding = findings[finding_index]
    if finding.get("witness") is None:
        raise ReportError(f"Finding {finding_index} has no witness seed")

    contract = report["contract"]
    bytecode = decode_hex(contract["bytecode"])
    if hashlib.sha256(bytecode).hexdigest() != contract["sha256"]:
        raise ReportError("Contract bytecode does not match its recorded sha256")

    abi = parse_abi(contract["abi"])
    config = CampaignConfig.from_dict(report["config"])
    seed = Seed.from_dict(finding["witness"], abi)
    run = run_seed(seed, bytecode, abi, config.max_steps)
    keys = replay_keys(run.traces, run.findings)

    key = (BugClass(finding["bug_class"]), finding["anchor_pc"])
    label = f"{finding['bug_class']} at pc {finding['anchor_pc']}"
    if key in keys:
        logger.info("Reproduced %s", label)
        return ReplayVerdict(True, f"reproduced: {label}")
    return ReplayVerdict(False, f"not reproduced: {label}")
