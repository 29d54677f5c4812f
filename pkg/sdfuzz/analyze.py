"""
The static phase: CFG, code targets, state targets and block distances.
"""
import hashlib
import logging
from typing import Dict, List, NamedTuple, Optional

from eth_utils import encode_hex

from sdfuzz.abi import AbiDescriptor
from sdfuzz.backward import StateAnalyzer, StateTarget
from sdfuzz.bytecode import disassemble
from sdfuzz.cfg import Cfg, UnrollBudgetExceeded, build_cfg, unroll_loops
from sdfuzz.config import CampaignConfig
from sdfuzz.guidance import DistanceMap, block_distances
from sdfuzz.targets import CodeTarget, find_code_targets

logger = logging.getLogger(__name__)


class StaticAnalysis(NamedTuple):
    bytecode: bytes
    abi: AbiDescriptor
    cfg: Cfg
    unrolled: Optional[Cfg]
    code_targets: List[CodeTarget]
    # Aligned with code_targets.
    state_targets: List[StateTarget]
    distances: Optional[DistanceMap]
    warnings: List[str]

    @property
    def contract_id(self) -> str:
        return hashlib.sha256(self.bytecode).hexdigest()

    def to_dict(self) -> Dict:
        return {
            "contract": self.contract_id,
            "cfg": {
                "blocks": sum(1 for b in self.cfg if b.sink is None),
                "branch_edges": self.cfg.branch_edge_count,
                "unrolled_blocks": len(self.unrolled) if self.unrolled else None,
            },
            "code_targets": [t.to_dict() for t in self.code_targets],
            "state_targets": [st.to_dict() for st in self.state_targets],
            "warnings": list(self.warnings),
        }


def _unreachable(target: CodeTarget, reason: str) -> StateTarget:
    return StateTarget(target, {}, False, diagnostic=reason)


def analyze(
    bytecode: bytes, abi: AbiDescriptor, config: Optional[CampaignConfig] = None
) -> StaticAnalysis:
    """
    Run every static analysis on a contract.

    Failures of the state analysis are local to a target: the target keeps
    an unsatisfiable state target, a diagnostic, and only code guidance.

    Parameters
    ----------
    bytecode: bytes
        Runtime bytecode.
    abi: AbiDescriptor
    config: CampaignConfig, optional
        Supplies the unroll bound and budgets; defaults otherwise.

    Returns
    -------
    analysis: StaticAnalysis
    """
    config = config or CampaignConfig()
    instructions = disassemble(bytecode)
    cfg = build_cfg(instructions, unroll_bound=config.unroll_bound)
    code_targets = find_code_targets(cfg, abi)
    logger.info(
        "Contract %s: %d blocks, %d code targets",
        encode_hex(hashlib.sha256(bytecode).digest()[:4]),
        len(cfg),
        len(code_targets),
    )

    warnings: List[str] = []
    try:
        unrolled = unroll_loops(cfg, config.unroll_bound, config.unroll_block_budget)
    except UnrollBudgetExceeded as e:
        logger.warning("%s; state targets are skipped", e)
        warnings.append(str(e))
        unrolled = None

    if unrolled is None:
        state_targets = [_unreachable(t, "unroll budget exceeded") for t in code_targets]
    else:
        analyzer = StateAnalyzer(unrolled, config.path_limit)
        state_targets = [analyzer.derive(target) for target in code_targets]
        for st in state_targets:
            if st.truncated:
                warnings.append(
                    f"{st.target.bug_class.value} at pc {st.target.anchor_pc}: "
                    f"path enumeration stopped at {config.path_limit} paths"
                )

    distances = None
    if code_targets:
        distances = block_distances(cfg, {t.block_id for t in code_targets})

    return StaticAnalysis(
        bytecode=bytes(bytecode),
        abi=abi,
        cfg=cfg,
        unrolled=unrolled,
        code_targets=code_targets,
        state_targets=state_targets,
        distances=distances,
        warnings=warnings,
    )
