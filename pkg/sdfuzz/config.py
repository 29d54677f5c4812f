import dataclasses
from dataclasses import dataclass
from typing import Any, Dict, Optional

ABLATIONS = (None, "code", "state", "both")


class CampaignError(ValueError):
    pass


def _probability(name: str, value: float) -> Optional[str]:
    if not 0.0 <= value <= 1.0:
        return f"{name} must be in [0, 1], received: {value}"
    return None


def _at_least(name: str, value: int, minimum: int) -> Optional[str]:
    if value < minimum:
        return f"{name} must be at least {minimum}, received: {value}"
    return None


@dataclass(frozen=True)
class CampaignConfig:
    max_test_cases: int = 2000
    population_size: Optional[int] = None
    rng_seed: int = 0
    crossover_prob: float = 0.5
    pool_mutation_prob: float = 0.5
    mutation_rate: float = 0.5
    splice_prob: float = 0.75
    elite_count: int = 1
    gamma: float = 0.7
    alpha: float = 0.5
    beta: float = 0.1
    n_fraction: float = 0.1
    max_dist: int = 10_000
    timeout: Optional[float] = None
    max_seq_len: int = 5
    ablation: Optional[str] = None
    unroll_bound: int = 20
    unroll_block_budget: int = 50_000
    path_limit: int = 10_000
    max_steps: int = 100_000
    record_wall_time: bool = False

    def __post_init__(self):
        errors = [
            _at_least("max_test_cases", self.max_test_cases, 1),
            _at_least("elite_count", self.elite_count, 0),
            _at_least("max_seq_len", self.max_seq_len, 1),
            _at_least("unroll_bound", self.unroll_bound, 1),
            _at_least("unroll_block_budget", self.unroll_block_budget, 1),
            _at_least("path_limit", self.path_limit, 1),
            _at_least("max_steps", self.max_steps, 1),
            _at_least("max_dist", self.max_dist, 1),
            _probability("crossover_prob", self.crossover_prob),
            _probability("pool_mutation_prob", self.pool_mutation_prob),
            _probability("mutation_rate", self.mutation_rate),
            _probability("splice_prob", self.splice_prob),
            _probability("alpha", self.alpha),
        ]
        if self.population_size is not None:
            errors.append(_at_least("population_size", self.population_size, 1))
        if not 0.0 < self.gamma <= 1.0:
            errors.append(f"gamma must be in (0, 1], received: {self.gamma}")
        if self.beta <= 0:
            errors.append(f"beta must be positive, received: {self.beta}")
        if not 0.0 < self.n_fraction <= 1.0:
            errors.append(f"n_fraction must be in (0, 1], received: {self.n_fraction}")
        if self.timeout is not None and self.timeout <= 0:
            errors.append(f"timeout must be positive, received: {self.timeout}")
        if self.ablation not in ABLATIONS:
            errors.append(
                f"ablation must be one of code, state, both, received: {self.ablation}"
            )
        errors = [e for e in errors if e is not None]
        if errors:
            raise CampaignError("; ".join(errors))

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CampaignConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise CampaignError(f"Unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "CampaignConfig":
        return dataclasses.replace(self, **changes)
