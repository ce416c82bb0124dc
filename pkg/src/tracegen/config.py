"""Run-wide configuration with the documented defaults."""

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Config:
    # Bounded integer domain used by the sat oracle and by sampling.
    domain_lo: int = -8
    domain_hi: int = 8
    # Angelic assume: retries per sampling group, and the cap on witnesses
    # enumerated by the oracle-guided fast path.
    assume_retries: int = 1000
    assume_witness_cap: int = 4096
    # Interpreter step budget per run.
    step_budget: int = 100_000
    # Refinement loop budgets.
    max_refine_steps: int = 500
    max_candidates: int = 3
    timeout_s: float = 180.0
    # Star expansion bound for the general Kleene case of plan normalization
    # (the sole source of deliberate incompleteness).
    star_bound: int = 2
    # Cap on union branches / feasibility search states.
    max_branches: int = 64
    max_search_states: int = 200_000
    # Recursion-template unrolling bound.
    unroll_bound: int = 2
    seed: int = 0
    jobs: int = 1

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **kw)


DEFAULT_CONFIG = Config()
