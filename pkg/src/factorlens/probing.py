"""Configuration coverage planning, dataset collection, and consistency audit.

Probing walks the oracle over factor configurations and records its verbal
likelihood for each, producing the behavioral dataset the estimator fits.
Small spaces are covered exhaustively; larger ones by distinct uniform draws.
The audit checks the oracle's answers against elementwise dominance: flipping
factors toward the positive outcome should never lower the verbal level.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .core import MAX_FACTORS, FactorConfiguration, FactorSet, configs_matrix
from .errors import DimensionError, ValidationError
from .oracle import PROBE_TEMPERATURE, OracleBackend, elicit_verbal
from .verbal import VerbalLevel

DEFAULT_BUDGET = 256
CHECKPOINT_EVERY = 32

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ProbePlan:
    """Which configurations to probe, and how they were chosen."""

    n: int
    mode: str  # "exhaustive" | "sampled"
    configs: tuple[FactorConfiguration, ...]
    budget: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "configs", tuple(self.configs))
        if self.mode not in ("exhaustive", "sampled"):
            raise ValidationError(f"unknown plan mode {self.mode!r}")
        if any(len(c) != self.n for c in self.configs):
            raise ValidationError("all planned configs must have length n")
        if self.mode == "exhaustive":
            if 2**self.n > self.budget or len(self.configs) != 2**self.n:
                raise ValidationError("exhaustive plan must cover all 2^n configs within budget")
        else:
            if len(self.configs) != self.budget:
                raise ValidationError("sampled plan must contain exactly `budget` configs")
            if len(set(c.values for c in self.configs)) != len(self.configs):
                raise ValidationError("sampled configs must be distinct")


@dataclass(frozen=True)
class Observation:
    """One probed configuration with the oracle's verbal answer."""

    config: FactorConfiguration
    level: VerbalLevel


@dataclass(frozen=True)
class BehavioralDataset:
    """The full probing record 𝒟 for one factor set."""

    factor_set: FactorSet
    observations: tuple[Observation, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        if not self.observations:
            raise ValidationError("dataset must contain at least one observation")
        n = self.factor_set.n
        if any(len(o.config) != n for o in self.observations):
            raise ValidationError("all observations must match the factor set's N")

    @property
    def size(self) -> int:
        return len(self.observations)

    @property
    def n(self) -> int:
        return self.factor_set.n

    def config_matrix(self) -> np.ndarray:
        return configs_matrix([o.config for o in self.observations], self.n)

    def ordinals(self) -> np.ndarray:
        return np.array([o.level.ordinal for o in self.observations], dtype=int)

    def with_observations(self, observations, note: str | None = None) -> "BehavioralDataset":
        prov = dict(self.provenance)
        if note:
            prov["notes"] = list(prov.get("notes", [])) + [note]
        return replace(self, observations=tuple(observations), provenance=prov)

    def to_dict(self) -> dict:
        return {
            "format_version": DATASET_FORMAT_VERSION,
            "factor_set": self.factor_set.to_dict(),
            "observations": [
                {"bits": o.config.as_bits(), "level": o.level.label}
                for o in self.observations
            ],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BehavioralDataset":
        if d.get("format_version") != DATASET_FORMAT_VERSION:
            raise ValidationError(
                f"unsupported dataset format version {d.get('format_version')!r}"
            )
        return cls(
            factor_set=FactorSet.from_dict(d["factor_set"]),
            observations=tuple(
                Observation(
                    config=FactorConfiguration.from_bits(o["bits"]),
                    level=VerbalLevel.from_label(o["level"]),
                )
                for o in d["observations"]
            ),
            provenance=d.get("provenance", {}),
        )


def plan_configurations(n: int, budget: int = DEFAULT_BUDGET, seed: int = 0) -> ProbePlan:
    """Exhaustive coverage when 2^n fits the budget, else distinct uniform draws."""
    if not 1 <= n <= MAX_FACTORS:
        raise ValidationError(f"n must be in [1, {MAX_FACTORS}], got {n}")
    if budget < 1:
        raise ValidationError(f"budget must be >= 1, got {budget}")
    total = 2**n
    if total <= budget:
        configs = tuple(
            FactorConfiguration(tuple((v >> j) & 1 for j in range(n))) for v in range(total)
        )
        return ProbePlan(n=n, mode="exhaustive", configs=configs, budget=budget, seed=seed)
    rng = np.random.default_rng(seed)
    draws = rng.choice(total, size=budget, replace=False)
    configs = tuple(
        FactorConfiguration(tuple((int(v) >> j) & 1 for j in range(n))) for v in draws
    )
    return ProbePlan(n=n, mode="sampled", configs=configs, budget=budget, seed=seed)


def collect_dataset(backend: OracleBackend, factor_set: FactorSet, plan: ProbePlan,
                    temperature: float = PROBE_TEMPERATURE,
                    checkpoint=None, checkpoint_every: int = CHECKPOINT_EVERY,
                    resume: tuple[Observation, ...] = (),
                    parallelism: int = 1) -> BehavioralDataset:
    """Probe every planned configuration, in plan order.

    ``checkpoint`` (when given) is called with the observations gathered so
    far every ``checkpoint_every`` completions and once more if a backend
    error interrupts the run; ``resume`` skips an already-collected prefix so
    an interrupted remote run never re-queries.
    """
    if plan.n != factor_set.n:
        raise DimensionError(f"plan is for n={plan.n}, factor set has N={factor_set.n}")
    started = datetime.now(timezone.utc).isoformat()
    observations: list[Observation] = list(resume)
    for already, obs in enumerate(observations):
        if obs.config != plan.configs[already]:
            raise ValidationError(f"resume prefix diverges from plan at index {already}")
    remaining = plan.configs[len(observations):]

    def probe(config: FactorConfiguration) -> Observation:
        return Observation(config=config, level=elicit_verbal(
            backend, factor_set, config, temperature=temperature))

    try:
        if parallelism > 1:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                for obs in pool.map(probe, remaining):
                    observations.append(obs)
                    if checkpoint and len(observations) % checkpoint_every == 0:
                        checkpoint(tuple(observations))
        else:
            for config in remaining:
                observations.append(probe(config))
                if checkpoint and len(observations) % checkpoint_every == 0:
                    checkpoint(tuple(observations))
    except Exception:
        if checkpoint:
            checkpoint(tuple(observations))
        raise

    provenance = {
        "backend": backend.kind,
        "plan_mode": plan.mode,
        "plan_seed": plan.seed,
        "budget": plan.budget,
        "temperature": temperature,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    if backend.kind == "synthetic":
        provenance["oracle_seed"] = backend.spec.rng_seed
        provenance["label_noise"] = backend.spec.label_noise
    return BehavioralDataset(
        factor_set=factor_set, observations=tuple(observations), provenance=provenance
    )


@dataclass(frozen=True)
class AuditResult:
    """Outcome of the ordinal consistency audit over dominance pairs."""

    comparable_pairs: int
    consistent_pairs: int
    violations: tuple[dict, ...]

    def __post_init__(self):
        if not 0 <= self.consistent_pairs <= self.comparable_pairs:
            raise ValidationError(
                "audit needs 0 <= consistent_pairs <= comparable_pairs, got "
                f"{self.consistent_pairs}/{self.comparable_pairs}"
            )
        if len(self.violations) != self.comparable_pairs - self.consistent_pairs:
            raise ValidationError("one violation entry per inconsistent pair required")

    @property
    def empty(self) -> bool:
        return self.comparable_pairs == 0

    @property
    def ratio(self) -> float | None:
        if self.empty:
            return None
        return self.consistent_pairs / self.comparable_pairs

    def to_dict(self) -> dict:
        return {
            "comparable_pairs": self.comparable_pairs,
            "consistent_pairs": self.consistent_pairs,
            "ratio": self.ratio,
            "violations": list(self.violations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditResult":
        result = cls(
            comparable_pairs=d["comparable_pairs"],
            consistent_pairs=d["consistent_pairs"],
            violations=tuple(d["violations"]),
        )
        if d.get("ratio") != result.ratio:
            raise ValidationError("audit ratio disagrees with its pair counts")
        return result


def ordinal_consistency_audit(dataset: BehavioralDataset,
                              positive_direction=None) -> AuditResult:
    """Fraction of dominance-ordered observation pairs whose verbal levels
    respect the order.

    ``positive_direction`` gives each factor's orientation toward the positive
    outcome (+1 or -1, default all +1); factors with -1 are flipped before the
    elementwise dominance comparison.  Configuration a dominates b when the
    oriented bits satisfy a >= b everywhere and a > b somewhere.
    """
    n = dataset.n
    if positive_direction is None:
        positive_direction = [1] * n
    signs = np.asarray(positive_direction, dtype=int)
    if signs.shape != (n,) or not set(np.unique(signs)) <= {-1, 1}:
        raise ValidationError("positive_direction must be a length-N vector of +1/-1")

    f_mat = dataset.config_matrix()
    oriented = np.where(signs == 1, f_mat, 1.0 - f_mat)
    levels = dataset.ordinals()

    ge = (oriented[:, None, :] >= oriented[None, :, :]).all(axis=-1)
    gt = (oriented[:, None, :] > oriented[None, :, :]).any(axis=-1)
    dominates = ge & gt
    consistent = levels[:, None] >= levels[None, :]

    comparable = int(dominates.sum())
    good = int((dominates & consistent).sum())
    viol_idx = np.argwhere(dominates & ~consistent)
    violations = tuple(
        {
            "dominating": dataset.observations[a].config.as_bits(),
            "dominated": dataset.observations[b].config.as_bits(),
            "dominating_level": dataset.observations[a].level.label,
            "dominated_level": dataset.observations[b].level.label,
        }
        for a, b in viol_idx
    )
    return AuditResult(
        comparable_pairs=comparable, consistent_pairs=good, violations=violations
    )
