"""Online inference: partition a condition, sample completions, marginalize.

A free-text condition rarely pins down every factor.  The oracle is asked,
factor by factor, whether the condition implies the factor holds, fails, or
is undetermined; undetermined factors are then completed jointly by the
oracle (preserving whatever correlations it encodes) and the decision model
is averaged over the sampled completions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FactorConfiguration, FactorSet, predict
from .em import TrainedModel
from .errors import DimensionError, ProtocolError, ValidationError
from .oracle import (
    PROBE_TEMPERATURE,
    SAMPLING_TEMPERATURE,
    OracleBackend,
    determine_factor,
    sample_completion,
)

DEFAULT_SAMPLES = 50

INFERENCE_ABLATIONS = ("none", "no-mc")


@dataclass(frozen=True)
class ConditionPartition:
    """Split of the factor set into bits fixed by the condition and the rest."""

    n: int
    observed: dict[int, int]
    uncertain: frozenset[int]
    condition_text: str

    def __post_init__(self):
        object.__setattr__(self, "observed", dict(self.observed))
        object.__setattr__(self, "uncertain", frozenset(self.uncertain))
        ids = set(range(self.n))
        if set(self.observed) & self.uncertain:
            raise ValidationError("observed and uncertain factor ids overlap")
        if set(self.observed) | self.uncertain != ids:
            raise ValidationError("partition must cover every factor id exactly once")
        for fid, bit in self.observed.items():
            if bit not in (0, 1):
                raise ValidationError(f"observed value for factor {fid} must be 0 or 1")

    @property
    def fully_observed(self) -> bool:
        return not self.uncertain

    def observed_config(self) -> FactorConfiguration:
        if not self.fully_observed:
            raise ValidationError("partition has uncertain factors; no single configuration")
        return FactorConfiguration(tuple(self.observed[i] for i in range(self.n)))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "observed": {str(fid): bit for fid, bit in sorted(self.observed.items())},
            "uncertain": sorted(self.uncertain),
            "condition_text": self.condition_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionPartition":
        return cls(
            n=d["n"],
            observed={int(fid): bit for fid, bit in d["observed"].items()},
            uncertain=frozenset(d["uncertain"]),
            condition_text=d["condition_text"],
        )


@dataclass(frozen=True)
class InferenceResult:
    """Monte Carlo estimate of the positive-outcome probability."""

    probability: float
    samples_used: int
    standard_error: float | None
    per_sample_probs: tuple[float, ...]
    partition: ConditionPartition

    def __post_init__(self):
        object.__setattr__(self, "per_sample_probs", tuple(self.per_sample_probs))
        if len(self.per_sample_probs) != self.samples_used:
            raise ValidationError("per-sample probabilities must have length samples_used")
        if abs(self.probability - float(np.mean(self.per_sample_probs))) > 1e-9:
            raise ValidationError("probability must equal the mean of per-sample probabilities")

    def to_dict(self) -> dict:
        return {
            "probability": self.probability,
            "standard_error": self.standard_error,
            "samples_used": self.samples_used,
            "per_sample_probs": list(self.per_sample_probs),
            "partition": self.partition.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceResult":
        return cls(
            probability=d["probability"],
            samples_used=d["samples_used"],
            standard_error=d["standard_error"],
            per_sample_probs=tuple(d["per_sample_probs"]),
            partition=ConditionPartition.from_dict(d["partition"]),
        )


def determine_factors(backend: OracleBackend, factor_set: FactorSet,
                      condition_text: str,
                      temperature: float = PROBE_TEMPERATURE) -> ConditionPartition:
    """One three-way oracle query per factor: implied 1, implied 0, or open."""
    observed: dict[int, int] = {}
    uncertain: set[int] = set()
    for factor in factor_set.factors:
        try:
            bit = determine_factor(backend, factor_set, factor.id, condition_text, temperature)
        except ProtocolError as err:
            raise ProtocolError(
                f"determination for factor {factor.name!r} unparseable: {err}",
                raw_text=err.raw_text,
            ) from err
        if bit is None:
            uncertain.add(factor.id)
        else:
            observed[factor.id] = bit
    return ConditionPartition(
        n=factor_set.n,
        observed=observed,
        uncertain=frozenset(uncertain),
        condition_text=condition_text,
    )


def sample_joint_completions(backend: OracleBackend, factor_set: FactorSet,
                             partition: ConditionPartition, t: int,
                             temperature: float = SAMPLING_TEMPERATURE,
                             ) -> list[FactorConfiguration]:
    """Draw t full configurations agreeing with the observed bits.

    Each draw asks the oracle for all uncertain bits at once, so any
    correlation between them is the oracle's to express; this module never
    factorizes the completion into independent per-factor draws.
    """
    if t < 1:
        raise ValidationError(f"sample count must be >= 1, got {t}")
    if partition.n != factor_set.n:
        raise DimensionError(
            f"partition is over {partition.n} factors, factor set has {factor_set.n}"
        )
    return [
        sample_completion(backend, factor_set, partition.observed,
                          partition.condition_text, temperature)
        for _ in range(t)
    ]


def _partition_from_samples(samples: list[FactorConfiguration], n: int) -> ConditionPartition:
    """Reconstruct a partition from agreement across samples (fallback when
    the caller marginalizes a bare sample list)."""
    bits = np.array([s.values for s in samples], dtype=int)
    observed = {}
    uncertain = set()
    for j in range(n):
        column = bits[:, j]
        if (column == column[0]).all():
            observed[j] = int(column[0])
        else:
            uncertain.add(j)
    return ConditionPartition(n=n, observed=observed, uncertain=frozenset(uncertain),
                              condition_text="")


def marginalize(model: TrainedModel, samples: list[FactorConfiguration],
                partition: ConditionPartition | None = None) -> InferenceResult:
    """Average the decision model over sampled completions."""
    if not samples:
        raise ValidationError("marginalization needs at least one sample")
    n = model.factor_set.n
    if any(len(c) != n for c in samples):
        raise DimensionError(f"all samples must have length {n}")
    probs = np.array([predict(model.params, c) for c in samples], dtype=float)
    t = len(probs)
    if np.all(probs == probs[0]):
        # degenerate batch (e.g. fully observed condition): keep the point
        # evaluation exact instead of averaging it through floating point
        mean = float(probs[0])
        se = 0.0 if t > 1 else None
    else:
        mean = float(probs.mean())
        se = float(probs.std(ddof=1) / np.sqrt(t))
    if partition is None:
        partition = _partition_from_samples(samples, n)
    return InferenceResult(
        probability=mean,
        samples_used=t,
        standard_error=se,
        per_sample_probs=tuple(float(p) for p in probs),
        partition=partition,
    )


def infer(model: TrainedModel, backend: OracleBackend, condition_text: str,
          t: int = DEFAULT_SAMPLES, temperature: float = SAMPLING_TEMPERATURE,
          ablation: str = "none", seed: int = 0) -> InferenceResult:
    """Full inference pass: partition, complete, marginalize.

    ``ablation="no-mc"`` replaces Monte Carlo completion with a single
    deterministic assignment (a seeded fair coin per uncertain factor), so
    the output does not depend on t.
    """
    if ablation not in INFERENCE_ABLATIONS:
        raise ValidationError(
            f"unknown ablation {ablation!r}; expected one of {INFERENCE_ABLATIONS}"
        )
    partition = determine_factors(backend, model.factor_set, condition_text)
    if ablation == "no-mc":
        rng = np.random.default_rng(seed)
        bits = dict(partition.observed)
        for fid in sorted(partition.uncertain):
            bits[fid] = int(rng.integers(0, 2))
        config = FactorConfiguration(tuple(bits[i] for i in range(partition.n)))
        return marginalize(model, [config], partition)
    samples = sample_joint_completions(backend, model.factor_set, partition, t, temperature)
    return marginalize(model, samples, partition)
