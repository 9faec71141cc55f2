"""Binary decision factors and the logistic decision model.

A decision scenario is summarized by N binary factors.  The decision model
maps a factor configuration f in {0,1}^N to a probability through a logistic
model with an intercept, per-factor main effects and sparse pairwise
interactions:

    P(O=1 | f) = sigmoid(alpha + sum_j beta_j f_j + sum_{i<j} gamma_ij f_i f_j)

Everything here is immutable and pure; heavy callers (estimation, editing)
work on dense numpy design matrices built by the helpers at the bottom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

MAX_FACTORS = 20  # keeps exhaustive 2^N enumeration tractable


@dataclass(frozen=True)
class Factor:
    """One named binary decision factor.

    ``positive_description`` says what value 1 means, ``negative_description``
    what value 0 means.
    """

    id: int
    name: str
    positive_description: str
    negative_description: str

    def __post_init__(self):
        if not self.name:
            raise ValidationError("factor name must be non-empty")
        if not self.positive_description or not self.negative_description:
            raise ValidationError(f"factor {self.name!r}: descriptions must be non-empty")
        if self.positive_description == self.negative_description:
            raise ValidationError(f"factor {self.name!r}: descriptions must be distinct")


@dataclass(frozen=True)
class FactorSet:
    """Ordered collection of factors for one decision scenario."""

    factors: tuple[Factor, ...]
    scenario: str
    outcome_positive: str
    outcome_negative: str

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        n = len(self.factors)
        if not 1 <= n <= MAX_FACTORS:
            raise ValidationError(f"factor count must be in [1, {MAX_FACTORS}], got {n}")
        ids = [f.id for f in self.factors]
        if ids != list(range(n)):
            raise ValidationError(f"factor ids must be 0..{n - 1} in order, got {ids}")

    @property
    def n(self) -> int:
        return len(self.factors)

    def names(self) -> list[str]:
        return [f.name for f in self.factors]

    def to_dict(self) -> dict:
        return {
            "factors": [
                {
                    "id": f.id,
                    "name": f.name,
                    "positive_description": f.positive_description,
                    "negative_description": f.negative_description,
                }
                for f in self.factors
            ],
            "scenario": self.scenario,
            "outcome_positive": self.outcome_positive,
            "outcome_negative": self.outcome_negative,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSet":
        return cls(
            factors=tuple(
                Factor(
                    id=f["id"],
                    name=f["name"],
                    positive_description=f["positive_description"],
                    negative_description=f["negative_description"],
                )
                for f in d["factors"]
            ),
            scenario=d["scenario"],
            outcome_positive=d["outcome_positive"],
            outcome_negative=d["outcome_negative"],
        )


@dataclass(frozen=True)
class FactorConfiguration:
    """A full assignment of 0/1 values to all factors."""

    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if any(v not in (0, 1) for v in self.values):
            raise ValidationError(f"configuration bits must be 0 or 1, got {self.values}")

    def __len__(self) -> int:
        return len(self.values)

    def as_bits(self) -> str:
        return "".join(str(v) for v in self.values)

    @classmethod
    def from_bits(cls, bits: str) -> "FactorConfiguration":
        return cls(tuple(int(c) for c in bits))


@dataclass(frozen=True)
class DecisionParams:
    """Logistic model parameters: intercept, main effects, sparse interactions.

    ``gamma`` maps ordered index pairs (i, j) with i < j to coefficients;
    a missing pair means the interaction is exactly zero.
    """

    alpha: float
    beta: tuple[float, ...]
    gamma: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(
            self, "gamma", {(int(i), int(j)): float(v) for (i, j), v in self.gamma.items()}
        )
        n = len(self.beta)
        if not math.isfinite(self.alpha) or not all(math.isfinite(b) for b in self.beta):
            raise ValidationError("alpha and beta must be finite")
        for (i, j), v in self.gamma.items():
            if not (0 <= i < j <= n - 1):
                raise ValidationError(f"gamma key ({i},{j}) violates 0 <= i < j <= {n - 1}")
            if not math.isfinite(v):
                raise ValidationError(f"gamma[{i},{j}] must be finite")
            if v == 0.0:
                raise ValidationError(f"gamma[{i},{j}] is an explicit zero; omit it instead")

    @property
    def n(self) -> int:
        return len(self.beta)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": list(self.beta),
            "gamma": [[i, j, v] for (i, j), v in sorted(self.gamma.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionParams":
        return cls(
            alpha=d["alpha"],
            beta=tuple(d["beta"]),
            gamma={(int(i), int(j)): float(v) for i, j, v in d["gamma"]},
        )


@dataclass(frozen=True)
class FeatureVector:
    """Expanded 0/1 features: intercept, main effects, pairwise products."""

    entries: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(float(e) for e in self.entries))
        if not self.entries or self.entries[0] != 1.0:
            raise ValidationError("first feature entry must be the intercept 1")
        if any(e not in (0.0, 1.0) for e in self.entries):
            raise ValidationError("feature entries must be 0 or 1")


def interaction_pairs(n: int) -> list[tuple[int, int]]:
    """All index pairs (i, j), i < j, in lexicographic order."""
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def feature_dim(n: int) -> int:
    return 1 + n + n * (n - 1) // 2


def expand_features(config: FactorConfiguration, n: int) -> FeatureVector:
    """Expand a configuration into the canonical feature vector.

    Order: intercept, f_1..f_N, then products f_i*f_j for (i, j) lexicographic.
    """
    if len(config) != n:
        raise DimensionError(f"configuration has length {len(config)}, expected {n}")
    f = config.values
    entries = [1.0]
    entries.extend(float(v) for v in f)
    entries.extend(float(f[i] & f[j]) for i, j in interaction_pairs(n))
    return FeatureVector(tuple(entries))


def params_to_vector(params: DecisionParams) -> np.ndarray:
    """Flatten (alpha, beta, gamma) into the canonical dense feature order."""
    n = params.n
    vec = np.zeros(feature_dim(n))
    vec[0] = params.alpha
    vec[1 : 1 + n] = params.beta
    for p, (i, j) in enumerate(interaction_pairs(n)):
        vec[1 + n + p] = params.gamma.get((i, j), 0.0)
    return vec


def params_from_vector(vec: np.ndarray, n: int) -> DecisionParams:
    """Inverse of params_to_vector; exact zeros in gamma are dropped."""
    if len(vec) != feature_dim(n):
        raise DimensionError(f"vector has length {len(vec)}, expected {feature_dim(n)}")
    gamma = {}
    for p, (i, j) in enumerate(interaction_pairs(n)):
        v = float(vec[1 + n + p])
        if v != 0.0:
            gamma[(i, j)] = v
    return DecisionParams(alpha=float(vec[0]), beta=tuple(float(b) for b in vec[1 : 1 + n]), gamma=gamma)


def sigmoid(z):
    """Numerically stable logistic function, scalar or ndarray."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    out = np.log(p) - np.log1p(-p)
    if out.ndim == 0:
        return float(out)
    return out


def logit_of(params: DecisionParams, config: FactorConfiguration) -> float:
    """Log-odds of the positive outcome for one configuration."""
    if len(config) != params.n:
        raise DimensionError(
            f"configuration has length {len(config)}, params expect {params.n}"
        )
    f = config.values
    z = params.alpha
    for j, b in enumerate(params.beta):
        z += b * f[j]
    for (i, j), g in params.gamma.items():
        z += g * (f[i] & f[j])
    return float(z)


_P_MIN = float(np.nextafter(0.0, 1.0))
_P_MAX = float(np.nextafter(1.0, 0.0))


def predict(params: DecisionParams, config: FactorConfiguration) -> float:
    """Probability of the positive outcome; strictly inside (0, 1).

    The sigmoid saturates to exactly 0/1 beyond |z| ~ 37 in float64, so the
    result is clamped to the nearest representable interior value.
    """
    return min(max(sigmoid(logit_of(params, config)), _P_MIN), _P_MAX)


# --- dense enumeration helpers -------------------------------------------
#
# Estimation and editing work over many configurations at once; these build
# numpy matrices in the same canonical feature order as expand_features.


def configs_matrix(configs: list[FactorConfiguration] | np.ndarray, n: int) -> np.ndarray:
    """Stack configurations into a (K, N) float matrix."""
    if isinstance(configs, np.ndarray):
        mat = np.asarray(configs, dtype=float)
        if mat.ndim != 2 or mat.shape[1] != n:
            raise DimensionError(f"config matrix must be (K, {n}), got {mat.shape}")
        return mat
    mat = np.zeros((len(configs), n))
    for k, c in enumerate(configs):
        if len(c) != n:
            raise DimensionError(f"configuration {k} has length {len(c)}, expected {n}")
        mat[k] = c.values
    return mat


def design_matrix(f_mat: np.ndarray) -> np.ndarray:
    """Expand a (K, N) 0/1 matrix into the (K, D) canonical design matrix."""
    K, n = f_mat.shape
    X = np.ones((K, feature_dim(n)))
    X[:, 1 : 1 + n] = f_mat
    for p, (i, j) in enumerate(interaction_pairs(n)):
        X[:, 1 + n + p] = f_mat[:, i] * f_mat[:, j]
    return X


def all_configs(n: int) -> np.ndarray:
    """All 2^n configurations as a (2^n, n) matrix; bit j of row v is (v >> j) & 1."""
    if n > MAX_FACTORS:
        raise ValidationError(f"exhaustive enumeration capped at {MAX_FACTORS} factors")
    v = np.arange(2**n, dtype=np.int64)
    return ((v[:, None] >> np.arange(n)) & 1).astype(float)


def logits_matrix(params: DecisionParams, f_mat: np.ndarray) -> np.ndarray:
    """Logits for many configurations without materializing the design matrix."""
    if f_mat.shape[1] != params.n:
        raise DimensionError(
            f"config matrix has {f_mat.shape[1]} columns, params expect {params.n}"
        )
    z = params.alpha + f_mat @ np.asarray(params.beta)
    for (i, j), g in params.gamma.items():
        z = z + g * (f_mat[:, i] * f_mat[:, j])
    return z
