"""Seven-level verbal probability scale and the learnable calibration map.

The oracle answers probes with ordinal verbal expressions; the calibration
map phi assigns each level a numerical probability.  The map is re-estimated
during fitting and projected back into per-level bands so that learned values
can never invert the ordinal meaning of the scale (e.g. "likely" ending up
below "unlikely").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import logit
from .errors import ConfigurationError, ValidationError

LEVEL_LABELS: tuple[str, ...] = (
    "very unlikely",
    "unlikely",
    "somewhat unlikely",
    "neutral",
    "somewhat likely",
    "likely",
    "very likely",
)

N_LEVELS = 7

# Minimum spacing between adjacent map values after monotone projection.
# Ties would make the map non-invertible across levels.
MIN_GAP = 1e-3

# How far adjacent bounds bands may overlap before the bounds are rejected
# as ill-formed.  Default bands are disjoint; custom bands may overlap a
# little and the projection repairs the ordering.
OVERLAP_TOLERANCE = 0.05


@dataclass(frozen=True)
class VerbalLevel:
    """One rung of the ordinal scale, ordinal 1 (very unlikely) .. 7 (very likely)."""

    ordinal: int
    label: str

    def __post_init__(self):
        if not 1 <= self.ordinal <= N_LEVELS:
            raise ValidationError(f"ordinal must be 1..{N_LEVELS}, got {self.ordinal}")
        if self.label != LEVEL_LABELS[self.ordinal - 1]:
            raise ValidationError(
                f"ordinal {self.ordinal} must carry label "
                f"{LEVEL_LABELS[self.ordinal - 1]!r}, got {self.label!r}"
            )

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "VerbalLevel":
        if not 1 <= ordinal <= N_LEVELS:
            raise ValidationError(f"ordinal must be 1..{N_LEVELS}, got {ordinal}")
        return cls(ordinal=ordinal, label=LEVEL_LABELS[ordinal - 1])

    @classmethod
    def from_label(cls, label: str) -> "VerbalLevel":
        key = label.strip().lower()
        if key not in LEVEL_LABELS:
            raise ValidationError(f"unknown verbal level {label!r}")
        return cls(ordinal=LEVEL_LABELS.index(key) + 1, label=key)


ALL_LEVELS: tuple[VerbalLevel, ...] = tuple(
    VerbalLevel.from_ordinal(m) for m in range(1, N_LEVELS + 1)
)


@dataclass(frozen=True)
class VerbalMap:
    """Numerical probability assigned to each verbal level, strictly increasing."""

    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != N_LEVELS:
            raise ValidationError(f"map must have {N_LEVELS} values, got {len(self.values)}")
        if any(not 0.0 < v < 1.0 for v in self.values):
            raise ValidationError(f"map values must lie strictly in (0,1): {self.values}")
        for a, b in zip(self.values, self.values[1:]):
            if not a < b:
                raise ValidationError(f"map values must be strictly increasing: {self.values}")

    def value(self, level: VerbalLevel) -> float:
        return self.values[level.ordinal - 1]

    def to_list(self) -> list[float]:
        return list(self.values)

    @classmethod
    def from_list(cls, values) -> "VerbalMap":
        return cls(tuple(values))


@dataclass(frozen=True)
class MonotoneBounds:
    """Per-level [lower, upper] bands that learned map values must stay inside.

    Bands must themselves step upward (each bound at least MIN_GAP above its
    predecessor) so that projecting into them can always restore a strictly
    increasing map, and may overlap at most OVERLAP_TOLERANCE.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        lo, hi = self.lower, self.upper
        if len(lo) != N_LEVELS or len(hi) != N_LEVELS:
            raise ConfigurationError("bounds must have 7 lower and 7 upper values")
        if any(not 0.0 < v < 1.0 for v in lo + hi):
            raise ConfigurationError("bounds must lie strictly in (0,1)")
        for m in range(N_LEVELS):
            if not lo[m] < hi[m]:
                raise ConfigurationError(f"lower[{m}] must be < upper[{m}]")
        for m in range(N_LEVELS - 1):
            if lo[m] + MIN_GAP > lo[m + 1] or hi[m] + MIN_GAP > hi[m + 1]:
                raise ConfigurationError(
                    "bounds must step upward by at least the minimum gap at each level"
                )
            if hi[m] - lo[m + 1] > OVERLAP_TOLERANCE:
                raise ConfigurationError(
                    f"bands {m} and {m + 1} overlap by more than {OVERLAP_TOLERANCE}"
                )


def canonical_map() -> VerbalMap:
    """The standard verbal-to-probability assignment used for initialization."""
    return VerbalMap((0.05, 0.15, 0.30, 0.50, 0.70, 0.85, 0.95))


def default_bounds() -> MonotoneBounds:
    """Bands of half-width 0.02 around the canonical values, truncated so
    adjacent bands stay disjoint (split at the midpoint, MIN_GAP apart).

    The half-width controls how far the EM may recalibrate each level away
    from its canonical anchor.  On noise-free quantized data the joint
    update drifts every level toward the global mean (the fitted model's
    level-conditional means are compression-biased, and the map chases
    them), so wide bands let the fit walk away from a well-recovered
    initialization; 0.02 keeps that drift within the recovery tolerance
    while still absorbing genuine per-level miscalibration.
    """
    c = canonical_map().values
    half = 0.02
    lower, upper = [], []
    for m in range(N_LEVELS):
        lo = c[m] - half
        hi = c[m] + half
        if m > 0:
            lo = max(lo, (c[m - 1] + c[m]) / 2.0 + MIN_GAP)
        else:
            lo = max(lo, MIN_GAP)
        if m < N_LEVELS - 1:
            hi = min(hi, (c[m] + c[m + 1]) / 2.0 - MIN_GAP)
        else:
            hi = min(hi, 1.0 - MIN_GAP)
        lower.append(round(lo, 6))
        upper.append(round(hi, 6))
    return MonotoneBounds(tuple(lower), tuple(upper))


def enforce_monotone(candidate, bounds: MonotoneBounds) -> VerbalMap:
    """Project candidate map values into the bounds, keeping strict order.

    Each value is clipped to its own band; a forward pass then lifts any value
    that still sits within MIN_GAP of its predecessor (only possible when
    bands overlap).  Values already inside their band and in order are left
    untouched.  The bounds' stepping invariant guarantees the repaired value
    stays inside its band, and the whole operation is idempotent.
    """
    vals = [float(v) for v in (candidate.values if isinstance(candidate, VerbalMap) else candidate)]
    if len(vals) != N_LEVELS:
        raise ValidationError(f"candidate must have {N_LEVELS} values, got {len(vals)}")
    if any(not 0.0 < v < 1.0 for v in vals):
        raise ValidationError(f"candidate values must lie in (0,1): {vals}")
    out = []
    for m in range(N_LEVELS):
        v = min(max(vals[m], bounds.lower[m]), bounds.upper[m])
        if m > 0 and v < out[-1] + MIN_GAP:
            v = min(out[-1] + MIN_GAP, bounds.upper[m])
        out.append(v)
    return VerbalMap(tuple(out))


def verbal_to_logit(vmap: VerbalMap, level: VerbalLevel) -> float:
    """Log-odds of the probability the map assigns to a level."""
    return logit(vmap.value(level))


def verbal_logits(vmap: VerbalMap, ordinals: np.ndarray) -> np.ndarray:
    """Vectorized verbal_to_logit over an array of 1-based ordinals."""
    ordinals = np.asarray(ordinals, dtype=int)
    if ordinals.size and (ordinals.min() < 1 or ordinals.max() > N_LEVELS):
        raise ValidationError("ordinals must be in 1..7")
    table = logit(np.array(vmap.values))
    return table[ordinals - 1]


def nearest_level(vmap: VerbalMap, p: float) -> VerbalLevel:
    """Level whose mapped probability is closest to p; ties go to the lower ordinal."""
    diffs = [abs(p - v) for v in vmap.values]
    return ALL_LEVELS[int(np.argmin(diffs))]
