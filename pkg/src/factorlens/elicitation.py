"""Factor identification: statement generation, extraction, verification loop.

Factors are elicited indirectly: the oracle first writes concrete situational
descriptions for each outcome, and the recurring considerations in those
statements are then distilled into binary factors.  The candidate set is
audited by the oracle itself — per-factor discriminability, pairwise overlap,
and coverage of sample conditions — and repaired (reformulate / discard /
expand) until a full pass makes no change or the iteration cap is reached.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .core import MAX_FACTORS, Factor, FactorSet
from .errors import ElicitationError, ValidationError
from .oracle import PROBE_TEMPERATURE, OracleBackend, ask_oracle, prompt_digest
from .prompts import (
    CHECK_BINARY_SUPPORT,
    CHECK_CONDITION_COVERAGE,
    CHECK_OVERLAPPING_FACTOR,
    DECOMPOSE_QUERY,
    EXPAND_FACTORS,
    EXTRACT_FACTORS,
    GENERATE_STATEMENTS,
    MERGE_FACTORS,
    REFORMULATE_FACTOR,
)

DEFAULT_STATEMENT_COUNT = 20
STATEMENT_RETRY_CAP = 3
VERIFICATION_ITERATION_CAP = 5
DEFAULT_COVERAGE_CONDITIONS = 10  # callers pass their own; this caps how many we use


def _normalize_text(s: str) -> str:
    return re.sub(r"\s+", " ", s).strip().strip(".").casefold()


def _normalize_name(name: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "_", name.strip().casefold()).strip("_")
    return slug


@dataclass(frozen=True)
class StatementBatch:
    """Situational descriptions elicited for one outcome."""

    outcome: str
    statements: tuple[str, ...]
    provenance: tuple[str, ...] = ()  # prompt digests of the elicitation calls

    def __post_init__(self):
        object.__setattr__(self, "statements", tuple(self.statements))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if not self.statements:
            raise ValidationError("statement batch must be non-empty")
        normalized = [_normalize_text(s) for s in self.statements]
        if len(set(normalized)) != len(normalized):
            raise ValidationError("statement batch contains duplicates after normalization")

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "statements": list(self.statements),
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StatementBatch":
        return cls(
            outcome=d["outcome"],
            statements=tuple(d["statements"]),
            provenance=tuple(d.get("provenance", ())),
        )


@dataclass(frozen=True)
class FactorVerdict:
    name: str
    passed: bool
    rationale: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "rationale": self.rationale}


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of the verify-and-repair loop over a candidate factor set."""

    factor_verdicts: tuple[FactorVerdict, ...]
    coverage_passed: bool
    unmapped_units: tuple[str, ...]
    iterations: int
    converged: bool
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.converged:
            if not all(v.passed for v in self.factor_verdicts):
                raise ValidationError("converged report carries failing factor verdicts")
            if not self.coverage_passed:
                raise ValidationError("converged report carries a failing coverage verdict")

    def to_dict(self) -> dict:
        return {
            "factor_verdicts": [v.to_dict() for v in self.factor_verdicts],
            "coverage_passed": self.coverage_passed,
            "unmapped_units": list(self.unmapped_units),
            "iterations": self.iterations,
            "converged": self.converged,
            "notes": list(self.notes),
        }


# --- parsers -----------------------------------------------------------------


def _strip_fences(raw: str) -> str:
    s = raw.strip()
    if s.startswith("```"):
        s = re.sub(r"^```[a-zA-Z]*\n?", "", s)
        s = re.sub(r"\n?```$", "", s)
    return s.strip()


def _parse_numbered_list(raw: str):
    lines = []
    for line in raw.splitlines():
        m = re.match(r"\s*\d+[.)]\s+(.*\S)\s*$", line)
        if m:
            lines.append(m.group(1))
    if not lines:
        return False, None
    return True, lines


def _parse_factor_entry(obj) -> tuple[str, str, str] | None:
    if not isinstance(obj, dict):
        return None
    name = _normalize_name(str(obj.get("name", "")))
    positive = str(obj.get("positive", "")).strip()
    negative = str(obj.get("negative", "")).strip()
    if not name or not positive or not negative or positive == negative:
        return None
    return name, positive, negative


def _parse_factor_array(raw: str):
    try:
        data = json.loads(_strip_fences(raw))
    except json.JSONDecodeError:
        return False, None
    if not isinstance(data, list):
        return False, None
    entries = [_parse_factor_entry(obj) for obj in data]
    if any(e is None for e in entries):
        return False, None
    return True, entries


def _parse_factor_object(raw: str):
    try:
        data = json.loads(_strip_fences(raw))
    except json.JSONDecodeError:
        return False, None
    entry = _parse_factor_entry(data)
    if entry is None:
        return False, None
    return True, entry


def _parse_pass_fail(raw: str):
    s = raw.strip().strip("`\"'").strip()
    low = s.casefold()
    if low == "pass" or low.startswith("pass"):
        return True, (True, "")
    if low.startswith("fail"):
        reason = s.split(":", 1)[1].strip() if ":" in s else ""
        return True, (False, reason)
    return False, None


def _parse_overlap(raw: str):
    s = raw.strip().strip("`\"'").strip()
    low = s.casefold()
    if low.startswith("distinct"):
        return True, (False, "")
    if low.startswith("overlap"):
        reason = s.split(":", 1)[1].strip() if ":" in s else ""
        return True, (True, reason)
    return False, None


def _parse_coverage(raw: str):
    s = raw.strip().strip("`\"'").strip()
    low = s.casefold()
    if low.startswith("covered"):
        return True, (True, ())
    if low.startswith("missing"):
        rest = s.split(":", 1)[1] if ":" in s else ""
        units = tuple(u.strip() for u in rest.split(";") if u.strip())
        return True, (False, units)
    return False, None


def _parse_decomposition(raw: str):
    try:
        data = json.loads(_strip_fences(raw))
    except json.JSONDecodeError:
        return False, None
    keys = ("scenario", "outcome_positive", "outcome_negative", "condition")
    if not isinstance(data, dict) or not all(
        isinstance(data.get(k), str) and data[k].strip() for k in keys
    ):
        return False, None
    return True, {k: data[k].strip() for k in keys}


# --- operations ----------------------------------------------------------------


def decompose_query(backend: OracleBackend, query: str,
                    temperature: float = PROBE_TEMPERATURE) -> dict:
    """Split a free-form decision question into scenario, outcome labels,
    and the instance-specific condition text."""
    prompt = DECOMPOSE_QUERY.render(query=query)
    return ask_oracle(
        backend, prompt, {"query": query}, temperature,
        _parse_decomposition,
        "Your previous reply could not be parsed. Answer with a JSON object "
        'containing exactly the keys "scenario", "outcome_positive", '
        '"outcome_negative", "condition", all non-empty strings.',
    )


def generate_statements(backend: OracleBackend, scenario: str, outcome: str,
                        count: int = DEFAULT_STATEMENT_COUNT,
                        temperature: float = 1.0) -> StatementBatch:
    """Elicit `count` distinct situational descriptions for one outcome.

    Responses are deduplicated by normalized text; shortfalls trigger fresh
    elicitation rounds (up to a retry cap) that merge in only new statements.
    """
    if count < 1:
        raise ValidationError(f"statement count must be >= 1, got {count}")
    collected: list[str] = []
    seen: set[str] = set()
    digests: list[str] = []
    for _ in range(1 + STATEMENT_RETRY_CAP):
        prompt = GENERATE_STATEMENTS.render(
            scenario=scenario, outcome=outcome, count=str(count)
        )
        lines = ask_oracle(
            backend, prompt, {"outcome": outcome, "count": count}, temperature,
            _parse_numbered_list,
            f"Your previous reply could not be parsed. Answer with exactly "
            f'{count} lines, each "<number>. <description>".',
        )
        digests.append(prompt_digest(prompt.text))
        for line in lines:
            key = _normalize_text(line)
            if key not in seen:
                seen.add(key)
                collected.append(line)
        if len(collected) >= count:
            break
    if len(collected) < count:
        raise ElicitationError(
            f"only {len(collected)} distinct statements for outcome {outcome!r} "
            f"after {1 + STATEMENT_RETRY_CAP} rounds (wanted {count})"
        )
    return StatementBatch(
        outcome=outcome,
        statements=tuple(collected[:count]),
        provenance=tuple(digests),
    )


def _factor_lines(factors: list[tuple[str, str, str]]) -> str:
    return "\n".join(
        f"- {name}: 1 = {pos}; 0 = {neg}" for name, pos, neg in factors
    )


def _dedupe_candidates(entries) -> list[tuple[str, str, str]]:
    out, seen = [], set()
    for name, pos, neg in entries:
        if name not in seen:
            seen.add(name)
            out.append((name, pos, neg))
    return out


def _build_factor_set(candidates: list[tuple[str, str, str]], scenario: str,
                      outcome_positive: str, outcome_negative: str) -> FactorSet:
    if not candidates:
        raise ElicitationError("no usable factors were extracted")
    return FactorSet(
        factors=tuple(
            Factor(id=i, name=name, positive_description=pos, negative_description=neg)
            for i, (name, pos, neg) in enumerate(candidates)
        ),
        scenario=scenario,
        outcome_positive=outcome_positive,
        outcome_negative=outcome_negative,
    )


def extract_factors(backend: OracleBackend, scenario: str,
                    positive: StatementBatch, negative: StatementBatch,
                    max_factors: int = MAX_FACTORS,
                    temperature: float = PROBE_TEMPERATURE) -> FactorSet:
    """Distill two statement batches into a candidate binary factor set.

    Candidate names are deduplicated after snake_case normalization; if the
    oracle overshoots max_factors, one merge pass asks it to consolidate, and
    any remaining overflow is truncated so the bound is hard.
    """
    prompt = EXTRACT_FACTORS.render(
        scenario=scenario,
        outcome_positive=positive.outcome,
        outcome_negative=negative.outcome,
        positive_statements="\n".join(f"- {s}" for s in positive.statements),
        negative_statements="\n".join(f"- {s}" for s in negative.statements),
        max_factors=str(max_factors),
    )
    entries = ask_oracle(
        backend, prompt, {"max_factors": max_factors}, temperature,
        _parse_factor_array,
        "Your previous reply could not be parsed. Answer with a JSON array of "
        'objects, each {"name": str, "positive": str, "negative": str}.',
    )
    candidates = _dedupe_candidates(entries)
    if len(candidates) > max_factors:
        merge_prompt = MERGE_FACTORS.render(
            scenario=scenario,
            outcome_positive=positive.outcome,
            outcome_negative=negative.outcome,
            count=str(len(candidates)),
            factor_list=_factor_lines(candidates),
            max_factors=str(max_factors),
        )
        merged = ask_oracle(
            backend, merge_prompt, {"max_factors": max_factors}, temperature,
            _parse_factor_array,
            "Your previous reply could not be parsed. Answer with a JSON array of "
            'objects, each {"name": str, "positive": str, "negative": str}.',
        )
        candidates = _dedupe_candidates(merged)[:max_factors]
    return _build_factor_set(candidates, scenario, positive.outcome, negative.outcome)


def verify_factor_set(backend: OracleBackend, factor_set: FactorSet,
                      sample_conditions: list[str],
                      max_iterations: int = VERIFICATION_ITERATION_CAP,
                      coverage_condition_cap: int = DEFAULT_COVERAGE_CONDITIONS,
                      temperature: float = PROBE_TEMPERATURE,
                      ) -> tuple[VerificationReport, FactorSet]:
    """Audit and repair a factor set until a clean pass or the iteration cap.

    One pass = discriminability check per factor (failures reformulated, or
    discarded if the reformulation collides with an existing name), overlap
    check per pair (the later factor of an overlapping pair is discarded),
    and coverage check per sample condition (unmapped units trigger factor
    expansion).  Convergence is a full pass with zero changes and a passing
    coverage verdict.
    """
    if not sample_conditions:
        raise ValidationError("verification needs at least one sample condition")
    conditions = list(sample_conditions)[:coverage_condition_cap]
    scenario = factor_set.scenario
    out_pos, out_neg = factor_set.outcome_positive, factor_set.outcome_negative
    working = [
        (f.name, f.positive_description, f.negative_description)
        for f in factor_set.factors
    ]
    notes: list[str] = []
    verdicts: list[FactorVerdict] = []
    coverage_passed = False
    unmapped: tuple[str, ...] = ()
    iterations = 0
    converged = False

    for _ in range(max_iterations):
        iterations += 1
        changed = False
        verdicts = []

        # (i) discriminability, with repair
        repaired: list[tuple[str, str, str]] = []
        for name, pos, neg in working:
            passed, reason = ask_oracle(
                backend,
                CHECK_BINARY_SUPPORT.render(
                    scenario=scenario, outcome_positive=out_pos,
                    outcome_negative=out_neg, name=name, positive=pos, negative=neg,
                ),
                {"factor": name}, temperature,
                _parse_pass_fail,
                'Your previous reply could not be parsed. Answer "pass" or '
                '"fail: <short reason>".',
            )
            if passed:
                verdicts.append(FactorVerdict(name, True, "pass"))
                repaired.append((name, pos, neg))
                continue
            changed = True
            replacement = ask_oracle(
                backend,
                REFORMULATE_FACTOR.render(
                    scenario=scenario, outcome_positive=out_pos,
                    outcome_negative=out_neg, name=name, positive=pos,
                    negative=neg, reason=reason or "failed discriminability",
                ),
                {"factor": name}, temperature,
                _parse_factor_object,
                "Your previous reply could not be parsed. Answer with a JSON object "
                '{"name": str, "positive": str, "negative": str}.',
            )
            new_name = replacement[0]
            existing = {n for n, _, _ in repaired} | {
                n for n, _, _ in working if n != name
            }
            if new_name in existing:
                notes.append(f"discarded {name!r}: reformulation collides with {new_name!r}")
                verdicts.append(FactorVerdict(name, False, reason or "discarded"))
            else:
                notes.append(f"reformulated {name!r} -> {new_name!r}: {reason}")
                verdicts.append(FactorVerdict(name, False, reason or "reformulated"))
                repaired.append(replacement)
        working = repaired
        if not working:
            raise ElicitationError("verification discarded every factor")

        # (ii) pairwise overlap: drop the later factor of an overlapping pair
        drop: set[int] = set()
        for a in range(len(working)):
            if a in drop:
                continue
            for b in range(a + 1, len(working)):
                if b in drop:
                    continue
                overlapping, reason = ask_oracle(
                    backend,
                    CHECK_OVERLAPPING_FACTOR.render(
                        scenario=scenario,
                        name_a=working[a][0], positive_a=working[a][1],
                        negative_a=working[a][2],
                        name_b=working[b][0], positive_b=working[b][1],
                        negative_b=working[b][2],
                    ),
                    {"pair": [working[a][0], working[b][0]]}, temperature,
                    _parse_overlap,
                    'Your previous reply could not be parsed. Answer "distinct" or '
                    '"overlap: <short reason>".',
                )
                if overlapping:
                    drop.add(b)
                    changed = True
                    notes.append(
                        f"discarded {working[b][0]!r}: overlaps {working[a][0]!r} ({reason})"
                    )
        if drop:
            working = [w for q, w in enumerate(working) if q not in drop]
        if not working:
            raise ElicitationError("verification discarded every factor")

        # (iii) coverage over the sample conditions, with expansion
        all_missing: list[str] = []
        for condition in conditions:
            covered, units = ask_oracle(
                backend,
                CHECK_CONDITION_COVERAGE.render(
                    scenario=scenario,
                    factor_list=_factor_lines(working),
                    condition=condition,
                ),
                {"condition": condition}, temperature,
                _parse_coverage,
                'Your previous reply could not be parsed. Answer "covered" or '
                '"missing: <unit 1>; <unit 2>; ...".',
            )
            if not covered:
                all_missing.extend(units)
        coverage_passed = not all_missing
        unmapped = tuple(dict.fromkeys(all_missing))
        if all_missing and len(working) < MAX_FACTORS:
            changed = True
            additions = ask_oracle(
                backend,
                EXPAND_FACTORS.render(
                    scenario=scenario, outcome_positive=out_pos,
                    outcome_negative=out_neg,
                    factor_list=_factor_lines(working),
                    missing="; ".join(unmapped),
                ),
                {"missing": list(unmapped)}, temperature,
                _parse_factor_array,
                "Your previous reply could not be parsed. Answer with a JSON array "
                'of objects, each {"name": str, "positive": str, "negative": str}.',
            )
            existing = {n for n, _, _ in working}
            for entry in _dedupe_candidates(additions):
                if entry[0] not in existing and len(working) < MAX_FACTORS:
                    working.append(entry)
                    existing.add(entry[0])
                    notes.append(f"expanded with {entry[0]!r}")

        if not changed:
            if coverage_passed:
                converged = True
            # else: stuck — coverage fails but the factor cap blocks expansion;
            # re-running an identical pass cannot help, so stop unconverged
            break

    revised = _build_factor_set(working, scenario, out_pos, out_neg)
    report = VerificationReport(
        factor_verdicts=tuple(verdicts),
        coverage_passed=coverage_passed,
        unmapped_units=unmapped,
        iterations=iterations,
        converged=converged,
        notes=tuple(notes),
    )
    return report, revised
