"""Prompt templates for every oracle interaction.

Each template has a stable id (used to key replay caches and transcripts), a
system instruction, and a user text with named placeholders.  Answers are
deliberately constrained — a single label, a bit string, or a small JSON
document — so that parsing is an exact-match affair rather than free-text
interpretation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .verbal import LEVEL_LABELS


@dataclass(frozen=True)
class RenderedPrompt:
    """A template instantiated with concrete field values."""

    template_id: str
    system: str
    user: str

    @property
    def text(self) -> str:
        """Single-string form used for hashing and transcripts."""
        return f"[system]\n{self.system}\n[user]\n{self.user}"


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    system: str
    user: str

    def render(self, **fields: str) -> RenderedPrompt:
        try:
            return RenderedPrompt(
                template_id=self.id,
                system=self.system,
                user=self.user.format(**fields),
            )
        except (KeyError, IndexError) as exc:
            raise ConfigurationError(
                f"template {self.id}: missing or bad field {exc}"
            ) from exc


_LEVEL_MENU = ", ".join(LEVEL_LABELS)

DECOMPOSE_QUERY = PromptTemplate(
    id="DECOMPOSE_QUERY",
    system=(
        "You split a decision question into its reusable scenario and its "
        "instance-specific condition. Respond with JSON only."
    ),
    user=(
        "Decision question:\n{query}\n\n"
        "Identify (1) the general decision scenario, (2) the label of the positive "
        "outcome, (3) the label of the negative outcome, and (4) the condition text "
        "describing this specific instance.\n"
        'Answer with a JSON object: {{"scenario": str, "outcome_positive": str, '
        '"outcome_negative": str, "condition": str}}'
    ),
)

GENERATE_STATEMENTS = PromptTemplate(
    id="GENERATE_STATEMENTS",
    system=(
        "You produce comprehensive situational descriptions for a decision "
        "scenario. Respond with a numbered list only."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Target outcome: {outcome}\n\n"
        "Write {count} distinct, concrete situational descriptions under which the "
        "outcome above is the natural decision. Cover different circumstances; do "
        "not repeat yourself. Answer with exactly {count} lines, each formatted as "
        '"<number>. <description>".'
    ),
)

EXTRACT_FACTORS = PromptTemplate(
    id="EXTRACT_FACTORS",
    system=(
        "You distill situational descriptions into binary decision factors. "
        "Respond with JSON only."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Outcomes: {outcome_positive} (positive) vs {outcome_negative} (negative).\n\n"
        "Descriptions supporting the positive outcome:\n{positive_statements}\n\n"
        "Descriptions supporting the negative outcome:\n{negative_statements}\n\n"
        "Summarize the recurring decision factors as binary variables. Each factor "
        "needs a short snake_case name, a description of what value 1 means, and a "
        "description of what value 0 means. At most {max_factors} factors.\n"
        'Answer with a JSON array of objects: [{{"name": str, "positive": str, '
        '"negative": str}}, ...]'
    ),
)

CHECK_BINARY_SUPPORT = PromptTemplate(
    id="CHECK_BINARY_SUPPORT",
    system=(
        "You audit a candidate decision factor. Respond with exactly one line."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Outcomes: {outcome_positive} vs {outcome_negative}.\n"
        "Factor: {name}\n  value 1 means: {positive}\n  value 0 means: {negative}\n\n"
        "Do the two values of this factor differentially support the two outcomes, "
        "and is the factor genuinely binary (no middle ground needed)?\n"
        'Answer "pass" if so, otherwise "fail: <short reason>".'
    ),
)

CHECK_OVERLAPPING_FACTOR = PromptTemplate(
    id="CHECK_OVERLAPPING_FACTOR",
    system=(
        "You audit a pair of decision factors for redundancy. Respond with "
        "exactly one line."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Factor A: {name_a} (1: {positive_a} / 0: {negative_a})\n"
        "Factor B: {name_b} (1: {positive_b} / 0: {negative_b})\n\n"
        "Do these two factors capture essentially the same information?\n"
        'Answer "distinct" if they are independent considerations, otherwise '
        '"overlap: <short reason>".'
    ),
)

CHECK_CONDITION_COVERAGE = PromptTemplate(
    id="CHECK_CONDITION_COVERAGE",
    system=(
        "You audit whether a factor list covers the decision-relevant content "
        "of a condition. Respond with exactly one line."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Factors:\n{factor_list}\n\n"
        "Condition: {condition}\n\n"
        "Does every decision-relevant piece of information in the condition map to "
        "one of the factors?\n"
        'Answer "covered" if so, otherwise "missing: <unit 1>; <unit 2>; ..." '
        "listing each unmapped piece of information."
    ),
)

REFORMULATE_FACTOR = PromptTemplate(
    id="REFORMULATE_FACTOR",
    system=(
        "You repair a decision factor that failed an audit. Respond with JSON only."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Outcomes: {outcome_positive} vs {outcome_negative}.\n"
        "Factor that failed: {name}\n  value 1 means: {positive}\n"
        "  value 0 means: {negative}\n"
        "Audit finding: {reason}\n\n"
        "Rewrite the factor so it is genuinely binary and its values "
        "differentially support the two outcomes, keeping its intent.\n"
        'Answer with a JSON object: {{"name": str, "positive": str, "negative": str}}'
    ),
)

MERGE_FACTORS = PromptTemplate(
    id="MERGE_FACTORS",
    system=(
        "You consolidate an overlong list of decision factors. Respond with "
        "JSON only."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Outcomes: {outcome_positive} vs {outcome_negative}.\n"
        "Candidate factors ({count} total, too many):\n{factor_list}\n\n"
        "Merge related candidates so that at most {max_factors} factors remain, "
        "preserving the distinct considerations.\n"
        'Answer with a JSON array of objects: [{{"name": str, "positive": str, '
        '"negative": str}}, ...]'
    ),
)

EXPAND_FACTORS = PromptTemplate(
    id="EXPAND_FACTORS",
    system=(
        "You add decision factors to cover information the current list misses. "
        "Respond with JSON only."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Outcomes: {outcome_positive} vs {outcome_negative}.\n"
        "Current factors:\n{factor_list}\n\n"
        "Unmapped information: {missing}\n\n"
        "Propose new binary factors covering the unmapped information, in the same "
        "shape as the current ones.\n"
        'Answer with a JSON array of objects: [{{"name": str, "positive": str, '
        '"negative": str}}, ...]'
    ),
)

FACTOR_DETERMINATION = PromptTemplate(
    id="FACTOR_DETERMINATION",
    system=(
        "You read a condition and decide what it implies about one binary "
        "factor. Respond with exactly one word."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Condition: {condition}\n\n"
        "Factor: {name}\n  value 1 means: {positive}\n  value 0 means: {negative}\n\n"
        "Does the condition determine this factor's value?\n"
        'Answer with exactly one of: "true" (condition implies value 1), '
        '"false" (condition implies value 0), "unknown" (condition does not '
        "determine it)."
    ),
)

MONTE_CARLO_SAMPLING = PromptTemplate(
    id="MONTE_CARLO_SAMPLING",
    system=(
        "You imagine one plausible completion of a partially described "
        "situation. Respond with a bit string only."
    ),
    user=(
        "Decision scenario: {scenario}\n"
        "Condition: {condition}\n\n"
        "Known factor values:\n{observed_list}\n\n"
        "Unknown factors, in order:\n{uncertain_list}\n\n"
        "Imagine one concrete, internally consistent situation matching the "
        "condition and the known values, then read off the unknown factors. "
        "Answer with exactly {n_uncertain} characters, each 0 or 1, giving the "
        "unknown factors' values in the order listed."
    ),
)

BEHAVIORAL_PROBE = PromptTemplate(
    id="BEHAVIORAL_PROBE",
    system=(
        "You assess how likely an outcome is in a fully described hypothetical "
        "situation. Respond with exactly one verbal likelihood label."
    ),
    user=(
        "Decision scenario: {scenario}\n\n"
        "Hypothetical situation:\n{factor_assignments}\n\n"
        "How likely is the outcome \"{outcome_positive}\" (as opposed to "
        "\"{outcome_negative}\") in this situation?\n"
        f"Answer with exactly one of: {_LEVEL_MENU}."
    ),
)

ALL_TEMPLATES: dict[str, PromptTemplate] = {
    t.id: t
    for t in (
        DECOMPOSE_QUERY,
        GENERATE_STATEMENTS,
        EXTRACT_FACTORS,
        CHECK_BINARY_SUPPORT,
        CHECK_OVERLAPPING_FACTOR,
        CHECK_CONDITION_COVERAGE,
        REFORMULATE_FACTOR,
        EXPAND_FACTORS,
        FACTOR_DETERMINATION,
        MONTE_CARLO_SAMPLING,
        BEHAVIORAL_PROBE,
    )
}


def describe_configuration(factor_set, config) -> str:
    """Human-readable factor assignment lines for probe prompts."""
    lines = []
    for factor, bit in zip(factor_set.factors, config.values):
        desc = factor.positive_description if bit else factor.negative_description
        lines.append(f"- {factor.name}: {desc}")
    return "\n".join(lines)


def describe_factors(factor_set) -> str:
    return "\n".join(
        f"- {f.name}: 1 = {f.positive_description}; 0 = {f.negative_description}"
        for f in factor_set.factors
    )
