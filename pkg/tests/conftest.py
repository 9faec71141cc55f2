"""Shared test fixtures: factor sets and a scripted oracle backend."""

import pytest

from factorlens.core import DecisionParams, Factor, FactorSet
from factorlens.oracle import OracleBackend, SyntheticBackend, SyntheticOracleSpec
from factorlens.verbal import canonical_map


class ScriptedBackend(OracleBackend):
    """Backend answering from a per-template queue (or a responder callable).

    Lets tests drive exact oracle responses, including malformed ones.
    """

    kind = "scripted"

    def __init__(self, script=None, responder=None):
        super().__init__()
        self.script = {k: list(v) for k, v in (script or {}).items()}
        self.responder = responder
        self.asked = []

    def answer(self, prompt, payload, temperature):
        self.asked.append((prompt.template_id, prompt, payload, temperature))
        if self.responder is not None:
            return self.responder(prompt, payload)
        queue = self.script.get(prompt.template_id)
        if not queue:
            raise AssertionError(f"no scripted answer left for {prompt.template_id}")
        item = queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def build_factor_set(n=3, scenario="a loan officer reviews an application"):
    return FactorSet(
        factors=tuple(
            Factor(
                id=i,
                name=f"factor_{i}",
                positive_description=f"condition {i} holds",
                negative_description=f"condition {i} does not hold",
            )
            for i in range(n)
        ),
        scenario=scenario,
        outcome_positive="approve",
        outcome_negative="deny",
    )


def build_synthetic(params=None, vmap=None, **kwargs):
    if params is None:
        params = DecisionParams(alpha=0.0, beta=(1.2, -0.8, 0.5), gamma={(0, 1): 0.6})
    spec = SyntheticOracleSpec(
        true_params=params, true_map=vmap or canonical_map(), **kwargs
    )
    return SyntheticBackend(spec)


@pytest.fixture
def factor_set():
    return build_factor_set(3)
