"""Oracle backends and the low-level query operations built on them.

Three interchangeable backends answer rendered prompts with raw text:

- ``RemoteBackend``   — chat-completion HTTP endpoint (the real oracle);
- ``ReplayBackend``   — answers only from a recorded transcript cache;
- ``SyntheticBackend``— a ground-truth decision model that emits the same
  textual protocol, used for controlled experiments.

The operations in this module (verbal elicitation, joint completion sampling,
factor determination) render prompts, ask a backend, parse the constrained
answer — reprompting once on a parse failure — and append an
``OracleTranscript`` to the backend's audit log.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone

import httpx
import numpy as np

from .core import DecisionParams, FactorConfiguration, FactorSet, predict
from .errors import (
    BackendError,
    CacheMissError,
    ConfigurationError,
    DimensionError,
    ProtocolError,
    ValidationError,
)
from .prompts import (
    BEHAVIORAL_PROBE,
    FACTOR_DETERMINATION,
    MONTE_CARLO_SAMPLING,
    RenderedPrompt,
    describe_configuration,
    describe_factors,
)
from .verbal import LEVEL_LABELS, VerbalLevel, VerbalMap, nearest_level

# Appendix-style defaults: deterministic probing, diverse completion sampling.
PROBE_TEMPERATURE = 0.0
SAMPLING_TEMPERATURE = 1.2

DEFAULT_MAX_TOKENS = 1024

_LEVEL_MENU = ", ".join(LEVEL_LABELS)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def prompt_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class OracleTranscript:
    """One oracle call: what was asked, what came back, how it was read."""

    template_id: str
    prompt: str
    raw_text: str
    parsed: object  # JSON-compatible; None when the response was unparseable
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "template_id": self.template_id,
            "prompt_sha256": prompt_digest(self.prompt),
            "prompt": self.prompt,
            "raw_text": self.raw_text,
            "parsed": self.parsed,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class SyntheticOracleSpec:
    """Ground truth behind the synthetic backend.

    ``label_noise`` is the probability that a probe answer is swapped to an
    adjacent verbal level.  ``completion_correlation`` couples uncertain bits
    during joint sampling: it is the pairwise correlation the sampled bits
    exhibit.  ``determinations`` optionally scripts FACTOR_DETERMINATION
    answers per condition text (factor ids absent from the entry are
    "unknown").
    """

    true_params: DecisionParams
    true_map: VerbalMap
    label_noise: float = 0.0
    completion_correlation: float = 0.0
    rng_seed: int = 0
    determinations: dict[str, dict[int, int]] | None = None

    def __post_init__(self):
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValidationError(f"label_noise must be in [0,1], got {self.label_noise}")
        if not 0.0 <= self.completion_correlation <= 1.0:
            raise ValidationError(
                f"completion_correlation must be in [0,1], got {self.completion_correlation}"
            )
        if self.determinations is not None:
            for cond, table in self.determinations.items():
                for fid, bit in table.items():
                    if bit not in (0, 1):
                        raise ValidationError(
                            f"determination for {cond!r} factor {fid} must be 0 or 1"
                        )

    def to_dict(self) -> dict:
        return {
            "params": self.true_params.to_dict(),
            "map": self.true_map.to_list(),
            "label_noise": self.label_noise,
            "completion_correlation": self.completion_correlation,
            "rng_seed": self.rng_seed,
            "determinations": None if self.determinations is None else {
                cond: {str(fid): bit for fid, bit in table.items()}
                for cond, table in self.determinations.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticOracleSpec":
        det = d.get("determinations")
        return cls(
            true_params=DecisionParams.from_dict(d["params"]),
            true_map=VerbalMap.from_list(d["map"]),
            label_noise=d.get("label_noise", 0.0),
            completion_correlation=d.get("completion_correlation", 0.0),
            rng_seed=d.get("rng_seed", 0),
            determinations=None if det is None else {
                cond: {int(fid): int(bit) for fid, bit in table.items()}
                for cond, table in det.items()
            },
        )


@dataclass(frozen=True)
class RemoteEndpoint:
    """Where and how to reach a chat-completion oracle.

    ``auth_token_env`` names the environment variable holding the token; the
    token itself is read per request and never stored or logged.
    """

    base_url: str
    model: str
    auth_token_env: str = "ORACLE_API_KEY"
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_s: float = 0.5

    def __post_init__(self):
        if not self.base_url:
            raise ConfigurationError("remote endpoint needs a base_url")
        if not self.model:
            raise ConfigurationError("remote endpoint needs a model name")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")


class OracleBackend:
    """Base class: answers rendered prompts, accumulates an audit log.

    ``payload`` carries the structured fields behind the rendered text so the
    synthetic backend can answer without natural-language understanding.
    """

    kind: str = "abstract"

    def __init__(self):
        self._lock = threading.Lock()
        self.transcripts: list[OracleTranscript] = []

    def answer(self, prompt: RenderedPrompt, payload: dict, temperature: float) -> str:
        raise NotImplementedError

    def record(self, transcript: OracleTranscript) -> None:
        with self._lock:
            self.transcripts.append(transcript)


class SyntheticBackend(OracleBackend):
    """Ground-truth oracle speaking the same textual protocol as a real one.

    Per-call RNG streams are derived from (seed, call index), so a run is
    reproducible whenever calls are issued in a deterministic order.
    """

    kind = "synthetic"

    def __init__(self, spec: SyntheticOracleSpec):
        super().__init__()
        self.spec = spec
        self._calls = 0

    def _next_rng(self) -> np.random.Generator:
        with self._lock:
            idx = self._calls
            self._calls += 1
        return np.random.default_rng([self.spec.rng_seed, idx])

    def answer(self, prompt: RenderedPrompt, payload: dict, temperature: float) -> str:
        tid = prompt.template_id
        if tid == BEHAVIORAL_PROBE.id:
            return self._answer_probe(payload)
        if tid == FACTOR_DETERMINATION.id:
            return self._answer_determination(payload)
        if tid == MONTE_CARLO_SAMPLING.id:
            return self._answer_sampling(payload)
        raise BackendError(f"synthetic backend cannot answer template {tid}")

    def _answer_probe(self, payload: dict) -> str:
        config = FactorConfiguration.from_bits(payload["config_bits"])
        p_star = predict(self.spec.true_params, config)
        level = nearest_level(self.spec.true_map, p_star)
        ordinal = level.ordinal
        if self.spec.label_noise > 0.0:
            rng = self._next_rng()
            if rng.random() < self.spec.label_noise:
                neighbors = [o for o in (ordinal - 1, ordinal + 1) if 1 <= o <= 7]
                ordinal = int(neighbors[rng.integers(len(neighbors))])
        return VerbalLevel.from_ordinal(ordinal).label

    def _answer_determination(self, payload: dict) -> str:
        table = (self.spec.determinations or {}).get(payload["condition"], {})
        fid = payload["factor_id"]
        if fid not in table:
            return "unknown"
        return "true" if table[fid] else "false"

    def _answer_sampling(self, payload: dict) -> str:
        n_uncertain = payload["n_uncertain"]
        rng = self._next_rng()
        coin = bool(rng.random() < 0.5)
        # Each bit copies the shared coin with probability sqrt(rho); two bits
        # then agree-through-the-coin with probability rho, which makes rho the
        # realized pairwise correlation (not just a coupling knob).
        copy_p = math.sqrt(self.spec.completion_correlation)
        bits = []
        for _ in range(n_uncertain):
            if rng.random() < copy_p:
                bits.append(coin)
            else:
                bits.append(bool(rng.random() < 0.5))
        return "".join("1" if b else "0" for b in bits)


class ReplayBackend(OracleBackend):
    """Answers solely from a recorded cache; a miss is an error, never a
    silent remote call."""

    kind = "replay"

    def __init__(self, cache_path: str):
        super().__init__()
        self.cache_path = cache_path
        self._cache: dict[tuple[str, str], str] = {}
        if not os.path.exists(cache_path):
            raise ConfigurationError(f"replay cache not found: {cache_path}")
        with open(cache_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._cache[(rec["template_id"], rec["prompt_sha256"])] = rec["raw_text"]

    def answer(self, prompt: RenderedPrompt, payload: dict, temperature: float) -> str:
        key = (prompt.template_id, prompt_digest(prompt.text))
        try:
            return self._cache[key]
        except KeyError:
            raise CacheMissError(
                f"no recorded answer for template {prompt.template_id} "
                f"(prompt sha256 {key[1][:12]}…)"
            ) from None


class RemoteBackend(OracleBackend):
    """Chat-completion HTTP oracle with retries and optional recording."""

    kind = "remote"

    def __init__(self, endpoint: RemoteEndpoint, record_path: str | None = None,
                 transport: httpx.BaseTransport | None = None):
        super().__init__()
        self.endpoint = endpoint
        self.record_path = record_path
        self._client = httpx.Client(
            timeout=endpoint.timeout_s,
            transport=transport,
        )

    def answer(self, prompt: RenderedPrompt, payload: dict, temperature: float) -> str:
        token = os.environ.get(self.endpoint.auth_token_env)
        if not token:
            raise BackendError(
                f"auth token env var {self.endpoint.auth_token_env} is not set"
            )
        body = {
            "model": self.endpoint.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": temperature,
            "max_tokens": DEFAULT_MAX_TOKENS,
        }
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt > 0:
                import time

                time.sleep(self.endpoint.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(
                    url, json=body, headers={"Authorization": f"Bearer {token}"}
                )
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = BackendError(f"oracle returned HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise BackendError(
                    f"oracle returned HTTP {resp.status_code}: {resp.text[:200]}"
                )
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ProtocolError(
                    "malformed chat-completion response", raw_text=resp.text
                ) from exc
            if content is None:
                raise ProtocolError("empty completion content", raw_text=resp.text)
            if self.record_path:
                self._append_record(prompt, content)
            return content
        raise BackendError(
            f"oracle unreachable after {self.endpoint.max_retries + 1} attempts: "
            f"{last_error}"
        )

    def _append_record(self, prompt: RenderedPrompt, raw_text: str) -> None:
        rec = {
            "template_id": prompt.template_id,
            "prompt_sha256": prompt_digest(prompt.text),
            "prompt": prompt.text,
            "raw_text": raw_text,
            "timestamp": _now(),
        }
        with self._lock:
            with open(self.record_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --- parse-or-reprompt plumbing -------------------------------------------


def ask_oracle(backend, prompt: RenderedPrompt, payload: dict, temperature: float,
               parse, retry_hint: str):
    """Ask, parse, reprompt once on failure, and log the transcript.

    ``parse`` maps raw text to (ok, value); the transcript stores the parsed
    value (None when unparseable).
    """
    raw = backend.answer(prompt, payload, temperature)
    ok, value = parse(raw)
    if not ok:
        backend.record(
            OracleTranscript(prompt.template_id, prompt.text, raw, None, _now())
        )
        prompt = RenderedPrompt(
            template_id=prompt.template_id,
            system=prompt.system,
            user=prompt.user + "\n\n" + retry_hint,
        )
        raw = backend.answer(prompt, payload, temperature)
        ok, value = parse(raw)
        if not ok:
            backend.record(
                OracleTranscript(prompt.template_id, prompt.text, raw, None, _now())
            )
            raise ProtocolError(
                f"unparseable {prompt.template_id} response after reprompt",
                raw_text=raw,
            )
    backend.record(
        OracleTranscript(prompt.template_id, prompt.text, raw, _jsonable(value), _now())
    )
    return value


def _jsonable(value):
    if isinstance(value, VerbalLevel):
        return value.label
    return value


def _clean(raw: str) -> str:
    return raw.strip().strip("`\"'").strip().lower()


def _parse_level(raw: str):
    key = _clean(raw)
    if key in LEVEL_LABELS:
        return True, VerbalLevel.from_label(key)
    return False, None


def _parse_tristate(raw: str):
    key = _clean(raw)
    if key in ("true", "false", "unknown"):
        return True, key
    return False, None


def _make_bits_parser(n: int):
    def parse(raw: str):
        s = raw.strip().strip("`\"'").strip()
        if len(s) == n and all(c in "01" for c in s):
            return True, s
        return False, None

    return parse


# --- operations -------------------------------------------------------------


def elicit_verbal(backend: OracleBackend, factor_set: FactorSet,
                  config: FactorConfiguration,
                  temperature: float = PROBE_TEMPERATURE) -> VerbalLevel:
    """Ask the oracle how likely the positive outcome is under one
    fully specified configuration."""
    if len(config) != factor_set.n:
        raise DimensionError(
            f"configuration has length {len(config)}, factor set has {factor_set.n}"
        )
    prompt = BEHAVIORAL_PROBE.render(
        scenario=factor_set.scenario,
        factor_assignments=describe_configuration(factor_set, config),
        outcome_positive=factor_set.outcome_positive,
        outcome_negative=factor_set.outcome_negative,
    )
    payload = {"config_bits": config.as_bits()}
    return ask_oracle(
        backend, prompt, payload, temperature,
        _parse_level,
        f"Your previous reply could not be parsed. Answer with exactly one of: {_LEVEL_MENU}.",
    )


def sample_completion(backend: OracleBackend, factor_set: FactorSet,
                      observed: dict[int, int], condition_text: str,
                      temperature: float = SAMPLING_TEMPERATURE) -> FactorConfiguration:
    """Draw one joint completion of the uncertain factors, conditioned on the
    observed ones and the condition text."""
    n = factor_set.n
    for fid, bit in observed.items():
        if not 0 <= fid < n:
            raise ValidationError(f"observed factor id {fid} out of range 0..{n - 1}")
        if bit not in (0, 1):
            raise ValidationError(f"observed value for factor {fid} must be 0 or 1")
    uncertain = sorted(set(range(n)) - set(observed))
    if not uncertain:
        return FactorConfiguration(tuple(observed[i] for i in range(n)))

    observed_lines = "\n".join(
        f"- {factor_set.factors[i].name}: "
        + (factor_set.factors[i].positive_description if observed[i]
           else factor_set.factors[i].negative_description)
        for i in sorted(observed)
    ) or "(none)"
    uncertain_lines = "\n".join(
        f"- {factor_set.factors[i].name}: 1 = {factor_set.factors[i].positive_description}; "
        f"0 = {factor_set.factors[i].negative_description}"
        for i in uncertain
    )
    prompt = MONTE_CARLO_SAMPLING.render(
        scenario=factor_set.scenario,
        condition=condition_text,
        observed_list=observed_lines,
        uncertain_list=uncertain_lines,
        n_uncertain=str(len(uncertain)),
    )
    payload = {
        "condition": condition_text,
        "observed": {str(k): int(v) for k, v in observed.items()},
        "n_uncertain": len(uncertain),
    }
    bits = ask_oracle(
        backend, prompt, payload, temperature,
        _make_bits_parser(len(uncertain)),
        f"Your previous reply could not be parsed. Answer with exactly "
        f"{len(uncertain)} characters, each 0 or 1, and nothing else.",
    )
    values = [0] * n
    for fid, bit in observed.items():
        values[fid] = bit
    for fid, c in zip(uncertain, bits):
        values[fid] = int(c)
    return FactorConfiguration(tuple(values))


def determine_factor(backend: OracleBackend, factor_set: FactorSet, factor_id: int,
                     condition_text: str,
                     temperature: float = PROBE_TEMPERATURE) -> int | None:
    """Three-way query: does the condition imply the factor is 1, 0, or
    undetermined (None)?"""
    factor = factor_set.factors[factor_id]
    prompt = FACTOR_DETERMINATION.render(
        scenario=factor_set.scenario,
        condition=condition_text,
        name=factor.name,
        positive=factor.positive_description,
        negative=factor.negative_description,
    )
    payload = {"condition": condition_text, "factor_id": factor_id}
    verdict = ask_oracle(
        backend, prompt, payload, temperature,
        _parse_tristate,
        'Your previous reply could not be parsed. Answer with exactly one of: '
        '"true", "false", "unknown".',
    )
    if verdict == "unknown":
        return None
    return 1 if verdict == "true" else 0


def corrupt_labels(dataset, epsilon: float, seed: int):
    """Swap each observation's level to a random adjacent one with
    probability epsilon; configurations untouched, deterministic per seed."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon must be in [0,1], got {epsilon}")
    if epsilon == 0.0:
        return dataset
    from .probing import Observation  # late import to avoid a module cycle

    rng = np.random.default_rng(seed)
    new_obs = []
    for obs in dataset.observations:
        ordinal = obs.level.ordinal
        if rng.random() < epsilon:
            neighbors = [o for o in (ordinal - 1, ordinal + 1) if 1 <= o <= 7]
            ordinal = int(neighbors[rng.integers(len(neighbors))])
        new_obs.append(Observation(config=obs.config, level=VerbalLevel.from_ordinal(ordinal)))
    return dataset.with_observations(
        tuple(new_obs), note=f"labels corrupted: epsilon={epsilon} seed={seed}"
    )


def audit_transcripts(transcripts: list[OracleTranscript]) -> list[str]:
    """Check each transcript's parsed value against its raw text.

    Returns a list of human-readable inconsistencies (empty = clean).  Only
    templates with context-free answer formats are checked.
    """
    problems = []
    for i, t in enumerate(transcripts):
        if t.parsed is None:
            continue
        if t.template_id == BEHAVIORAL_PROBE.id:
            ok, level = _parse_level(t.raw_text)
            if not ok or level.label != t.parsed:
                problems.append(f"transcript {i}: probe parsed {t.parsed!r} vs raw {t.raw_text!r}")
        elif t.template_id == FACTOR_DETERMINATION.id:
            ok, verdict = _parse_tristate(t.raw_text)
            if not ok or verdict != t.parsed:
                problems.append(
                    f"transcript {i}: determination parsed {t.parsed!r} vs raw {t.raw_text!r}"
                )
        elif t.template_id == MONTE_CARLO_SAMPLING.id:
            s = t.raw_text.strip().strip("`\"'").strip()
            if s != t.parsed or not all(c in "01" for c in s):
                problems.append(
                    f"transcript {i}: completion parsed {t.parsed!r} vs raw {t.raw_text!r}"
                )
    return problems


def make_backend(kind: str, *, endpoint: RemoteEndpoint | None = None,
                 cache_path: str | None = None,
                 synthetic_spec: SyntheticOracleSpec | None = None,
                 record_path: str | None = None) -> OracleBackend:
    """Construct a backend from exactly one kind's configuration."""
    if kind == "remote":
        if endpoint is None:
            raise ConfigurationError("remote backend needs an endpoint")
        return RemoteBackend(endpoint, record_path=record_path)
    if kind == "replay":
        if cache_path is None:
            raise ConfigurationError("replay backend needs a cache path")
        return ReplayBackend(cache_path)
    if kind == "synthetic":
        if synthetic_spec is None:
            raise ConfigurationError("synthetic backend needs a SyntheticOracleSpec")
        return SyntheticBackend(synthetic_spec)
    raise ConfigurationError(f"unknown backend kind {kind!r}")
