"""Command-line pipeline driver.

Every command resolves its inputs from the artifact store (or flags), runs
one pipeline stage, files its outputs back into the store, and records a
RunManifest — command, fully-resolved configuration, input and output hashes
— so any run can be replayed and checked against the same store byte for
byte (`factorlens replay <manifest>`).

Exit codes: 0 success, 1 usage, 2 validation (bad inputs, broken invariants,
store problems), 3 oracle backend failure, 4 solver non-convergence.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone

import click

from .core import MAX_FACTORS, FactorSet
from .editing import (
    RatioConstraint,
    average_marginal_effect,
    calibrate_ratio,
    exclude_factor,
)
from .elicitation import (
    DEFAULT_STATEMENT_COUNT,
    decompose_query,
    extract_factors,
    generate_statements,
    verify_factor_set,
)
from .em import ABLATIONS, EmConfig, TrainedModel
from .em import fit as fit_model
from .errors import (
    BackendError,
    ConfigurationError,
    FactorLensError,
    NumericalError,
    SolverNonConvergenceError,
    ValidationError,
)
from .inference import DEFAULT_SAMPLES, INFERENCE_ABLATIONS
from .inference import infer as infer_probability
from .oracle import (
    PROBE_TEMPERATURE,
    SAMPLING_TEMPERATURE,
    RemoteEndpoint,
    SyntheticOracleSpec,
    make_backend,
)
from .probing import (
    DEFAULT_BUDGET,
    BehavioralDataset,
    collect_dataset,
    ordinal_consistency_audit,
    plan_configurations,
)
from .store import ArtifactStore
from .verbal import LEVEL_LABELS


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to re-run one command against the same store."""

    command: str
    config: dict
    inputs: dict
    outputs: dict
    seed: int | None
    wall_time_s: float
    created_at: str

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "wall_time_s": self.wall_time_s,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        try:
            return cls(**{k: d[k] for k in (
                "command", "config", "inputs", "outputs", "seed",
                "wall_time_s", "created_at",
            )})
        except KeyError as err:
            raise ValidationError(f"run manifest is missing {err}") from err


# --- oracle construction ------------------------------------------------------


def _oracle_options(fn):
    fn = click.option(
        "--record", type=click.Path(dir_okay=False), default=None,
        help="JSONL file where remote answers are recorded for later replay.")(fn)
    fn = click.option(
        "--token-env", default="ORACLE_API_KEY", show_default=True,
        help="Name of the environment variable holding the remote auth token.")(fn)
    fn = click.option(
        "--model-name", default=None,
        help="Model identifier sent to the remote chat-completion endpoint.")(fn)
    fn = click.option(
        "--base-url", default=None,
        help="Base URL of the remote chat-completion endpoint.")(fn)
    fn = click.option(
        "--cache", type=click.Path(exists=True, dir_okay=False), default=None,
        help="Recorded-answer JSONL consumed by the replay backend.")(fn)
    fn = click.option(
        "--synthetic-spec", type=click.Path(exists=True, dir_okay=False), default=None,
        help="JSON file holding the synthetic oracle's ground truth.")(fn)
    fn = click.option(
        "--backend", type=click.Choice(["synthetic", "remote", "replay"]),
        default="synthetic", show_default=True, help="Which oracle to query.")(fn)
    return fn


def _oracle_config(backend, synthetic_spec, cache, base_url, model_name,
                   token_env, record) -> dict:
    """Flatten backend flags into a self-contained, manifest-safe dict.

    The synthetic ground truth is embedded (not referenced by path) so a
    manifest replays identically even if the spec file later changes.
    """
    cfg = {"backend": backend}
    if backend == "synthetic":
        if synthetic_spec is None:
            raise ConfigurationError(
                "synthetic backend needs --synthetic-spec pointing at a ground-truth JSON"
            )
        with open(synthetic_spec, encoding="utf-8") as fh:
            spec = json.load(fh)
        SyntheticOracleSpec.from_dict(spec)  # validate before embedding
        cfg["spec"] = spec
    elif backend == "replay":
        if cache is None:
            raise ConfigurationError("replay backend needs --cache")
        cfg["cache"] = cache
    else:
        if not base_url or not model_name:
            raise ConfigurationError(
                "remote backend needs --base-url and --model-name"
            )
        cfg.update(base_url=base_url, model=model_name, token_env=token_env,
                   record=record)
    return cfg


def _build_backend(cfg: dict):
    kind = cfg["backend"]
    if kind == "synthetic":
        return make_backend(
            "synthetic", synthetic_spec=SyntheticOracleSpec.from_dict(cfg["spec"])
        )
    if kind == "replay":
        return make_backend("replay", cache_path=cfg["cache"])
    endpoint = RemoteEndpoint(
        base_url=cfg["base_url"], model=cfg["model"], auth_token_env=cfg["token_env"]
    )
    return make_backend("remote", endpoint=endpoint, record_path=cfg.get("record"))


def _save_transcripts(store: ArtifactStore, backend) -> str:
    return store.save(
        "transcripts",
        {"transcripts": [t.to_dict() for t in backend.transcripts]},
    )


# --- command bodies -----------------------------------------------------------
# Each runner takes (store, config) and returns (inputs, outputs, summary).
# Runners resolve store references and write the resolved hash back into the
# config dict, so the recorded manifest pins exact artifacts, never "latest".


def _load(store, kind, config, key):
    envelope = store.load(kind, config[key])
    config[key] = envelope.content_hash
    return envelope


def _run_elicit(store: ArtifactStore, config: dict):
    backend = _build_backend(config["oracle"])
    conditions = list(config["conditions"])
    if config["query"]:
        decomposition = decompose_query(backend, config["query"])
        scenario = decomposition["scenario"]
        positive_outcome = decomposition["outcome_positive"]
        negative_outcome = decomposition["outcome_negative"]
        if decomposition.get("condition"):
            conditions.append(decomposition["condition"])
    else:
        scenario = config["scenario"]
        positive_outcome = config["outcome_positive"]
        negative_outcome = config["outcome_negative"]

    positive = generate_statements(backend, scenario, positive_outcome,
                                   count=config["statements"])
    negative = generate_statements(backend, scenario, negative_outcome,
                                   count=config["statements"])
    factor_set = extract_factors(backend, scenario, positive, negative,
                                 max_factors=config["max_factors"])
    text = [f"extracted {factor_set.n} factors: {', '.join(factor_set.names())}"]
    verification = None
    if config["verify"] and conditions:
        report, factor_set = verify_factor_set(backend, factor_set, conditions)
        verification = report.to_dict()
        text.append(
            f"verification: {report.iterations} pass(es), "
            f"{'converged' if report.converged else 'NOT converged'}, "
            f"{factor_set.n} factors survive"
        )
    elif config["verify"]:
        text.append("verification skipped: no --condition given to check coverage")

    outputs = {
        "factors": store.save("factors", factor_set.to_dict()),
        "transcripts": _save_transcripts(store, backend),
    }
    summary = {
        "factors": factor_set.names(),
        "verification": verification,
        "text": text,
    }
    return {}, outputs, summary


def _run_probe(store: ArtifactStore, config: dict):
    envelope = _load(store, "factors", config, "factors")
    factor_set = FactorSet.from_dict(envelope.payload)
    backend = _build_backend(config["oracle"])
    plan = plan_configurations(factor_set.n, budget=config["budget"],
                               seed=config["seed"])
    dataset = collect_dataset(backend, factor_set, plan,
                              temperature=config["temperature"],
                              parallelism=config["parallelism"])
    outputs = {
        "dataset": store.save("datasets", dataset.to_dict()),
        "transcripts": _save_transcripts(store, backend),
    }
    summary = {
        "observations": dataset.size,
        "plan_mode": plan.mode,
        "text": [
            f"probed {dataset.size} configurations ({plan.mode}) "
            f"over N={factor_set.n} factors"
        ],
    }
    return {"factors": envelope.content_hash}, outputs, summary


def _run_fit(store: ArtifactStore, config: dict):
    envelope = _load(store, "datasets", config, "dataset")
    dataset = BehavioralDataset.from_dict(envelope.payload)
    em_config = EmConfig(
        sigma_theta_sq=config["sigma_theta_sq"],
        sigma_phi_sq=config["sigma_phi_sq"],
        lambda1=config["lambda1"],
        lambda2=config["lambda2"],
        lambda_mr=config["lambda_mr"],
        margin_eps=config["margin_eps"],
        learning_rate=config["learning_rate"],
        inner_steps=config["inner_steps"],
        convergence_tol=config["convergence_tol"],
        max_iters=config["max_iters"],
        seed=config["seed"],
    )
    model = fit_model(dataset, em_config, ablation=config["ablation"])
    diag = model.diagnostics
    outputs = {"model": store.save("models", model.to_dict())}
    summary = {
        "converged": diag["converged"],
        "iterations": diag["iterations"],
        "marginal_log_likelihood": diag["marginal_log_likelihood"],
        "text": [
            f"fit {'converged' if diag['converged'] else 'did NOT converge'} "
            f"in {diag['iterations']} iteration(s) on {dataset.size} observations"
        ],
    }
    return {"dataset": envelope.content_hash}, outputs, summary


def _run_infer(store: ArtifactStore, config: dict):
    envelope = _load(store, "models", config, "model")
    model = TrainedModel.from_dict(envelope.payload)
    backend = _build_backend(config["oracle"])
    result = infer_probability(model, backend, config["condition"], t=config["t"],
                   temperature=config["temperature"], ablation=config["ablation"],
                   seed=config["seed"])
    outputs = {
        "inference": store.save("inferences", result.to_dict()),
        "transcripts": _save_transcripts(store, backend),
    }
    se = result.standard_error
    summary = {
        "probability": result.probability,
        "standard_error": se,
        "samples_used": result.samples_used,
        "uncertain_factors": sorted(result.partition.uncertain),
        "text": [
            f"P(positive) = {result.probability:.4f}"
            + (f" ± {se:.4f}" if se is not None else "")
            + f" ({result.samples_used} sample(s), "
              f"{len(result.partition.uncertain)} uncertain factor(s))"
        ],
    }
    return {"model": envelope.content_hash}, outputs, summary


def _run_edit(store: ArtifactStore, config: dict):
    envelope = _load(store, "models", config, "model")
    model = TrainedModel.from_dict(envelope.payload)
    operation = config["operation"]
    if operation["kind"] == "exclude":
        edited, record = exclude_factor(model, operation["factor"],
                                        author=config["author"])
    else:
        constraint = RatioConstraint(
            anchor=operation["anchor"], target=operation["target"],
            rho=operation["rho"],
        )
        edited, record = calibrate_ratio(model, constraint, author=config["author"])
    outputs = {
        "model": store.save("models", edited.to_dict()),
        "edit": store.save("edits", record.to_dict()),
    }
    summary = {
        "edit_id": record.edit_id,
        "kind": record.kind,
        "constraint_residuals": record.constraint_residuals,
        "side_effect": record.side_effect,
        "text": [
            f"{record.kind} edit {record.edit_id} applied "
            f"(side effect {record.side_effect:.3e})",
            "residuals: " + ", ".join(
                f"{k}={v:.3e}" for k, v in record.constraint_residuals.items()
            ),
        ],
    }
    return {"model": envelope.content_hash}, outputs, summary


def _parse_direction(direction: str | None, n: int) -> list[int] | None:
    if direction is None:
        return None
    if len(direction) != n or set(direction) - {"+", "-"}:
        raise ValidationError(
            f"--direction must be {n} characters of '+'/'-', got {direction!r}"
        )
    return [1 if ch == "+" else -1 for ch in direction]


def _run_audit(store: ArtifactStore, config: dict):
    envelope = _load(store, "datasets", config, "dataset")
    dataset = BehavioralDataset.from_dict(envelope.payload)
    signs = _parse_direction(config["direction"], dataset.n)
    result = ordinal_consistency_audit(dataset, signs)
    outputs = {"audit": store.save("audits", result.to_dict())}
    if result.empty:
        line = "no comparable dominance pairs; consistency ratio undefined"
    else:
        line = (
            f"ordinal consistency {result.ratio:.1%} "
            f"({result.consistent_pairs}/{result.comparable_pairs} dominance pairs)"
        )
    summary = {
        "ratio": result.ratio,
        "comparable_pairs": result.comparable_pairs,
        "consistent_pairs": result.consistent_pairs,
        "violations": len(result.violations),
        "text": [line],
    }
    return {"dataset": envelope.content_hash}, outputs, summary


def model_card(model: TrainedModel, version_hash: str | None = None) -> dict:
    """Everything an expert reviews at a glance, as plain data."""
    params = model.params
    return {
        "version": version_hash,
        "n": model.factor_set.n,
        "scenario": model.factor_set.scenario,
        "outcomes": {
            "positive": model.factor_set.outcome_positive,
            "negative": model.factor_set.outcome_negative,
        },
        "alpha": params.alpha,
        "factors": [
            {
                "id": f.id,
                "name": f.name,
                "beta": params.beta[f.id],
                "ame": average_marginal_effect(params, f.id),
            }
            for f in model.factor_set.factors
        ],
        "gamma": [
            {"pair": list(pair), "value": value}
            for pair, value in sorted(params.gamma.items())
        ],
        "map": {
            label: value for label, value in zip(LEVEL_LABELS, model.map.values)
        },
        "diagnostics": model.diagnostics,
        "edits": len(model.edit_history),
    }


def _card_text(card: dict) -> list[str]:
    width = max([len(f["name"]) for f in card["factors"]] + [6])
    lines = [
        f"model over N={card['n']} factors — scenario: {card['scenario']}",
        f"outcomes: {card['outcomes']['positive']} (positive) vs "
        f"{card['outcomes']['negative']} (negative)",
        f"intercept alpha = {card['alpha']:+.4f}",
        f"{'factor':<{width}}  {'beta':>8}  {'AME':>8}",
    ]
    for f in card["factors"]:
        lines.append(f"{f['name']:<{width}}  {f['beta']:>+8.4f}  {f['ame']:>+8.4f}")
    if card["gamma"]:
        lines.append("interactions: " + ", ".join(
            f"({p['pair'][0]},{p['pair'][1]})={p['value']:+.4f}" for p in card["gamma"]
        ))
    else:
        lines.append("interactions: none")
    lines.append("verbal map: " + ", ".join(
        f"{label}={value:.3f}" for label, value in card["map"].items()
    ))
    diag = card["diagnostics"]
    lines.append(
        f"fit: {'converged' if diag.get('converged') else 'not converged'} "
        f"in {diag.get('iterations')} iteration(s); "
        f"marginal log-likelihood {diag.get('marginal_log_likelihood'):.4f}; "
        f"ablation {diag.get('ablation', 'none')}"
    )
    lines.append(f"edit history: {card['edits']} record(s)")
    return lines


def _run_report(store: ArtifactStore, config: dict):
    envelope = _load(store, "models", config, "model")
    model = TrainedModel.from_dict(envelope.payload)
    card = model_card(model, version_hash=envelope.content_hash)
    summary = {"card": card, "text": _card_text(card)}
    return {"model": envelope.content_hash}, {}, summary


def _run_replay(store: ArtifactStore, config: dict):
    envelope = _load(store, "runs", config, "manifest")
    manifest = RunManifest.from_dict(envelope.payload)
    if manifest.command not in _RUNNERS:
        raise ValidationError(f"manifest records unknown command {manifest.command!r}")
    _, outputs, _ = _RUNNERS[manifest.command](store, dict(manifest.config))
    names = sorted(set(manifest.outputs) | set(outputs))
    mismatched = {
        name: {"recorded": manifest.outputs.get(name), "replayed": outputs.get(name)}
        for name in names
        if manifest.outputs.get(name) != outputs.get(name)
    }
    if mismatched:
        raise ValidationError(
            f"replay of {manifest.command} diverged: "
            + "; ".join(
                f"{name} recorded {v['recorded']} vs replayed {v['replayed']}"
                for name, v in mismatched.items()
            )
        )
    summary = {
        "command": manifest.command,
        "verified_outputs": dict(manifest.outputs),
        "text": [
            f"replayed {manifest.command}: all {len(names)} output hash(es) identical"
        ],
    }
    return {"manifest": envelope.content_hash}, outputs, summary


_RUNNERS = {
    "elicit": _run_elicit,
    "probe": _run_probe,
    "fit": _run_fit,
    "infer": _run_infer,
    "edit": _run_edit,
    "audit": _run_audit,
    "report": _run_report,
    "replay": _run_replay,
}


# --- click wiring ---------------------------------------------------------------


@click.group(name="factorlens")
@click.option("--store", "store_path", default="artifacts", show_default=True,
              envvar="FACTORLENS_STORE",
              help="Artifact store directory (env: FACTORLENS_STORE).")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]),
              default="text", show_default=True,
              help="Human-readable lines or one machine-readable JSON object.")
@click.pass_context
def main(ctx, store_path, fmt):
    """Extract, fit, query, audit, and edit interpretable decision models."""
    ctx.obj = {"store_path": store_path, "fmt": fmt}


def _execute(ctx, command: str, config: dict, runner) -> None:
    store = ArtifactStore(ctx.obj["store_path"])
    started = time.perf_counter()
    inputs, outputs, summary = runner(store, config)
    manifest = RunManifest(
        command=command,
        config=config,
        inputs=inputs,
        outputs=outputs,
        seed=config.get("seed"),
        wall_time_s=time.perf_counter() - started,
        created_at=_now(),
    )
    manifest_hash = store.save("runs", manifest.to_dict())
    if ctx.obj["fmt"] == "json":
        payload = {k: v for k, v in summary.items() if k != "text"}
        payload.update(command=command, inputs=inputs, outputs=outputs,
                       manifest=manifest_hash)
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in summary.get("text", ()):
            click.echo(line)
        for name, value in outputs.items():
            click.echo(f"{name}: {value}")
        click.echo(f"manifest: {manifest_hash}")


@main.command()
@click.option("--query", default=None,
              help="Free-form decision question; decomposed by the oracle.")
@click.option("--scenario", default=None, help="Decision scenario description.")
@click.option("--outcome-positive", default=None, help="Name of the positive outcome.")
@click.option("--outcome-negative", default=None, help="Name of the negative outcome.")
@click.option("--statements", default=DEFAULT_STATEMENT_COUNT, show_default=True,
              help="Distinct statements elicited per outcome.")
@click.option("--max-factors", default=MAX_FACTORS, show_default=True,
              help="Hard cap on extracted factors.")
@click.option("--verify/--no-verify", default=True, show_default=True,
              help="Run the discriminability/overlap/coverage verification loop.")
@click.option("--condition", "conditions", multiple=True,
              help="Sample condition for coverage checking (repeatable).")
@_oracle_options
@click.pass_context
def elicit(ctx, query, scenario, outcome_positive, outcome_negative, statements,
           max_factors, verify, conditions, **oracle_flags):
    """Identify a binary factor set for a decision scenario."""
    if query is None and not (scenario and outcome_positive and outcome_negative):
        raise click.UsageError(
            "provide --query, or all of --scenario/--outcome-positive/--outcome-negative"
        )
    config = {
        "query": query,
        "scenario": scenario,
        "outcome_positive": outcome_positive,
        "outcome_negative": outcome_negative,
        "statements": statements,
        "max_factors": max_factors,
        "verify": verify,
        "conditions": list(conditions),
        "oracle": _oracle_config(**oracle_flags),
    }
    _execute(ctx, "elicit", config, _run_elicit)


@main.command()
@click.option("--factors", default="latest", show_default=True,
              help="Factor-set hash (or prefix) in the store.")
@click.option("--budget", default=DEFAULT_BUDGET, show_default=True,
              help="Number of configurations to probe.")
@click.option("--seed", default=0, show_default=True,
              help="Plan sampling seed (used when 2^N exceeds the budget).")
@click.option("--temperature", default=PROBE_TEMPERATURE, show_default=True,
              help="Oracle temperature for probe queries.")
@click.option("--parallelism", default=1, show_default=True,
              help="Concurrent probe requests (keep 1 for deterministic replay).")
@_oracle_options
@click.pass_context
def probe(ctx, factors, budget, seed, temperature, parallelism, **oracle_flags):
    """Collect the behavioral dataset by probing hypothetical configurations."""
    config = {
        "factors": factors,
        "budget": budget,
        "seed": seed,
        "temperature": temperature,
        "parallelism": parallelism,
        "oracle": _oracle_config(**oracle_flags),
    }
    _execute(ctx, "probe", config, _run_probe)


@main.command()
@click.option("--dataset", default="latest", show_default=True,
              help="Dataset hash (or prefix) in the store.")
@click.option("--sigma-theta-sq", default=1.0, show_default=True,
              help="Prior variance of the model-side latent logit.")
@click.option("--sigma-phi-sq", default=1.0, show_default=True,
              help="Noise variance of the verbal-side logit (ratio 1.0 by default).")
@click.option("--lambda1", default=0.01, show_default=True,
              help="L1 penalty on interaction coefficients.")
@click.option("--lambda2", default=0.001, show_default=True,
              help="L2 penalty on interaction coefficients.")
@click.option("--lambda-mr", default=0.1, show_default=True,
              help="Margin-ranking loss weight.")
@click.option("--margin-eps", default=0.05, show_default=True,
              help="Margin half-width of the ranking loss.")
@click.option("--learning-rate", default=0.05, show_default=True,
              help="Proximal gradient step size.")
@click.option("--inner-steps", default=200, show_default=True,
              help="Proximal descent steps per M-step.")
@click.option("--convergence-tol", default=1e-4, show_default=True,
              help="EM stops when |ΔQ| falls below this.")
@click.option("--max-iters", default=100, show_default=True,
              help="EM iteration cap.")
@click.option("--seed", default=0, show_default=True, help="Estimation seed.")
@click.option("--ablation", type=click.Choice(list(ABLATIONS)), default="none",
              show_default=True,
              help="no-em freezes the verbal map at canonical; no-inter forces γ ≡ 0.")
@click.pass_context
def fit(ctx, **kw):
    """Fit the decision model and verbal map jointly by EM."""
    _execute(ctx, "fit", dict(kw), _run_fit)


@main.command()
@click.option("--model", default="latest", show_default=True,
              help="Model hash (or prefix) in the store.")
@click.option("--condition", required=True, help="Natural-language condition text.")
@click.option("--t", default=DEFAULT_SAMPLES, show_default=True,
              help="Monte Carlo samples for uncertain factors.")
@click.option("--temperature", default=SAMPLING_TEMPERATURE, show_default=True,
              help="Oracle temperature for completion sampling.")
@click.option("--ablation", type=click.Choice(list(INFERENCE_ABLATIONS)),
              default="none", show_default=True,
              help="no-mc assigns uncertain factors deterministically.")
@click.option("--seed", default=0, show_default=True,
              help="Seed for the no-mc deterministic assignment.")
@_oracle_options
@click.pass_context
def infer(ctx, model, condition, t, temperature, ablation, seed, **oracle_flags):
    """Predict the positive-outcome probability for a condition."""
    config = {
        "model": model,
        "condition": condition,
        "t": t,
        "temperature": temperature,
        "ablation": ablation,
        "seed": seed,
        "oracle": _oracle_config(**oracle_flags),
    }
    _execute(ctx, "infer", config, _run_infer)


@main.command()
@click.option("--model", default="latest", show_default=True,
              help="Model hash (or prefix) in the store.")
@click.option("--exclude", type=int, default=None,
              help="Factor index to remove exactly (beta=0, interactions dropped).")
@click.option("--ratio", type=(int, int, float), default=None,
              help="ANCHOR TARGET RHO: calibrate AME_target = RHO * AME_anchor.")
@click.option("--author", default="expert", show_default=True,
              help="Recorded author of the edit.")
@click.pass_context
def edit(ctx, model, exclude, ratio, author):
    """Apply one expert edit to a model, recording it reversibly."""
    if (exclude is None) == (ratio is None):
        raise click.UsageError("provide exactly one of --exclude or --ratio")
    if exclude is not None:
        operation = {"kind": "exclude", "factor": exclude}
    else:
        anchor, target, rho = ratio
        operation = {"kind": "ratio", "anchor": anchor, "target": target, "rho": rho}
    config = {"model": model, "operation": operation, "author": author}
    _execute(ctx, "edit", config, _run_edit)


@main.command()
@click.option("--dataset", default="latest", show_default=True,
              help="Dataset hash (or prefix) in the store.")
@click.option("--direction", default=None,
              help="Per-factor orientation toward the positive outcome, "
                   "e.g. '++-+' (default: all positive).")
@click.pass_context
def audit(ctx, dataset, direction):
    """Check ordinal consistency of verbal answers over dominance pairs."""
    config = {"dataset": dataset, "direction": direction}
    _execute(ctx, "audit", config, _run_audit)


@main.command()
@click.option("--model", default="latest", show_default=True,
              help="Model hash (or prefix) in the store.")
@click.pass_context
def report(ctx, model):
    """Print the model card: coefficients, AMEs, verbal map, diagnostics."""
    _execute(ctx, "report", {"model": model}, _run_report)


@main.command()
@click.argument("manifest")
@click.pass_context
def replay(ctx, manifest):
    """Re-run a recorded manifest and verify output hashes are identical."""
    _execute(ctx, "replay", {"manifest": manifest}, _run_replay)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True, help="Bind address.")
@click.option("--port", default=8000, show_default=True, help="Bind port.")
@click.option("--static", "static_dir", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="Workbench asset directory served at the root path.")
@click.option("--allow-origin", "allow_origins", multiple=True,
              help="CORS origin allowed to call the API (repeatable; default any).")
@_oracle_options
@click.pass_context
def serve(ctx, host, port, static_dir, allow_origins, **oracle_flags):
    """Serve the workbench HTTP API over the artifact store.

    An oracle backend (for live completion sampling in partial what-ifs) is
    attached only when one of --synthetic-spec/--cache/--base-url is given;
    without it, every endpoint except live sampling still works.
    """
    import uvicorn

    from .service import create_app

    backend = None
    if (oracle_flags.get("synthetic_spec") or oracle_flags.get("cache")
            or oracle_flags.get("base_url")):
        backend = _build_backend(_oracle_config(**oracle_flags))
    app = create_app(ctx.obj["store_path"], backend=backend,
                     allow_origins=allow_origins or ("*",), static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


def run(argv=None) -> int:
    """Dispatch one CLI invocation, mapping failures to contract exit codes."""
    try:
        main.main(args=argv, standalone_mode=False, prog_name="factorlens")
    except click.exceptions.Exit as err:
        return err.exit_code
    except click.UsageError as err:
        click.echo(f"usage error: {err.format_message()}", err=True)
        return 1
    except click.ClickException as err:
        err.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except (SolverNonConvergenceError, NumericalError) as err:
        click.echo(f"solver failure: {err}", err=True)
        return 4
    except BackendError as err:
        click.echo(f"oracle backend failure: {err}", err=True)
        return 3
    except FactorLensError as err:
        click.echo(f"validation failure: {err}", err=True)
        return 2
    return 0


def entrypoint() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
