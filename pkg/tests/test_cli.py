"""CLI contract: pipeline commands, manifests, replay, and exit codes."""

import json

import pytest

from factorlens import cli
from factorlens.core import FactorSet
from factorlens.elicitation import extract_factors, generate_statements
from factorlens.em import TrainedModel
from factorlens.errors import SolverNonConvergenceError
from factorlens.store import ArtifactStore
from factorlens.verbal import canonical_map

from conftest import ScriptedBackend, build_factor_set, build_synthetic


def numbered(lines):
    return "\n".join(f"{i + 1}. {line}" for i, line in enumerate(lines))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """A store primed by real `probe` and `fit` runs over a synthetic oracle."""
    root = tmp_path_factory.mktemp("cli-pipeline")
    store_path = root / "artifacts"
    store = ArtifactStore(store_path)
    store.save("factors", build_factor_set(3).to_dict())
    backend = build_synthetic(
        determinations={"steady income": {0: 1, 1: 0}},
        completion_correlation=0.25,
    )
    spec_path = root / "oracle.json"
    spec_path.write_text(json.dumps(backend.spec.to_dict()))
    base = ["--store", str(store_path)]
    assert cli.run([*base, "probe", "--budget", "8",
                    "--synthetic-spec", str(spec_path)]) == 0
    assert cli.run([*base, "fit", "--max-iters", "60"]) == 0
    return {
        "store": store,
        "store_path": str(store_path),
        "spec": str(spec_path),
        "dataset": store.latest_hash("datasets"),
        "model": store.latest_hash("models"),
    }


def invoke(pipeline, *args):
    return cli.run(["--store", pipeline["store_path"], *args])


def invoke_json(pipeline, *args, capsys):
    capsys.readouterr()
    rc = cli.run(["--store", pipeline["store_path"], "--format", "json", *args])
    out = capsys.readouterr().out
    return rc, (json.loads(out) if out.strip() else None)


class TestPipeline:
    def test_probe_wrote_dataset_and_manifest(self, pipeline):
        store = pipeline["store"]
        payload = store.load_payload("datasets", pipeline["dataset"])
        assert len(payload["observations"]) == 8  # exhaustive 2^3
        manifests = [store.load_payload("runs", h) for h in store.list_hashes("runs")]
        assert {m["command"] for m in manifests} >= {"probe", "fit"}

    def test_manifest_pins_resolved_hashes(self, pipeline):
        store = pipeline["store"]
        fit_manifest = next(
            store.load_payload("runs", h) for h in store.list_hashes("runs")
            if store.load_payload("runs", h)["command"] == "fit"
        )
        assert fit_manifest["config"]["dataset"] == pipeline["dataset"]
        assert fit_manifest["inputs"] == {"dataset": pipeline["dataset"]}
        assert fit_manifest["outputs"] == {"model": pipeline["model"]}

    def test_report_text_mode(self, pipeline, capsys):
        capsys.readouterr()
        assert invoke(pipeline, "report", "--model", pipeline["model"]) == 0
        out = capsys.readouterr().out
        assert "factor_0" in out
        assert "verbal map:" in out
        assert "manifest:" in out

    def test_report_json_mode(self, pipeline, capsys):
        rc, payload = invoke_json(
            pipeline, "report", "--model", pipeline["model"], capsys=capsys
        )
        assert rc == 0
        card = payload["card"]
        assert card["version"] == pipeline["model"]
        assert len(card["factors"]) == 3
        assert set(card["map"]) == {
            "very unlikely", "unlikely", "somewhat unlikely", "neutral",
            "somewhat likely", "likely", "very likely",
        }
        assert payload["outputs"] == {}
        assert "manifest" in payload

    def test_infer_stores_result(self, pipeline, capsys):
        rc, payload = invoke_json(
            pipeline, "infer", "--model", pipeline["model"],
            "--condition", "steady income", "--t", "6",
            "--synthetic-spec", pipeline["spec"], capsys=capsys,
        )
        assert rc == 0
        assert 0.0 <= payload["probability"] <= 1.0
        assert payload["uncertain_factors"] == [2]
        stored = pipeline["store"].load_payload(
            "inferences", payload["outputs"]["inference"]
        )
        assert stored["probability"] == payload["probability"]

    def test_infer_is_reproducible_across_runs(self, pipeline, capsys):
        args = ("infer", "--model", pipeline["model"], "--condition",
                "steady income", "--t", "5", "--synthetic-spec", pipeline["spec"])
        rc1, first = invoke_json(pipeline, *args, capsys=capsys)
        rc2, second = invoke_json(pipeline, *args, capsys=capsys)
        assert rc1 == rc2 == 0
        assert first["outputs"]["inference"] == second["outputs"]["inference"]

    def test_infer_no_mc_is_t_independent(self, pipeline, capsys):
        hashes = []
        for t in ("5", "50"):
            rc, payload = invoke_json(
                pipeline, "infer", "--model", pipeline["model"],
                "--condition", "steady income", "--t", t, "--ablation", "no-mc",
                "--synthetic-spec", pipeline["spec"], capsys=capsys,
            )
            assert rc == 0
            assert payload["samples_used"] == 1
            hashes.append(payload["outputs"]["inference"])
        assert hashes[0] == hashes[1]

    def test_fit_ablation_no_em_keeps_canonical_map(self, pipeline, capsys):
        rc, payload = invoke_json(
            pipeline, "fit", "--dataset", pipeline["dataset"],
            "--ablation", "no-em", capsys=capsys,
        )
        assert rc == 0
        model = TrainedModel.from_dict(
            pipeline["store"].load_payload("models", payload["outputs"]["model"])
        )
        assert model.map.values == canonical_map().values

    def test_fit_ablation_no_inter_forces_zero_gamma(self, pipeline, capsys):
        rc, payload = invoke_json(
            pipeline, "fit", "--dataset", pipeline["dataset"],
            "--ablation", "no-inter", capsys=capsys,
        )
        assert rc == 0
        model = TrainedModel.from_dict(
            pipeline["store"].load_payload("models", payload["outputs"]["model"])
        )
        assert model.params.gamma == {}

    def test_edit_exclude_then_ratio(self, pipeline, capsys):
        rc, excluded = invoke_json(
            pipeline, "edit", "--model", pipeline["model"], "--exclude", "2",
            capsys=capsys,
        )
        assert rc == 0
        assert excluded["kind"] == "exclude"
        assert excluded["constraint_residuals"]["ame_excluded"] == 0.0

        rc, ratioed = invoke_json(
            pipeline, "edit", "--model", excluded["outputs"]["model"],
            "--ratio", "0", "1", "2.0", capsys=capsys,
        )
        assert rc == 0
        assert ratioed["kind"] == "ratio"
        assert all(
            abs(v) <= 1e-6 for v in ratioed["constraint_residuals"].values()
        )
        record = pipeline["store"].load_payload("edits", ratioed["outputs"]["edit"])
        assert record["edit_id"] == ratioed["edit_id"]

    def test_audit(self, pipeline, capsys):
        rc, payload = invoke_json(
            pipeline, "audit", "--dataset", pipeline["dataset"], capsys=capsys
        )
        assert rc == 0
        assert payload["comparable_pairs"] > 0
        assert 0.0 <= payload["ratio"] <= 1.0
        assert pipeline["store"].load_payload("audits", payload["outputs"]["audit"])

    def test_audit_direction_must_match_n(self, pipeline):
        assert invoke(
            pipeline, "audit", "--dataset", pipeline["dataset"], "--direction", "+-"
        ) == 2


class TestReplay:
    def test_every_manifest_replays_identically(self, pipeline, capsys):
        store = pipeline["store"]
        snapshot = [
            h for h in store.list_hashes("runs")
            if store.load_payload("runs", h)["command"] != "replay"
        ]
        assert snapshot
        for h in snapshot:
            capsys.readouterr()
            assert invoke(pipeline, "replay", h) == 0, store.load_payload("runs", h)

    def test_replay_detects_divergence(self, pipeline, capsys):
        store = pipeline["store"]
        fit_manifest = next(
            store.load_payload("runs", h) for h in store.list_hashes("runs")
            if store.load_payload("runs", h)["command"] == "fit"
        )
        forged = dict(fit_manifest, outputs={"model": "0" * 64})
        forged_hash = store.save("runs", forged)
        capsys.readouterr()
        assert invoke(pipeline, "replay", forged_hash) == 2
        assert "diverged" in capsys.readouterr().err


class TestElicitCommand:
    def test_elicit_through_a_recorded_cache(self, tmp_path, capsys):
        """Record a scripted elicitation, then drive the CLI from the cache."""
        scripted = ScriptedBackend(script={
            "GENERATE_STATEMENTS": [
                numbered(["steady income", "savings buffer", "long tenure"]),
                numbered(["missed payments", "high balances", "recent default"]),
            ],
            "EXTRACT_FACTORS": [json.dumps([
                {"name": "stable_income", "positive": "income is steady",
                 "negative": "income is irregular"},
                {"name": "clean_history", "positive": "no missed payments",
                 "negative": "missed payments on record"},
            ])],
        })
        positive = generate_statements(scripted, "loan review", "approve", count=3)
        negative = generate_statements(scripted, "loan review", "deny", count=3)
        extract_factors(scripted, "loan review", positive, negative)
        cache = tmp_path / "cache.jsonl"
        cache.write_text(
            "\n".join(json.dumps(t.to_dict()) for t in scripted.transcripts)
        )

        store_path = tmp_path / "artifacts"
        rc = cli.run([
            "--store", str(store_path), "elicit",
            "--scenario", "loan review", "--outcome-positive", "approve",
            "--outcome-negative", "deny", "--statements", "3", "--no-verify",
            "--backend", "replay", "--cache", str(cache),
        ])
        assert rc == 0
        fs = FactorSet.from_dict(ArtifactStore(store_path).load_payload("factors"))
        assert fs.names() == ["stable_income", "clean_history"]
        assert fs.outcome_positive == "approve"

    def test_elicit_needs_query_or_scenario(self, tmp_path):
        assert cli.run(["--store", str(tmp_path / "s"), "elicit"]) == 1

    def test_synthetic_oracle_cannot_elicit(self, pipeline):
        rc = invoke(
            pipeline, "elicit", "--scenario", "x", "--outcome-positive", "y",
            "--outcome-negative", "z", "--synthetic-spec", pipeline["spec"],
        )
        assert rc == 3


class TestExitCodes:
    def test_unknown_command_is_usage(self, tmp_path):
        assert cli.run(["--store", str(tmp_path / "s"), "transmogrify"]) == 1

    def test_edit_needs_exactly_one_operation(self, pipeline):
        assert invoke(pipeline, "edit", "--model", pipeline["model"]) == 1
        assert invoke(
            pipeline, "edit", "--model", pipeline["model"],
            "--exclude", "0", "--ratio", "0", "1", "2.0",
        ) == 1

    def test_infer_requires_condition(self, pipeline):
        assert invoke(pipeline, "infer", "--model", pipeline["model"]) == 1

    def test_bad_ablation_choice_is_usage(self, pipeline):
        assert invoke(
            pipeline, "fit", "--dataset", pipeline["dataset"],
            "--ablation", "nope",
        ) == 1

    def test_missing_artifact_is_validation(self, tmp_path):
        assert cli.run(["--store", str(tmp_path / "empty"), "fit"]) == 2

    def test_bad_budget_is_validation(self, pipeline):
        assert invoke(
            pipeline, "probe", "--budget", "0", "--synthetic-spec", pipeline["spec"]
        ) == 2

    def test_bad_em_config_is_validation(self, pipeline):
        assert invoke(
            pipeline, "fit", "--dataset", pipeline["dataset"], "--lambda1", "-1"
        ) == 2

    def test_exclude_out_of_range_is_validation(self, pipeline):
        assert invoke(
            pipeline, "edit", "--model", pipeline["model"], "--exclude", "99"
        ) == 2

    def test_cache_miss_is_backend_failure(self, pipeline, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        rc = invoke(
            pipeline, "infer", "--model", pipeline["model"],
            "--condition", "steady income",
            "--backend", "replay", "--cache", str(empty),
        )
        assert rc == 3

    def test_missing_synthetic_spec_is_validation(self, pipeline):
        assert invoke(
            pipeline, "infer", "--model", pipeline["model"],
            "--condition", "steady income", "--backend", "synthetic",
        ) == 2

    def test_solver_failure_maps_to_exit_4(self, pipeline, monkeypatch):
        def stalled(store, config):
            raise SolverNonConvergenceError("stalled", best_residual=1e-3)

        monkeypatch.setattr(cli, "_run_edit", stalled)
        assert invoke(
            pipeline, "edit", "--model", pipeline["model"], "--ratio", "0", "1", "2.0"
        ) == 4
