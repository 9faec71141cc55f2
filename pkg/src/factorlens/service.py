"""HTTP facade for the workbench: inspect models, run what-ifs, apply edits.

The service keeps one session per model artifact.  A session holds the
committed head plus at most one previewed (uncommitted) edit; previews are
computed on a working copy and persist nothing.  Every response carries the
params-version hash it was computed from, and every mutating request must
quote the version it was composed against — a stale version is rejected with
409, never merged.  Commit is an atomic swap: the edited model and its record
are filed in the store, then the session head moves.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Literal

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .cli import model_card
from .core import FactorSet
from .editing import (
    EditRecord,
    RatioConstraint,
    average_marginal_effect,
    calibrate_ratio,
    exclude_factor,
    revert,
)
from .em import TrainedModel
from .errors import (
    BackendError,
    FactorLensError,
    NumericalError,
    SolverNonConvergenceError,
    StorageError,
)
from .hashing import content_hash
from .inference import (
    DEFAULT_SAMPLES,
    ConditionPartition,
    marginalize,
    sample_joint_completions,
)
from .store import ArtifactStore

API_PREFIX = "/api/v1"


def params_version(params) -> str:
    """Opaque identity of one coefficient state, used for optimistic locking."""
    return content_hash(params.to_dict())


@dataclass
class PendingEdit:
    """One previewed, uncommitted edit awaiting confirmation."""

    model: TrainedModel
    record: EditRecord
    version: str  # params version of the previewed (working) state


@dataclass
class SessionState:
    """Editing state for one model lineage.

    ``model`` is the committed head; ``pending`` the working copy, if any.
    The working params are what what-if predictions evaluate, so a preview
    is visible in probabilities before anything is persisted.
    """

    active_hash: str
    model: TrainedModel
    pending: PendingEdit | None = None

    @property
    def committed_version(self) -> str:
        return params_version(self.model.params)

    def working(self) -> tuple[TrainedModel, str]:
        if self.pending is not None:
            return self.pending.model, self.pending.version
        return self.model, self.committed_version


class PredictRequest(BaseModel):
    config: list[int] | None = None
    partial: dict[int, int] | None = None
    t: int = DEFAULT_SAMPLES


class EditRequest(BaseModel):
    kind: Literal["exclude", "ratio"]
    version: str
    factor: int | None = None
    anchor: int | None = None
    target: int | None = None
    rho: float | None = None
    author: str = "expert"


class CommitRequest(BaseModel):
    version: str


class RevertRequest(BaseModel):
    edit_id: str
    version: str
    author: str = "expert"


def _ames(params, factor_set: FactorSet) -> list[dict]:
    return [
        {
            "id": f.id,
            "name": f.name,
            "beta": params.beta[f.id],
            "ame": average_marginal_effect(params, f.id),
        }
        for f in factor_set.factors
    ]


def create_app(store_path, backend=None, allow_origins=("*",),
               static_dir=None) -> FastAPI:
    """Build the service over one artifact store.

    ``backend`` is an oracle used only for live completion sampling in
    partial what-ifs; without one, such requests fail with 502 and every
    other endpoint still works.  ``static_dir`` optionally mounts the
    workbench bundle at the root path.
    """
    app = FastAPI(title="factorlens", docs_url=f"{API_PREFIX}/docs",
                  openapi_url=f"{API_PREFIX}/openapi.json")
    app.add_middleware(
        CORSMiddleware, allow_origins=list(allow_origins),
        allow_methods=["*"], allow_headers=["*"],
    )
    store = ArtifactStore(store_path)
    sessions: dict[str, SessionState] = {}
    lock = threading.Lock()
    app.state.store = store
    app.state.sessions = sessions

    def _error(status_code: int, err: Exception) -> JSONResponse:
        return JSONResponse(status_code=status_code, content={"detail": str(err)})

    @app.exception_handler(StorageError)
    def _storage(request: Request, err: StorageError):
        return _error(404, err)

    @app.exception_handler(BackendError)
    def _backend(request: Request, err: BackendError):
        return _error(502, err)

    @app.exception_handler(SolverNonConvergenceError)
    def _solver(request: Request, err: SolverNonConvergenceError):
        return JSONResponse(
            status_code=422,
            content={"detail": f"{err} (best residual {err.best_residual:.3e})"},
        )

    @app.exception_handler(NumericalError)
    def _numerical(request: Request, err: NumericalError):
        return _error(422, err)

    @app.exception_handler(FactorLensError)
    def _invalid(request: Request, err: FactorLensError):
        return _error(422, err)

    def _session(ref: str) -> SessionState:
        resolved = store.resolve("models", ref)
        with lock:
            session = sessions.get(resolved)
            if session is None:
                model = TrainedModel.from_dict(store.load_payload("models", resolved))
                session = SessionState(active_hash=resolved, model=model)
                sessions[resolved] = session
            return session

    def _require_version(given: str, expected: str, what: str) -> None:
        if given != expected:
            raise HTTPException(
                status_code=409,
                detail=f"stale version for {what}: expected {expected}, got {given}",
            )

    @app.get(f"{API_PREFIX}/models")
    def list_models():
        rows = []
        for h in store.list_hashes("models"):
            payload = store.load_payload("models", h)
            rows.append({
                "hash": h,
                "n": len(payload["factor_set"]["factors"]),
                "scenario": payload["factor_set"]["scenario"],
                "edits": len(payload["edit_history"]),
            })
        return {"models": rows}

    @app.get(f"{API_PREFIX}/models/{{ref}}")
    def get_card(ref: str):
        session = _session(ref)
        return {
            "model": session.active_hash,
            "version": session.committed_version,
            "card": model_card(session.model, version_hash=session.active_hash),
        }

    @app.get(f"{API_PREFIX}/models/{{ref}}/ames")
    def get_ames(ref: str):
        session = _session(ref)
        return {
            "model": session.active_hash,
            "version": session.committed_version,
            "ames": _ames(session.model.params, session.model.factor_set),
        }

    @app.get(f"{API_PREFIX}/models/{{ref}}/edits")
    def get_edit_log(ref: str):
        session = _session(ref)
        return {
            "model": session.active_hash,
            "version": session.committed_version,
            "edits": list(session.model.edit_history),
        }

    @app.post(f"{API_PREFIX}/models/{{ref}}/predict")
    def predict_what_if(ref: str, body: PredictRequest):
        session = _session(ref)
        model, version = session.working()
        n = model.factor_set.n
        if (body.config is None) == (body.partial is None):
            raise HTTPException(
                status_code=422,
                detail="provide exactly one of `config` (full bits) or `partial`",
            )
        if body.config is not None:
            partition = ConditionPartition(
                n=n,
                observed={i: bit for i, bit in enumerate(body.config)},
                uncertain=frozenset(),
                condition_text="what-if",
            )
            result = marginalize(model, [partition.observed_config()], partition)
        else:
            partition = ConditionPartition(
                n=n,
                observed=dict(body.partial),
                uncertain=frozenset(set(range(n)) - set(body.partial)),
                condition_text="what-if",
            )
            if partition.fully_observed:
                result = marginalize(model, [partition.observed_config()], partition)
            else:
                if backend is None:
                    raise HTTPException(
                        status_code=502,
                        detail="no oracle backend configured for live completion sampling",
                    )
                samples = sample_joint_completions(
                    backend, model.factor_set, partition, body.t
                )
                result = marginalize(model, samples, partition)
        return {
            "model": session.active_hash,
            "version": version,
            "probability": result.probability,
            "standard_error": result.standard_error,
            "samples_used": result.samples_used,
            "partition": result.partition.to_dict(),
        }

    @app.post(f"{API_PREFIX}/models/{{ref}}/edits/preview")
    def preview_edit(ref: str, body: EditRequest):
        session = _session(ref)
        with lock:
            _require_version(body.version, session.committed_version, "preview")
            before = _ames(session.model.params, session.model.factor_set)
            if body.kind == "exclude":
                if body.factor is None:
                    raise HTTPException(status_code=422,
                                        detail="exclude edit needs `factor`")
                edited, record = exclude_factor(session.model, body.factor,
                                                author=body.author)
            else:
                if None in (body.anchor, body.target, body.rho):
                    raise HTTPException(
                        status_code=422,
                        detail="ratio edit needs `anchor`, `target`, and `rho`",
                    )
                constraint = RatioConstraint(anchor=body.anchor, target=body.target,
                                             rho=body.rho)
                edited, record = calibrate_ratio(session.model, constraint,
                                                 author=body.author)
            session.pending = PendingEdit(
                model=edited, record=record, version=params_version(edited.params)
            )
            return {
                "model": session.active_hash,
                "version": session.committed_version,
                "preview_version": session.pending.version,
                "edit": record.to_dict(),
                "ames_before": before,
                "ames_after": _ames(edited.params, edited.factor_set),
            }

    @app.post(f"{API_PREFIX}/models/{{ref}}/edits/commit")
    def commit_edit(ref: str, body: CommitRequest):
        session = _session(ref)
        with lock:
            if session.pending is None:
                raise HTTPException(status_code=422,
                                    detail="no previewed edit to commit")
            _require_version(body.version, session.pending.version, "commit")
            pending = session.pending
            new_hash = store.save("models", pending.model.to_dict())
            store.save("edits", pending.record.to_dict())
            session.model = pending.model
            session.active_hash = new_hash
            session.pending = None
            sessions[new_hash] = session
            return {
                "model": new_hash,
                "version": session.committed_version,
                "edit_id": pending.record.edit_id,
                "edits": len(session.model.edit_history),
            }

    @app.post(f"{API_PREFIX}/models/{{ref}}/edits/revert")
    def revert_edit(ref: str, body: RevertRequest):
        session = _session(ref)
        with lock:
            _require_version(body.version, session.committed_version, "revert")
            entries = {e.get("edit_id"): e for e in session.model.edit_history}
            if body.edit_id not in entries:
                raise HTTPException(
                    status_code=422,
                    detail=f"edit {body.edit_id} is not in this model's lineage",
                )
            target = EditRecord.from_dict(entries[body.edit_id])
            restored = revert(session.model, target, author=body.author)
            reversal = restored.edit_history[-1]
            new_hash = store.save("models", restored.to_dict())
            store.save("edits", reversal)
            session.model = restored
            session.active_hash = new_hash
            session.pending = None
            sessions[new_hash] = session
            return {
                "model": new_hash,
                "version": session.committed_version,
                "edit_id": reversal["edit_id"],
                "reverted": body.edit_id,
                "edits": len(session.model.edit_history),
            }

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="workbench")

    return app
