"""HTTP session service: the annotation loop behind a small JSON API.

A session owns one experiment run on a worker thread. In human mode the
run blocks inside the annotator until clients answer the pending queries
through POST /sessions/{id}/annotations; in oracle mode it runs straight
through. Reads never block on fits: the worker only holds the session lock
to flip phases and exchange answers.

Phases: fitting (worker busy), awaiting_annotations (blocked on the client),
finished (run complete), idle (cancelled or failed; see `error`).
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .concepts import ConceptFitConfig
from .data import BundleError, EmbeddingDataset, load_bundle
from .head import HeadConfig
from .loop import (
    AcquisitionConfig,
    AcquisitionQuery,
    EvalConfig,
    IterationRecord,
    OracleAnnotator,
    run_experiment,
)

_ACQ_KEYS = {
    "mode",
    "initial_samples",
    "samples_per_iteration",
    "iterations",
    "pool_size",
    "uncertainty_samples",
    "seed",
}
_EXTRA_KEYS = {"annotator", "fit_epochs", "fit_learning_rate", "head_epochs", "prediction_samples", "compute_dci"}


def parse_session_config(
    doc: dict,
) -> tuple[AcquisitionConfig, ConceptFitConfig, HeadConfig, EvalConfig, str]:
    """Build run configs from the request body; unknown keys are rejected."""
    unknown = set(doc) - _ACQ_KEYS - _EXTRA_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    acq = AcquisitionConfig(**{k: doc[k] for k in _ACQ_KEYS if k in doc})
    fit = ConceptFitConfig(seed=acq.seed)
    if "fit_epochs" in doc or "fit_learning_rate" in doc:
        schedule = fit.schedule
        if "fit_epochs" in doc:
            schedule = replace(schedule, epochs=int(doc["fit_epochs"]))
        if "fit_learning_rate" in doc:
            schedule = replace(schedule, learning_rate=float(doc["fit_learning_rate"]))
        fit = replace(fit, schedule=schedule)
    head = HeadConfig(seed=acq.seed)
    if "head_epochs" in doc:
        head = replace(head, max_epochs=int(doc["head_epochs"]))
    ev = EvalConfig()
    if "prediction_samples" in doc:
        ev = replace(ev, prediction_samples=int(doc["prediction_samples"]))
    if "compute_dci" in doc:
        ev = replace(ev, compute_dci=bool(doc["compute_dci"]))
    annotator = doc.get("annotator", "human")
    if annotator not in ("human", "oracle"):
        raise ValueError(f"annotator must be 'human' or 'oracle', not {annotator!r}")
    return acq, fit, head, ev, annotator


class _SessionCancelled(Exception):
    pass


class _QueueAnnotator:
    """Annotator that parks the worker until clients answer every pending pair."""

    def __init__(self, runtime: "SessionRuntime"):
        self.runtime = runtime

    def annotate(self, queries: Sequence[AcquisitionQuery]) -> dict[tuple[int, int], int]:
        return self.runtime.wait_for_answers(queries)


class SessionRuntime:
    def __init__(
        self,
        session_id: str,
        bundle: str,
        dataset: EmbeddingDataset,
        configs: tuple[AcquisitionConfig, ConceptFitConfig, HeadConfig, EvalConfig, str],
    ):
        self.id = session_id
        self.bundle = bundle
        self.dataset = dataset
        self.acq, self.fit_config, self.head_config, self.eval_config, self.annotator_kind = configs
        self.lock = threading.Condition()
        self.phase = "fitting"
        self.pending: dict[tuple[int, int], AcquisitionQuery] = {}
        self.answers: dict[tuple[int, int], int] = {}
        self.history: list[dict] = []
        self.total_annotations = 0
        self.error: str | None = None
        self.cancelled = False
        self.thread = threading.Thread(target=self._run, name=f"session-{session_id}", daemon=True)

    def start(self) -> None:
        self.thread.start()

    # worker side ------------------------------------------------------------

    def _run(self) -> None:
        try:
            annotator = (
                OracleAnnotator(self.dataset)
                if self.annotator_kind == "oracle"
                else _QueueAnnotator(self)
            )
            run = run_experiment(
                self.dataset,
                self.acq,
                fit_config=self.fit_config,
                head_config=self.head_config,
                eval_config=self.eval_config,
                annotator=annotator,
                on_snapshot=self._record,
            )
            with self.lock:
                self.total_annotations = len(run.ledger)
                self.phase = "finished"
                self.lock.notify_all()
        except _SessionCancelled:
            with self.lock:
                self.phase = "idle"
                self.lock.notify_all()
        except Exception as e:  # surfaced through GET /sessions/{id}
            with self.lock:
                self.error = f"{type(e).__name__}: {e}"
                self.phase = "idle"
                self.lock.notify_all()

    def _record(self, record: IterationRecord) -> None:
        with self.lock:
            self.history.append(record.to_json())

    def wait_for_answers(self, queries: Sequence[AcquisitionQuery]) -> dict[tuple[int, int], int]:
        with self.lock:
            if self.cancelled:
                raise _SessionCancelled()
            self.pending = {(q.sample, q.concept): q for q in queries}
            self.answers = {}
            self.phase = "awaiting_annotations"
            self.lock.notify_all()
            while len(self.answers) < len(self.pending):
                if self.cancelled:
                    raise _SessionCancelled()
                self.lock.wait(timeout=0.5)
            answers = dict(self.answers)
            self.total_annotations += len(answers)
            self.pending = {}
            self.answers = {}
            self.phase = "fitting"
            return answers

    # client side ------------------------------------------------------------

    def submit(self, items: Sequence[tuple[int, int, int]]) -> int:
        """Atomic batch: either every item is accepted or none is."""
        cards = self.dataset.schema.cardinalities
        with self.lock:
            if self.phase != "awaiting_annotations":
                raise HTTPException(409, "session holds no pending queries")
            seen: set[tuple[int, int]] = set()
            for sample, concept, value in items:
                key = (sample, concept)
                if key in seen or key not in self.pending or key in self.answers:
                    raise HTTPException(409, f"pair {list(key)} is not pending")
                if not (0 <= concept < len(cards)) or not (0 <= value < cards[concept]):
                    raise HTTPException(422, f"value {value} out of range for concept {concept}")
                seen.add(key)
            for sample, concept, value in items:
                self.answers[(sample, concept)] = value
            if len(self.answers) == len(self.pending):
                self.lock.notify_all()
            return len(items)

    def open_queries(self) -> list[dict]:
        names = self.dataset.schema.names
        cards = self.dataset.schema.cardinalities
        refs = self.dataset.image_refs
        with self.lock:
            out = []
            for key, q in self.pending.items():
                if key in self.answers:
                    continue
                out.append(
                    {
                        "sample": q.sample,
                        "concept": q.concept,
                        "concept_name": names[q.concept],
                        "uncertainty": q.uncertainty,
                        "image_ref": refs[q.sample] if refs is not None else None,
                        "values": [str(j) for j in range(cards[q.concept])],
                    }
                )
            return out

    def summary(self) -> dict:
        with self.lock:
            latest = self.history[-1]["metrics"] if self.history else None
            iteration = self.history[-1]["iteration"] if self.history else 0
            return {
                "id": self.id,
                "bundle": self.bundle,
                "phase": self.phase,
                "mode": self.acq.mode,
                "annotator": self.annotator_kind,
                "iteration": iteration,
                "iterations": self.acq.iterations,
                "seed": self.acq.seed,
                "pending_count": len(self.pending) - len(self.answers),
                "cumulative_annotations": self.total_annotations,
                "latest_metrics": latest,
                "error": self.error,
            }

    def cancel(self) -> None:
        with self.lock:
            self.cancelled = True
            self.lock.notify_all()


class CreateSessionRequest(BaseModel):
    bundle: str
    config: dict = Field(default_factory=dict)


class AnnotationItem(BaseModel):
    sample: int
    concept: int
    value: int


def create_app(bundle_root: str | Path | None = None, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="conceptgp annotation service")
    sessions: dict[str, SessionRuntime] = {}
    app.state.sessions = sessions

    def get_session(session_id: str) -> SessionRuntime:
        runtime = sessions.get(session_id)
        if runtime is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return runtime

    @app.get("/")
    def root() -> dict:
        return {"service": "conceptgp", "sessions": sorted(sessions)}

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest) -> dict:
        path = Path(req.bundle)
        if bundle_root is not None and not path.is_absolute():
            path = Path(bundle_root) / path
        try:
            dataset = load_bundle(path)
        except BundleError as e:
            raise HTTPException(400, f"bundle rejected: {e}") from e
        try:
            configs = parse_session_config(req.config)
        except (ValueError, TypeError) as e:
            raise HTTPException(422, f"config rejected: {e}") from e
        session_id = uuid.uuid4().hex[:12]
        runtime = SessionRuntime(session_id, str(req.bundle), dataset, configs)
        sessions[session_id] = runtime
        runtime.start()
        return {"id": session_id}

    @app.get("/sessions")
    def list_sessions() -> list[dict]:
        return [sessions[sid].summary() for sid in sorted(sessions)]

    @app.get("/sessions/{session_id}")
    def session_state(session_id: str) -> dict:
        return get_session(session_id).summary()

    @app.get("/sessions/{session_id}/queries")
    def session_queries(session_id: str) -> list[dict]:
        return get_session(session_id).open_queries()

    @app.post("/sessions/{session_id}/annotations")
    def post_annotations(session_id: str, items: list[AnnotationItem]) -> dict:
        runtime = get_session(session_id)
        accepted = runtime.submit([(i.sample, i.concept, i.value) for i in items])
        return {"accepted": accepted}

    @app.get("/sessions/{session_id}/metrics")
    def session_metrics(session_id: str) -> dict:
        runtime = get_session(session_id)
        with runtime.lock:
            return {"history": list(runtime.history)}

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str) -> dict:
        runtime = get_session(session_id)
        runtime.cancel()
        runtime.thread.join(timeout=2.0)
        del sessions[session_id]
        return {"deleted": session_id}

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
