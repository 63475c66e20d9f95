"""HTTP service exposing the adaptation loop to a live reviewer.

The service owns no adaptation logic: each session wraps the same
`StreamRunner` the offline harness drives, so a reviewer clicking through a
session and the oracle annotator replaying it with the same seeds produce
the same numbers.

Each session persists to its own directory. The reviewer's raw submission is
flushed to disk *before* adaptation runs, and the cursor/model state commit
only after it finishes, so a crash mid-adaptation replays the same sample on
restart instead of losing or double-counting it.

Phases: ready -> awaiting_feedback -> adapting -> ready, then done when the
stream is exhausted. Requests for one session are serialized; rejected
requests never mutate state.
"""

from __future__ import annotations

import base64
import io
import json
import os
import threading
import uuid
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, run_config_from_dict
from .errors import ConfigError, HittaError, ValidationError
from .feedback_adapt import init_head
from .harness import PredictionBundle, SampleRow, StreamRunner
from .methods import resolve_method
from .rle import decode_mask, encode_mask

PHASES = ("ready", "awaiting_feedback", "adapting", "done")
SESSION_FILE = "session.json"
STATE_FILE = "state.json"
MODEL_FILE = "model_state.pt"


def _png_b64(image01: np.ndarray) -> str:
    from PIL import Image

    arr = (np.clip(image01, 0.0, 1.0).transpose(1, 2, 0) * 255).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class Session:
    """One reviewer's stream: a StreamRunner plus its persistence."""

    def __init__(self, session_id: str, method: str, run: RunConfig, root: Path):
        self.id = session_id
        self.method = method
        self.dir = root / session_id
        self.lock = threading.Lock()
        self.runner = StreamRunner(method, run)
        self.phase = "ready" if self.runner.stream else "done"

    # -- creation / resume -------------------------------------------------------

    @classmethod
    def create(cls, payload: dict, root: Path) -> "Session":
        method = payload.get("method", "hitta")
        resolve_method(method)  # fail fast on unknown names
        run = run_config_from_dict(payload.get("config", {}) or {})
        session = cls(uuid.uuid4().hex[:12], method, run, root)
        session.dir.mkdir(parents=True, exist_ok=False)
        (session.dir / "records").mkdir()
        (session.dir / "intents").mkdir()
        (session.dir / SESSION_FILE).write_text(
            json.dumps({"id": session.id, "method": method, "config": run.to_dict()}, indent=1)
        )
        session._commit()
        return session

    @classmethod
    def load(cls, session_id: str, root: Path) -> "Session":
        meta_path = root / session_id / SESSION_FILE
        if not meta_path.exists():
            raise KeyError(session_id)
        meta = json.loads(meta_path.read_text())
        run = run_config_from_dict(meta["config"])
        session = cls(session_id, meta["method"], run, root)
        state = json.loads((session.dir / STATE_FILE).read_text())
        session.runner.cursor = state["cursor"]
        session.runner.rows = [SampleRow.from_json(r) for r in state["rows"]]
        session.runner.traces = {k: list(v) for k, v in state["traces"].items()}
        model_path = session.dir / MODEL_FILE
        if model_path.exists():
            blob = torch.load(model_path, weights_only=True)
            session.runner.net.load_state_dict(blob["net"])
            if blob.get("head") is not None:
                head = init_head(
                    session.runner.net.feature_channels,
                    session.runner.net.arch.num_classes,
                    seed=run.seed,
                )
                head.load_state_dict(blob["head"])
                session.runner.head = head
        session.phase = "done" if session.runner.exhausted else "ready"
        return session

    # -- persistence ---------------------------------------------------------------

    def _commit(self) -> None:
        """Atomically persist cursor/rows/traces; the commit point for crash safety."""
        state = {
            "cursor": self.runner.cursor,
            "phase": self.phase,
            "rows": [r.to_json() for r in self.runner.rows],
            "traces": self.runner.traces,
        }
        tmp = self.dir / (STATE_FILE + ".tmp")
        tmp.write_text(json.dumps(state))
        os.replace(tmp, self.dir / STATE_FILE)

    def _save_model(self) -> None:
        blob = {
            "net": self.runner.net.state_dict(),
            "head": self.runner.head.state_dict() if self.runner.head is not None else None,
        }
        tmp = self.dir / (MODEL_FILE + ".tmp")
        torch.save(blob, tmp)
        os.replace(tmp, self.dir / MODEL_FILE)

    # -- the three session verbs ------------------------------------------------------

    def next_payload(self) -> dict:
        if self.phase == "done" or self.runner.exhausted:
            self.phase = "done"
            return {"done": True, "phase": self.phase, "cursor": self.runner.cursor}
        if self.phase != "ready":
            raise PhaseConflict(f"phase is {self.phase!r}, expected 'ready'")
        bundle = self.runner.predict_next()
        if bundle is None:
            self.phase = "done"
            return {"done": True, "phase": self.phase, "cursor": self.runner.cursor}
        self.phase = "awaiting_feedback"
        return _bundle_payload(bundle, self.phase)

    def feedback_payload(self, body: dict) -> dict:
        if self.phase != "awaiting_feedback" or self.runner.pending is None:
            raise PhaseConflict(f"phase is {self.phase!r}, expected 'awaiting_feedback'")
        bundle = self.runner.pending
        chosen = body.get("chosen_head", "main")
        if chosen not in bundle.masks:
            raise ValidationError(f"chosen_head {chosen!r} not among {sorted(bundle.masks)}")
        if "mask" not in body:
            raise ValidationError("body needs a 'mask' field (run-length encoded label map)")
        corrected = decode_mask(body["mask"])
        if corrected.shape != bundle.masks["main"].shape:
            raise ValidationError(
                f"mask shape {corrected.shape} does not match sample {bundle.masks['main'].shape}"
            )

        # Flush the reviewer's words before acting on them (crash safety).
        intent = {
            "index": bundle.index,
            "sample_id": bundle.sample.sample_id,
            "chosen_head": chosen,
            "mask": body["mask"],
        }
        (self.dir / "intents" / f"{bundle.index:05d}.json").write_text(json.dumps(intent))

        self.phase = "adapting"
        try:
            row = self.runner.commit_feedback(corrected, chosen)
        except HittaError:
            self.phase = "awaiting_feedback"
            raise
        if self.runner.records:
            record = self.runner.records[-1]
            if record["sample_id"] == bundle.sample.sample_id:
                (self.dir / "records" / f"{bundle.index:05d}.json").write_text(json.dumps(record))
        self._save_model()
        self.phase = "done" if self.runner.exhausted else "ready"
        self._commit()

        agg = self.runner.report().aggregate()["overall"]
        record = (
            self.runner.records[-1]
            if self.runner.records and self.runner.records[-1]["sample_id"] == row.sample_id
            else None
        )
        return {
            "row": row.to_json(),
            "running": {"n": agg["n"], "vs_r1": agg["vs_r1"], "vs_rstar": agg["vs_rstar"]},
            "loss_trace": record["loss_trace"] if record else [],
            "duration_s": record["duration_s"] if record else None,
            "phase": self.phase,
            "cursor": self.runner.cursor,
        }

    def report_payload(self) -> dict:
        payload = self.runner.report().to_json()
        payload.update(
            phase=self.phase,
            cursor=self.runner.cursor,
            stream_length=len(self.runner.stream),
            method=self.method,
        )
        return payload


class PhaseConflict(HittaError):
    """Request legal only in another phase."""


def _bundle_payload(bundle: PredictionBundle, phase: str) -> dict:
    h, w = bundle.sample.base_mask.shape
    return {
        "done": False,
        "index": bundle.index,
        "sample_id": bundle.sample.sample_id,
        "domain": bundle.domain,
        "rater": bundle.rater,
        "h": h,
        "w": w,
        "image_png_b64": _png_b64(bundle.sample.image),
        "masks": {tag: encode_mask(m) for tag, m in bundle.masks.items()},
        "mdiv": None
        if bundle.mdiv_mean is None
        else {"mean": bundle.mdiv_mean, "max": bundle.mdiv_max},
        "loss_trace": bundle.loss_trace,
        "failed": bundle.failed,
        "phase": phase,
    }


def create_app(state_dir: str | Path = "runs/service"):
    """Build the FastAPI app; sessions persist under `state_dir`."""
    from fastapi import Body, FastAPI, HTTPException
    from fastapi.responses import JSONResponse

    root = Path(state_dir)
    root.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="hitta service", docs_url=None, redoc_url=None)
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    def get_session(session_id: str) -> Session:
        with registry_lock:
            if session_id not in sessions:
                try:
                    sessions[session_id] = Session.load(session_id, root)
                except KeyError:
                    raise HTTPException(404, f"unknown session {session_id!r}") from None
            return sessions[session_id]

    @app.exception_handler(HittaError)
    def _hitta_error(request, exc: HittaError):  # pragma: no cover - thin mapping
        status = 409 if isinstance(exc, PhaseConflict) else 400
        return JSONResponse({"detail": str(exc)}, status_code=status)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session(payload: dict = Body(default_factory=dict)):
        try:
            session = Session.create(payload, root)
        except (ConfigError, ValidationError, FileNotFoundError) as e:
            raise HTTPException(400, str(e)) from e
        with registry_lock:
            sessions[session.id] = session
        return {
            "session_id": session.id,
            "method": session.method,
            "phase": session.phase,
            "cursor": 0,
            "stream_length": len(session.runner.stream),
            "config": session.runner.run.to_dict(),
        }

    @app.get("/sessions/{session_id}/next")
    def next_sample(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.next_payload()

    @app.post("/sessions/{session_id}/feedback")
    def submit_feedback(session_id: str, body: dict = Body(...)):
        session = get_session(session_id)
        with session.lock:
            return session.feedback_payload(body)

    @app.get("/sessions/{session_id}/report")
    def get_report(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.report_payload()

    return app


def main_app():
    """Module-level app for `uvicorn hitta.service:main_app --factory`."""
    return create_app(os.environ.get("HITTA_STATE_DIR", "runs/service"))
