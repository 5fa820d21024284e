"""Local HTTP service exposing restoration sessions.

Endpoints live under a versioned prefix (`/api/v1`) and exchange JSON;
image payloads travel as base64-encoded PNG.  A bounded worker pool runs
optimisation phases off the request path, and each session appends to an
in-memory event log that the progress stream replays: progress events at
a throttled cadence (every `cadence` iterations and at phase end), then
one final snapshot event carrying the full-resolution composite.  Event
sequence numbers increase strictly per session so a dropped stream can
resume with `?after=` or the `Last-Event-ID` header.

Idle sessions persist to `<state_dir>/<id>.npz` after every mutation and
reload on startup with an identical state view.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import threading
import time
import uuid
from collections import deque
from contextlib import asynccontextmanager
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, RedirectResponse, Response, StreamingResponse
from PIL import Image
from pydantic import BaseModel, Field

from . import __version__
from . import session as sess
from .metrics import evaluate, fitted_window
from .network import NetworkConfig
from .store import ImageFormatError, load_image, load_mask

__all__ = ["create_app", "ServiceState", "STREAM_CADENCE", "MAX_UPLOAD_BYTES", "PREVIEW_MAX_SIDE"]

API_PREFIX = "/api/v1"
STREAM_CADENCE = 25
PREVIEW_MAX_SIDE = 256
MAX_UPLOAD_BYTES = 16 * 1024 * 1024
_B64_PREFIX = "base64,"


# ---------------------------------------------------------------------------
# request/response schemas


class CreateSessionRequest(BaseModel):
    image: str = Field(description="base64 PNG, the corrupted input")
    mask: str = Field(description="base64 PNG; pixels >= 128 are known")
    seed: int = 0
    config: Optional[dict[str, Any]] = None
    session_id: Optional[str] = Field(default=None, pattern=r"^[A-Za-z0-9_-]{1,64}$")


class StrokeModel(BaseModel):
    mode: Literal["guidance", "correction"]
    color: tuple[float, float, float] = Field(default=(0.0, 0.0, 0.0))
    radius: int = Field(ge=1, le=256)
    points: list[tuple[int, int]] = Field(min_length=1, max_length=100_000)

    def to_stroke(self) -> sess.PaintStroke:
        return sess.PaintStroke(
            points=tuple((int(x), int(y)) for x, y in self.points),
            color=tuple(float(c) for c in self.color),
            radius=int(self.radius),
            mode=self.mode,
        )


class StrokesRequest(BaseModel):
    strokes: list[StrokeModel] = Field(min_length=1, max_length=1024)


class PhaseRequest(BaseModel):
    iterations: Optional[int] = Field(default=None, ge=1, le=1_000_000)


class MetricsRequest(BaseModel):
    truth: str = Field(description="base64 PNG ground truth at original size")
    window_k: int = Field(default=1, ge=1)


# ---------------------------------------------------------------------------
# per-session event channel


class SessionChannel:
    """Monotone event log plus the busy flag for one session."""

    def __init__(self, maxlen: int = 4096):
        self.cond = threading.Condition()
        self.events: deque[dict] = deque(maxlen=maxlen)
        self.seq = 0
        self.pending = False

    def emit(self, kind: str, payload: dict) -> dict:
        with self.cond:
            self.seq += 1
            event = {"seq": self.seq, "type": kind, **payload}
            self.events.append(event)
            self.cond.notify_all()
            return event

    def since(self, cursor: int) -> list[dict]:
        with self.cond:
            return [e for e in self.events if e["seq"] > cursor]

    def set_pending(self) -> None:
        with self.cond:
            self.pending = True

    def clear_pending(self) -> None:
        with self.cond:
            self.pending = False
            self.cond.notify_all()


class ServiceState:
    """Registry of live sessions, their channels and the worker pool."""

    def __init__(self, state_dir=None, workers: int = 2):
        self.sessions: dict[str, sess.RestorationSession] = {}
        self.channels: dict[str, SessionChannel] = {}
        self.locks: dict[str, threading.RLock] = {}
        self.registry_lock = threading.Lock()
        self.executor = ThreadPoolExecutor(max_workers=workers)
        self.state_dir = Path(state_dir) if state_dir else None

    def add(self, session: sess.RestorationSession) -> None:
        with self.registry_lock:
            self.sessions[session.id] = session
            self.channels[session.id] = SessionChannel()
            self.locks[session.id] = threading.RLock()

    def get(self, session_id: str) -> tuple[sess.RestorationSession, SessionChannel, threading.RLock]:
        with self.registry_lock:
            if session_id not in self.sessions:
                raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
            return self.sessions[session_id], self.channels[session_id], self.locks[session_id]

    def busy(self, session_id: str) -> bool:
        session = self.sessions[session_id]
        channel = self.channels[session_id]
        return channel.pending or session.status == sess.OPTIMIZING

    def session_path(self, session_id: str) -> Optional[Path]:
        if self.state_dir is None:
            return None
        return self.state_dir / f"{session_id}.npz"

    def persist(self, session_id: str) -> None:
        path = self.session_path(session_id)
        if path is None:
            return
        session = self.sessions[session_id]
        path.parent.mkdir(parents=True, exist_ok=True)
        sess.save_session(session, path)

    def restore_all(self) -> int:
        if self.state_dir is None or not self.state_dir.is_dir():
            return 0
        count = 0
        for path in sorted(self.state_dir.glob("*.npz")):
            session = sess.load_session(path)
            self.add(session)
            count += 1
        return count


# ---------------------------------------------------------------------------
# payload helpers


class _NamedBytesIO(io.BytesIO):
    def __init__(self, data: bytes, label: str):
        super().__init__(data)
        self._label = label

    def __repr__(self):  # surfaces in I/O error messages
        return self._label


def _decode_b64(payload: str, what: str) -> bytes:
    if _B64_PREFIX in payload[:64]:
        payload = payload.split(_B64_PREFIX, 1)[1]
    if len(payload) > (MAX_UPLOAD_BYTES * 4) // 3 + 1024:
        raise HTTPException(status_code=413, detail=f"{what}: upload exceeds {MAX_UPLOAD_BYTES} bytes")
    try:
        data = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise HTTPException(status_code=400, detail=f"{what}: invalid base64 payload") from exc
    if len(data) > MAX_UPLOAD_BYTES:
        raise HTTPException(status_code=413, detail=f"{what}: upload exceeds {MAX_UPLOAD_BYTES} bytes")
    return data


def _decode_image(payload: str, what: str) -> np.ndarray:
    data = _decode_b64(payload, what)
    try:
        return load_image(_NamedBytesIO(data, what))
    except ImageFormatError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def _decode_mask_grid(payload: str, what: str) -> np.ndarray:
    data = _decode_b64(payload, what)
    try:
        return load_mask(_NamedBytesIO(data, what)).grid
    except ImageFormatError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def _png_bytes(arr: np.ndarray) -> bytes:
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _png_b64(arr: np.ndarray) -> str:
    return base64.b64encode(_png_bytes(arr)).decode("ascii")


def _preview_b64(arr: np.ndarray) -> str:
    """Downscale HxWx3 [0,1] to fit PREVIEW_MAX_SIDE (nearest) as base64 PNG."""
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = u8.shape[:2]
    side = max(h, w)
    if side > PREVIEW_MAX_SIDE:
        scale = PREVIEW_MAX_SIDE / side
        nw = max(1, int(round(w * scale)))
        nh = max(1, int(round(h * scale)))
        img = Image.fromarray(u8).resize((nw, nh), Image.NEAREST)
        u8 = np.asarray(img)
    return _png_b64(u8)


def _cropped_mask_grid(session: sess.RestorationSession) -> np.ndarray:
    t = session.target
    return session.mask.grid[: t.orig_height, : t.orig_width]


def _session_view(state: ServiceState, session: sess.RestorationSession) -> dict:
    channel = state.channels[session.id]
    grid = _cropped_mask_grid(session)
    status = "optimizing" if state.busy(session.id) else session.status
    loss = session.latest_loss()
    return {
        "id": session.id,
        "phase": session.phase,
        "status": status,
        "known_fraction": float(grid.mean(dtype=np.float64)),
        "latest_loss": None if loss is None else float(loss),
        "seq": channel.seq,
        "width": session.target.orig_width,
        "height": session.target.orig_height,
        "iterations_per_phase": session.config.iterations_per_phase,
    }


def _sse(event: dict) -> str:
    body = json.dumps({k: v for k, v in event.items() if k != "seq"}, separators=(",", ":"))
    return f"id: {event['seq']}\nevent: {event['type']}\ndata: {body}\n\n"


# ---------------------------------------------------------------------------
# app factory


def create_app(state_dir=None, ui_dir=None, workers: int = 2) -> FastAPI:
    """Build the service app; `state_dir` enables persistence across restarts."""
    state = ServiceState(state_dir=state_dir, workers=workers)

    @asynccontextmanager
    async def _lifespan(app: FastAPI):
        yield
        state.executor.shutdown(wait=True, cancel_futures=True)

    app = FastAPI(title="idip restoration service", version=__version__, lifespan=_lifespan)
    app.state.idip = state
    state.restore_all()

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        errors = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err.get("loc", ()) if p != "body")
            errors.append({"field": loc, "message": err.get("msg", "invalid value")})
        first = errors[0] if errors else {"field": "", "message": "invalid request"}
        return JSONResponse(
            status_code=400,
            content={"detail": f"{first['field']}: {first['message']}", "errors": errors},
        )

    @app.middleware("http")
    async def _size_guard(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and length.isdigit() and int(length) > 4 * MAX_UPLOAD_BYTES:
            return JSONResponse(status_code=413, content={"detail": "request body too large"})
        return await call_next(request)

    @app.get(API_PREFIX + "/health")
    def health():
        return {"status": "ok"}

    @app.get(API_PREFIX + "/sessions")
    def list_sessions():
        with state.registry_lock:
            ids = sorted(state.sessions)
        return {"sessions": [_session_view(state, state.sessions[i]) for i in ids]}

    @app.post(API_PREFIX + "/sessions", status_code=201)
    def create(req: CreateSessionRequest):
        image = _decode_image(req.image, "image")
        grid = _decode_mask_grid(req.mask, "mask")
        config = NetworkConfig()
        if req.config:
            merged = config.to_dict()
            for key in req.config:
                if key not in merged:
                    raise HTTPException(status_code=400, detail=f"config.{key}: unknown setting")
            merged.update(req.config)
            try:
                config = NetworkConfig.from_dict(merged)
            except (TypeError, ValueError) as exc:
                raise HTTPException(status_code=400, detail=f"config: {exc}") from exc
        session_id = req.session_id or uuid.uuid4().hex[:12]
        with state.registry_lock:
            if session_id in state.sessions:
                raise HTTPException(status_code=409, detail=f"session {session_id!r} already exists")
        try:
            session = sess.create_session(image, grid, config=config, seed=req.seed, session_id=session_id)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        state.add(session)
        _, _, lock = state.get(session_id)
        with lock:
            state.persist(session_id)
        return _session_view(state, session)

    @app.get(API_PREFIX + "/sessions/{session_id}")
    def get_state(session_id: str):
        session, _, _ = state.get(session_id)
        return _session_view(state, session)

    @app.post(API_PREFIX + "/sessions/{session_id}/strokes")
    def submit_strokes(session_id: str, req: StrokesRequest):
        session, _, lock = state.get(session_id)
        with lock:
            if state.busy(session_id):
                raise HTTPException(status_code=409, detail="session is optimizing; strokes rejected")
            try:
                strokes = [m.to_stroke() for m in req.strokes]
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=f"strokes: {exc}") from exc
            counts = sess.apply_refinement(session, strokes)
            state.persist(session_id)
        view = _session_view(state, session)
        view["applied"] = counts
        return view

    @app.post(API_PREFIX + "/sessions/{session_id}/phase", status_code=202)
    def start_phase(session_id: str, req: PhaseRequest):
        session, channel, lock = state.get(session_id)
        with lock:
            if state.busy(session_id):
                raise HTTPException(status_code=409, detail="a phase is already running")
            iterations = req.iterations or session.config.iterations_per_phase
            channel.set_pending()
            state.executor.submit(_run_phase_job, state, session_id, iterations)
        return _session_view(state, session)

    @app.post(API_PREFIX + "/sessions/{session_id}/stop")
    def stop_phase(session_id: str):
        session, _, _ = state.get(session_id)
        sess.stop(session)
        return _session_view(state, session)

    @app.get(API_PREFIX + "/sessions/{session_id}/stream")
    def stream(session_id: str, request: Request, after: Optional[int] = None, follow: bool = False, timeout: float = 300.0):
        _, channel, _ = state.get(session_id)
        if after is None:
            last_id = request.headers.get("last-event-id", "")
            after = int(last_id) if last_id.isdigit() else 0

        def generate(cursor: int):
            deadline = time.monotonic() + timeout
            while True:
                batch = channel.since(cursor)
                for event in batch:
                    cursor = event["seq"]
                    yield _sse(event)
                with channel.cond:
                    drained = channel.seq <= cursor
                    busy = channel.pending
                    if drained and busy:
                        channel.cond.wait(timeout=0.25)
                if drained and not busy and not state.busy(session_id):
                    if not follow:
                        return
                    with channel.cond:
                        if channel.seq <= cursor:
                            channel.cond.wait(timeout=0.25)
                if time.monotonic() > deadline:
                    return

        headers = {"Cache-Control": "no-cache", "X-Accel-Buffering": "no"}
        return StreamingResponse(generate(int(after)), media_type="text/event-stream", headers=headers)

    @app.get(API_PREFIX + "/sessions/{session_id}/result")
    def result(session_id: str):
        session, _, _ = state.get(session_id)
        arr = session.composite_array(crop=True)
        return Response(content=_png_bytes(arr), media_type="image/png")

    @app.get(API_PREFIX + "/sessions/{session_id}/mask")
    def mask(session_id: str):
        session, _, _ = state.get(session_id)
        grid = (_cropped_mask_grid(session) * 255).astype(np.uint8)
        return Response(content=_png_bytes(grid), media_type="image/png")

    @app.post(API_PREFIX + "/sessions/{session_id}/metrics")
    def metrics(session_id: str, req: MetricsRequest):
        session, _, _ = state.get(session_id)
        truth = _decode_image(req.truth, "truth")
        restored = session.composite_array(crop=True)
        if truth.shape != restored.shape:
            raise HTTPException(
                status_code=400,
                detail=f"truth: shape {truth.shape[:2]} does not match session {restored.shape[:2]}",
            )
        # shrink the SSIM window for small images so tiny sessions still score
        window = fitted_window(restored.shape[0], restored.shape[1])
        try:
            report = evaluate(restored, truth, image_id=session.id,
                              window_k=req.window_k, ssim_window=window)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"metrics: {exc}") from exc
        return {
            "id": session.id,
            "dssim": report.dssim,
            "lmse": report.lmse,
            "mse": report.mse,
            "window_k": report.window_k,
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

        @app.get("/")
        def index():
            return RedirectResponse(url="/ui/")

    else:

        @app.get("/")
        def index():
            return {"service": "idip restoration service", "api": API_PREFIX}

    return app


def _run_phase_job(state: ServiceState, session_id: str, iterations: int) -> None:
    """Worker-pool body for one phase: throttled progress, final snapshot."""
    session, channel, lock = state.get(session_id)
    t = session.target
    phase_index = session.phase

    def on_iteration(iteration: int, record, output: np.ndarray):
        if iteration % STREAM_CADENCE == 0 or iteration == iterations:
            arr = output[0].transpose(1, 2, 0)[: t.orig_height, : t.orig_width]
            channel.emit(
                "progress",
                {
                    "phase": phase_index,
                    "iteration": iteration,
                    "loss": float(record.value),
                    "preview": _preview_b64(arr),
                },
            )

    try:
        try:
            snapshot = sess.run_phase(session, iterations, callback=on_iteration)
        except Exception as exc:
            channel.emit("error", {"phase": phase_index, "message": f"{type(exc).__name__}: {exc}"})
            return
        image = snapshot.image_array(t.orig_height, t.orig_width)
        last = snapshot.trace[-1] if snapshot.trace else None
        channel.emit(
            "snapshot",
            {
                "phase": snapshot.phase,
                "iteration": 0 if last is None else last.iteration,
                "loss": None if last is None else float(last.value),
                "cancelled": snapshot.cancelled,
                "image": _png_b64(image),
            },
        )
        try:
            with lock:
                state.persist(session_id)
        except Exception as exc:
            channel.emit("error", {"phase": phase_index, "message": f"persist failed: {exc}"})
    finally:
        channel.clear_pending()
