"""Interactive restoration sessions.

A session cycles through: present the current composite, fold user paint
back into the target and mask, then optimise again.  Guidance strokes
turn damaged pixels into known constraints carrying the painted colour;
correction strokes re-declare pixels as damaged and revert them to the
original corrupted values.  Network parameters and Adam state persist
across phases (warm start), so a phase continues training rather than
starting over.
"""

from __future__ import annotations

import io
import json
import time
import uuid
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .dip import (
    CancelToken,
    DamageMask,
    LossValue,
    OptimizeResult,
    TargetImage,
    optimize,
    pad_to_multiple,
)
from .network import DipNetwork, ModelParameters, NetworkConfig, NoiseInput, build_network

__all__ = [
    "PaintStroke",
    "SessionSnapshot",
    "RestorationSession",
    "SessionStateError",
    "create_session",
    "apply_refinement",
    "run_phase",
    "stop",
    "save_session",
    "load_session",
]

SESSION_FORMAT = "idip-session/1"

GUIDANCE = "guidance"
CORRECTION = "correction"


class SessionStateError(RuntimeError):
    """Operation not allowed in the session's current status."""


@dataclass(frozen=True)
class PaintStroke:
    """A brush gesture: a disc of radius ``radius`` dragged through ``points``.

    ``radius`` counts strictly (``dx*dx + dy*dy < radius**2``), so radius 1
    is a single-pixel brush.  Coordinates are (x, y) with x = column;
    out-of-bounds points are clipped, not rejected.
    """

    points: tuple[tuple[int, int], ...]
    color: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: int = 1
    mode: str = GUIDANCE

    def __post_init__(self):
        if self.mode not in (GUIDANCE, CORRECTION):
            raise ValueError(f"stroke mode must be guidance or correction, got {self.mode!r}")
        if self.radius < 1:
            raise ValueError(f"brush radius must be positive, got {self.radius}")
        object.__setattr__(self, "points", tuple((int(x), int(y)) for x, y in self.points))
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))

    def coverage(self, height: int, width: int) -> np.ndarray:
        """Boolean HxW map of the pixels this stroke touches."""
        covered = np.zeros((height, width), dtype=bool)
        if not self.points:
            return covered
        offs = _disc_offsets(self.radius)
        pts = np.asarray(self.points, dtype=np.int64)
        xs = (pts[:, 0][:, None] + offs[:, 0][None, :]).ravel()
        ys = (pts[:, 1][:, None] + offs[:, 1][None, :]).ravel()
        keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
        covered[ys[keep], xs[keep]] = True
        return covered


def _disc_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    span = np.arange(-r + 1, r)
    dx, dy = np.meshgrid(span, span)
    inside = dx * dx + dy * dy < r * r
    return np.stack([dx[inside], dy[inside]], axis=1)


@dataclass(frozen=True)
class SessionSnapshot:
    """Immutable record of one completed phase."""

    phase: int
    image: np.ndarray  # [1,3,H,W] composite presented to the user
    mask_grid: np.ndarray
    trace: tuple[LossValue, ...]
    duration: float
    cancelled: bool = False

    def __post_init__(self):
        self.image.setflags(write=False)
        self.mask_grid.setflags(write=False)

    def image_array(self, orig_height: Optional[int] = None, orig_width: Optional[int] = None) -> np.ndarray:
        arr = self.image[0].transpose(1, 2, 0)
        if orig_height is not None:
            arr = arr[:orig_height, :orig_width]
        return np.ascontiguousarray(arr)


IDLE = "idle"
OPTIMIZING = "optimizing"
STOPPED = "stopped"


class RestorationSession:
    """State of one interactive restoration: network, target, mask, history."""

    def __init__(
        self,
        session_id: str,
        config: NetworkConfig,
        seed: int,
        network: DipNetwork,
        params: ModelParameters,
        noise: NoiseInput,
        original: np.ndarray,
        target: TargetImage,
        mask: DamageMask,
    ):
        self.id = session_id
        self.config = config
        self.seed = seed
        self.network = network
        self.params = params
        self.noise = noise
        self.original = original  # corrupted input, [1,3,H,W], padded
        self.target = target  # current x_n'
        self.mask = mask
        self.phase = 0
        self.status = IDLE
        self.history: list[SessionSnapshot] = []
        self.cancel = CancelToken()

    @property
    def height(self) -> int:
        return self.target.height

    @property
    def width(self) -> int:
        return self.target.width

    def latest_loss(self) -> Optional[float]:
        for snap in reversed(self.history):
            if snap.trace:
                return snap.trace[-1].value
        return None

    def current_composite(self) -> np.ndarray:
        """[1,3,H,W] image to present: last snapshot, else the raw target."""
        if self.history:
            return self.history[-1].image
        return self.target.pixels.data

    def composite_array(self, crop: bool = True) -> np.ndarray:
        arr = self.current_composite()[0].transpose(1, 2, 0)
        if crop:
            arr = arr[: self.target.orig_height, : self.target.orig_width]
        return np.ascontiguousarray(arr)


def create_session(
    corrupted: np.ndarray,
    mask_grid: np.ndarray,
    config: Optional[NetworkConfig] = None,
    seed: Optional[int] = None,
    session_id: Optional[str] = None,
) -> RestorationSession:
    """Start a session from an HxWx3 corrupted image in [0,1] and an HxW mask.

    Both are reflection-padded to the network's size multiple; no
    optimisation runs yet (phase counter starts at 0 with empty history).
    """
    config = config or NetworkConfig()
    seed = config.seed if seed is None else int(seed)
    if corrupted.ndim != 3 or corrupted.shape[2] != 3:
        raise ValueError(f"corrupted image must be HxWx3, got shape {corrupted.shape}")
    if mask_grid.shape != corrupted.shape[:2]:
        raise ValueError(
            f"mask shape {mask_grid.shape} does not match image {corrupted.shape[:2]}"
        )
    mask = DamageMask(mask_grid).pad_to_multiple(config.size_multiple)
    if mask.known_count() == 0:
        raise ValueError("mask marks every pixel as damaged; nothing to optimise against")
    target = TargetImage.from_array(corrupted, config.size_multiple)
    network, params = build_network(config, seed)
    noise = NoiseInput.create(config, target.height, target.width, seed)
    original = target.pixels.data.copy()
    original.setflags(write=False)
    return RestorationSession(
        session_id=session_id or uuid.uuid4().hex[:12],
        config=config,
        seed=seed,
        network=network,
        params=params,
        noise=noise,
        original=original,
        target=target,
        mask=mask,
    )


def apply_refinement(session: RestorationSession, strokes: Sequence[PaintStroke]) -> dict:
    """Fold paint strokes into (target, mask), in order.

    Guidance converts covered damaged pixels into known constraints with
    the stroke colour; covered pixels that are already known are left
    untouched.  Correction re-declares covered pixels as damaged and
    reverts them to the original corrupted values.  Returns per-mode
    counts of affected pixels.
    """
    if session.status == OPTIMIZING:
        raise SessionStateError("cannot paint while a phase is optimising")
    h, w = session.height, session.width
    grid = session.mask.grid.copy()
    pixels = session.target.pixels.data.copy()
    painted = 0
    corrected = 0
    for stroke in strokes:
        covered = stroke.coverage(h, w)
        if stroke.mode == GUIDANCE:
            hit = covered & (grid == 0)
            pixels[0, :, hit] = np.asarray(stroke.color, dtype=pixels.dtype)
            grid[hit] = 1
            painted += int(hit.sum())
        else:
            pixels[0, :, covered] = session.original[0, :, covered]
            grid[covered] = 0
            corrected += int(covered.sum())
    session.mask = DamageMask(grid)
    session.target = session.target.replace_pixels(pixels)
    return {"guidance_pixels": painted, "correction_pixels": corrected}


def run_phase(
    session: RestorationSession,
    iterations: Optional[int] = None,
    callback=None,
) -> SessionSnapshot:
    """Run one optimisation phase and record its snapshot.

    The snapshot composite keeps known pixels verbatim from the target and
    takes damaged pixels from the network output; it becomes the target
    for the next phase.  Parameters warm-start from the previous phase.
    """
    if session.status == OPTIMIZING:
        raise SessionStateError("a phase is already running")
    iterations = session.config.iterations_per_phase if iterations is None else int(iterations)
    session.cancel.clear()
    session.status = OPTIMIZING
    start = time.perf_counter()
    try:
        result = optimize(
            session.network,
            session.params,
            session.noise,
            session.target,
            session.mask,
            iterations,
            config=session.config,
            callback=callback,
            cancel=session.cancel,
        )
    except Exception:
        session.status = IDLE
        raise
    duration = time.perf_counter() - start
    composite = composite_image(result.output, session.target.pixels.data, session.mask)
    snapshot = SessionSnapshot(
        phase=session.phase,
        image=composite,
        mask_grid=session.mask.grid.copy(),
        trace=tuple(result.trace),
        duration=duration,
        cancelled=result.cancelled,
    )
    session.history.append(snapshot)
    session.phase += 1
    session.target = session.target.replace_pixels(composite.copy())
    session.status = STOPPED if result.cancelled else IDLE
    return snapshot


def composite_image(output: np.ndarray, target: np.ndarray, mask: DamageMask) -> np.ndarray:
    """Known pixels verbatim from the target, damaged pixels from f(z)."""
    known = mask.grid.astype(bool)[None, None]
    return np.where(known, target, output).astype(np.float32)


def stop(session: RestorationSession) -> None:
    """Request the current phase to end at the next iteration boundary.

    Idempotent; a no-op on idle sessions (the flag is reset when the next
    phase starts).
    """
    session.cancel.set()


# ---------------------------------------------------------------------------
# persistence


def save_session(session: RestorationSession, path) -> None:
    """Write an idle session to one self-contained .npz container."""
    if session.status == OPTIMIZING:
        raise SessionStateError("cannot persist a session while it is optimising")
    meta = {
        "format": SESSION_FORMAT,
        "id": session.id,
        "seed": session.seed,
        "config": session.config.to_dict(),
        "phase": session.phase,
        "status": IDLE,
        "orig_height": session.target.orig_height,
        "orig_width": session.target.orig_width,
        "adam_step": session.params.step,
        "param_names": session.params.names,
        "history": [
            {
                "phase": snap.phase,
                "duration": snap.duration,
                "cancelled": snap.cancelled,
                "trace_values": [lv.value for lv in snap.trace],
                "trace_iterations": [lv.iteration for lv in snap.trace],
            }
            for snap in session.history
        ],
    }
    arrays: dict[str, np.ndarray] = {
        "meta_json": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        "original": session.original,
        "target": session.target.pixels.data,
        "mask": session.mask.grid,
        "noise": session.noise.z.data,
    }
    for name in session.params.names:
        key = name.replace(".", "__")
        arrays[f"theta_{key}"] = session.params.tensors[name].data
        arrays[f"adam_m_{key}"] = session.params.m[name]
        arrays[f"adam_v_{key}"] = session.params.v[name]
    for i, snap in enumerate(session.history):
        arrays[f"snap_image_{i}"] = snap.image
        arrays[f"snap_mask_{i}"] = snap.mask_grid
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_session(path) -> RestorationSession:
    """Restore a session saved by :func:`save_session`."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(arrays["meta_json"].tobytes().decode())
    if meta.get("format") != SESSION_FORMAT:
        raise ValueError(f"unsupported session format tag {meta.get('format')!r}")
    config = NetworkConfig.from_dict(meta["config"])
    network, params = build_network(config, meta["seed"])
    if params.names != meta["param_names"]:
        raise ValueError("session file parameters do not match the configured architecture")
    for name in params.names:
        key = name.replace(".", "__")
        np.copyto(params.tensors[name].data, arrays[f"theta_{key}"])
        np.copyto(params.m[name], arrays[f"adam_m_{key}"])
        np.copyto(params.v[name], arrays[f"adam_v_{key}"])
    params.step = int(meta["adam_step"])

    from .engine import Tensor  # local import to keep module surface tidy

    target = TargetImage(Tensor(arrays["target"]), meta["orig_height"], meta["orig_width"])
    noise_arr = arrays["noise"]
    noise_arr.setflags(write=False)
    noise = NoiseInput(z=Tensor(noise_arr), seed=int(meta["seed"]))
    original = arrays["original"]
    original.setflags(write=False)
    session = RestorationSession(
        session_id=meta["id"],
        config=config,
        seed=int(meta["seed"]),
        network=network,
        params=params,
        noise=noise,
        original=original,
        target=target,
        mask=DamageMask(arrays["mask"]),
    )
    session.phase = int(meta["phase"])
    for i, rec in enumerate(meta["history"]):
        trace = tuple(
            LossValue(value=v, iteration=it)
            for v, it in zip(rec["trace_values"], rec["trace_iterations"])
        )
        session.history.append(
            SessionSnapshot(
                phase=rec["phase"],
                image=arrays[f"snap_image_{i}"],
                mask_grid=arrays[f"snap_mask_{i}"],
                trace=trace,
                duration=rec["duration"],
                cancelled=rec["cancelled"],
            )
        )
    return session
