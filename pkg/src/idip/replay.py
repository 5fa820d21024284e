"""Headless multi-phase runs driven by stroke scripts.

A stroke script is a JSON object describing what a user would have
painted between phases, so the full interactive loop can run in CI or
from the command line::

    {
      "phases": 2,
      "iterations": 600,
      "strokes": [
        {"phase": 1, "mode": "guidance", "color": [0.8, 0.1, 0.1],
         "radius": 3, "points": [[10, 12], [11, 12]]}
      ]
    }

`phase` is the 0-based index of the phase the stroke precedes; strokes
with `phase: 0` are applied before any optimisation.  The stroke fields
match the service schema.  An empty script is a plain multi-phase run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .network import NetworkConfig
from .session import (
    PaintStroke,
    RestorationSession,
    apply_refinement,
    create_session,
    run_phase,
)

__all__ = [
    "ScriptedStroke",
    "StrokeScript",
    "ScriptError",
    "parse_stroke_script",
    "load_stroke_script",
    "replay",
]


class ScriptError(ValueError):
    """Stroke script does not match the documented schema."""


@dataclass(frozen=True)
class ScriptedStroke:
    phase: int
    stroke: PaintStroke


@dataclass(frozen=True)
class StrokeScript:
    phases: Optional[int] = None
    iterations: Optional[int] = None
    strokes: tuple[ScriptedStroke, ...] = ()

    @property
    def max_phase(self) -> int:
        return max((s.phase for s in self.strokes), default=-1)


def _expect(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ScriptError(f"{path}: {message}")


def parse_stroke_script(obj) -> StrokeScript:
    """Validate a decoded script object; errors carry the offending field path."""
    _expect(isinstance(obj, dict), "$", f"script must be an object, got {type(obj).__name__}")
    known = {"phases", "iterations", "strokes"}
    for key in obj:
        _expect(key in known, key, "unknown field")
    phases = obj.get("phases")
    if phases is not None:
        _expect(isinstance(phases, int) and phases >= 1, "phases", "must be an integer >= 1")
    iterations = obj.get("iterations")
    if iterations is not None:
        _expect(isinstance(iterations, int) and iterations >= 1, "iterations", "must be an integer >= 1")
    strokes = []
    for i, raw in enumerate(obj.get("strokes", [])):
        path = f"strokes[{i}]"
        _expect(isinstance(raw, dict), path, "must be an object")
        for key in raw:
            _expect(key in {"phase", "mode", "color", "radius", "points"}, f"{path}.{key}", "unknown field")
        phase = raw.get("phase")
        _expect(isinstance(phase, int) and phase >= 0, f"{path}.phase", "must be an integer >= 0")
        mode = raw.get("mode")
        _expect(mode in ("guidance", "correction"), f"{path}.mode", "must be 'guidance' or 'correction'")
        color = raw.get("color", [0.0, 0.0, 0.0])
        _expect(
            isinstance(color, (list, tuple))
            and len(color) == 3
            and all(isinstance(c, (int, float)) and 0.0 <= c <= 1.0 for c in color),
            f"{path}.color",
            "must be [r, g, b] with components in [0, 1]",
        )
        radius = raw.get("radius", 1)
        _expect(isinstance(radius, int) and radius >= 1, f"{path}.radius", "must be an integer >= 1")
        points = raw.get("points")
        _expect(isinstance(points, list) and len(points) >= 1, f"{path}.points", "must be a non-empty list")
        for j, pt in enumerate(points):
            _expect(
                isinstance(pt, (list, tuple))
                and len(pt) == 2
                and all(isinstance(v, int) and v >= 0 for v in pt),
                f"{path}.points[{j}]",
                "must be [x, y] with non-negative integers",
            )
        try:
            stroke = PaintStroke(
                points=tuple((int(x), int(y)) for x, y in points),
                color=tuple(float(c) for c in color),
                radius=int(radius),
                mode=mode,
            )
        except ValueError as exc:
            raise ScriptError(f"{path}: {exc}") from exc
        strokes.append(ScriptedStroke(phase=phase, stroke=stroke))
    return StrokeScript(phases=phases, iterations=iterations, strokes=tuple(strokes))


def load_stroke_script(path) -> StrokeScript:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScriptError(f"$: not valid JSON ({exc})") from exc
    return parse_stroke_script(obj)


def replay(
    corrupted: np.ndarray,
    mask_grid: np.ndarray,
    script: Optional[StrokeScript] = None,
    *,
    phases: Optional[int] = None,
    iterations: Optional[int] = None,
    config: Optional[NetworkConfig] = None,
    seed: Optional[int] = None,
    session_id: Optional[str] = None,
    callback: Optional[Callable[[int, int, float], None]] = None,
) -> RestorationSession:
    """Run a scripted session: apply phase-k strokes, then run phase k.

    Explicit arguments override script fields, which override defaults
    (2 phases, the config's per-phase iteration budget).  Returns the
    finished session; its last snapshot holds the output composite.
    """
    script = script or StrokeScript()
    config = config or NetworkConfig()
    n_phases = phases if phases is not None else (script.phases if script.phases is not None else 2)
    per_phase = iterations if iterations is not None else (script.iterations if script.iterations is not None else config.iterations_per_phase)
    if script.max_phase >= n_phases:
        raise ScriptError(f"strokes reference phase {script.max_phase} but only {n_phases} phases run")

    session = create_session(corrupted, mask_grid, config=config, seed=seed, session_id=session_id)
    for k in range(n_phases):
        batch = [s.stroke for s in script.strokes if s.phase == k]
        if batch:
            apply_refinement(session, batch)

        def on_iteration(it, record, _out, _phase=k):
            if callback is not None:
                callback(_phase, it, record.value)

        run_phase(session, per_phase, callback=on_iteration)
    return session
