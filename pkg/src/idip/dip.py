"""Masked reconstruction loss and the inner optimisation loop.

The loop repeatedly renders the network from its fixed noise input,
scores it against the target on known pixels only, and applies one Adam
step.  Damaged pixels carry zero weight, so they contribute nothing to
either the loss value or the gradients; the network fills them purely
from its own inductive bias.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import Tensor, backward, mse_reduce, no_grad
from .network import DipNetwork, ModelParameters, NetworkConfig, NoiseInput
from .optim import adam_step

__all__ = [
    "TargetImage",
    "DamageMask",
    "LossValue",
    "CancelToken",
    "OptimizeResult",
    "NonFiniteLossError",
    "masked_loss",
    "optimize",
    "pad_to_multiple",
]

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """The loss left the finite range; parameters were rolled back."""


def pad_to_multiple(arr: np.ndarray, multiple: int) -> np.ndarray:
    """Reflection-pad the two leading (spatial) axes up to a multiple.

    Falls back to edge replication when the image is smaller than the
    required padding, which reflection cannot express.
    """
    h, w = arr.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return arr
    pads = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    mode = "reflect" if ph <= h - 1 and pw <= w - 1 else "edge"
    return np.pad(arr, pads, mode=mode)


class TargetImage:
    """An RGB target held as a [1,3,H,W] tensor with values in [0, 1].

    The stored array is padded so both sides divide the network's size
    multiple; ``to_array`` crops back to the original extent.
    """

    def __init__(self, pixels: Tensor, orig_height: int, orig_width: int):
        if pixels.data.ndim != 4 or pixels.shape[0] != 1 or pixels.shape[1] != 3:
            raise ValueError(f"target must be [1,3,H,W], got {pixels.shape}")
        self.pixels = pixels
        self.orig_height = orig_height
        self.orig_width = orig_width

    @classmethod
    def from_array(cls, arr: np.ndarray, multiple: int = 1, dtype=np.float32) -> "TargetImage":
        """Build from an HxWx3 float array in [0, 1]."""
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected HxWx3 array, got shape {arr.shape}")
        h, w = arr.shape[:2]
        padded = pad_to_multiple(arr.astype(dtype, copy=False), multiple)
        chw = np.ascontiguousarray(padded.transpose(2, 0, 1)[None])
        return cls(Tensor(chw), h, w)

    @property
    def height(self) -> int:
        return self.pixels.shape[2]

    @property
    def width(self) -> int:
        return self.pixels.shape[3]

    def to_array(self, crop: bool = True) -> np.ndarray:
        """Return HxWx3 float32 pixels, cropped to the original size."""
        arr = self.pixels.data[0].transpose(1, 2, 0)
        if crop:
            arr = arr[: self.orig_height, : self.orig_width]
        return np.ascontiguousarray(arr)

    def replace_pixels(self, chw: np.ndarray) -> "TargetImage":
        return TargetImage(Tensor(chw.astype(np.float32, copy=False)), self.orig_height, self.orig_width)


class DamageMask:
    """Per-pixel known/damaged indicator: 1 = known, 0 = damaged."""

    def __init__(self, grid: np.ndarray):
        g = np.asarray(grid)
        if g.ndim != 2:
            raise ValueError(f"mask grid must be HxW, got shape {g.shape}")
        if not np.isin(g, (0, 1)).all():
            raise ValueError("mask grid must be binary (0 = damaged, 1 = known)")
        self.grid = g.astype(np.uint8)

    @classmethod
    def all_known(cls, height: int, width: int) -> "DamageMask":
        return cls(np.ones((height, width), dtype=np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def known_count(self) -> int:
        return int(self.grid.sum())

    def damaged_count(self) -> int:
        return self.grid.size - self.known_count()

    def known_fraction(self) -> float:
        return self.known_count() / self.grid.size

    def pad_to_multiple(self, multiple: int) -> "DamageMask":
        return DamageMask(pad_to_multiple(self.grid, multiple))

    def copy(self) -> "DamageMask":
        return DamageMask(self.grid.copy())

    def weight_tensor(self, channels: int = 3, dtype=np.float32) -> Tensor:
        """Known-pixel indicator expanded to [1,channels,H,W] for the loss."""
        w = np.broadcast_to(self.grid.astype(dtype), (1, channels) + self.grid.shape)
        return Tensor(np.ascontiguousarray(w))

    def __eq__(self, other) -> bool:
        return isinstance(other, DamageMask) and np.array_equal(self.grid, other.grid)


@dataclass(frozen=True)
class LossValue:
    value: float
    iteration: int


class CancelToken:
    """Cooperative cancellation flag, safe to set from any thread."""

    def __init__(self):
        self._event = threading.Event()

    def set(self) -> None:
        self._event.set()

    def clear(self) -> None:
        self._event.clear()

    def is_set(self) -> bool:
        return self._event.is_set()


def masked_loss(net_output: Tensor, target: TargetImage, mask: DamageMask) -> Tensor:
    """Reconstruction error restricted to known pixels (scalar tensor).

    With an all-damaged mask the loss is identically zero and optimisation
    would be vacuous; that case is allowed but logged.
    """
    if (net_output.shape[2], net_output.shape[3]) != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match output {net_output.shape}")
    if mask.known_count() == 0:
        log.warning("all-damaged mask: loss is vacuously zero")
    weight = mask.weight_tensor(channels=net_output.shape[1], dtype=net_output.dtype)
    return mse_reduce(net_output, target.pixels, weight)


@dataclass
class OptimizeResult:
    output: np.ndarray  # [1,3,H,W], f(z) rendered with the final parameters
    trace: list[LossValue]
    cancelled: bool


def optimize(
    network: DipNetwork,
    params: ModelParameters,
    noise: NoiseInput,
    target: TargetImage,
    mask: DamageMask,
    iterations: int,
    *,
    config: Optional[NetworkConfig] = None,
    callback: Optional[Callable[[int, LossValue, np.ndarray], None]] = None,
    cancel: Optional[CancelToken] = None,
) -> OptimizeResult:
    """Run forward -> masked loss -> backward -> Adam for ``iterations`` steps.

    The callback observes ``(iteration, loss, current_output)`` once per
    completed iteration and must not block.  Cancellation is checked at
    every iteration boundary; a cancelled run returns the trace recorded
    so far.  A non-finite loss rolls the parameters back to the last
    finite state and raises :class:`NonFiniteLossError`.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    cfg = config or network.config
    weight = mask.weight_tensor(channels=3, dtype=noise.z.dtype)
    trace: list[LossValue] = []
    checkpoint = None
    cancelled = False

    for it in range(1, iterations + 1):
        if cancel is not None and cancel.is_set():
            cancelled = True
            break
        out = network.forward(noise.z)
        loss = mse_reduce(out, target.pixels, weight)
        value = loss.item()
        if not np.isfinite(value):
            diagnostic = f"non-finite loss {value!r} at iteration {it}"
            if checkpoint is not None:
                params.restore(checkpoint)
                diagnostic += "; parameters rolled back to last finite state"
            raise NonFiniteLossError(diagnostic)
        checkpoint = params.snapshot()
        record = LossValue(value=value, iteration=it)
        trace.append(record)
        backward(loss)
        adam_step(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
        if callback is not None:
            callback(it, record, out.data)

    with no_grad():
        final = network.forward(noise.z)
    return OptimizeResult(output=final.data, trace=trace, cancelled=cancelled)
