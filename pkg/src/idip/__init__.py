"""Interactive image restoration with an untrained convolutional prior.

The package optimises a randomly initialised encoder-decoder to
reproduce the known pixels of a damaged image; the network's output
fills the damaged region.  Between optimisation phases a user (or a
stroke script) can paint guidance colors into the damaged region or
revert mistaken areas, and the composited result seeds the next phase.

Layers, bottom up:

- `engine`: reverse-mode autodiff on numpy arrays
- `network`: the encoder-decoder, its config and parameter store
- `optim`: Adam
- `dip`: targets, masks and the masked-loss optimisation loop
- `session`: interactive state, strokes, phases and persistence
- `metrics`: SSIM/DSSIM, local and plain MSE, reports
- `store`: PNG I/O, dataset triplets, synthetic fixtures
- `replay`: headless scripted sessions
- `service` / `cli`: HTTP and command-line front ends (import directly)
"""

from .dip import (
    CancelToken,
    DamageMask,
    LossValue,
    NonFiniteLossError,
    OptimizeResult,
    TargetImage,
    masked_loss,
    optimize,
    pad_to_multiple,
)
from .engine import GradientTape, TapeConsumedError, Tensor, no_grad
from .metrics import (
    MetricReport,
    dssim,
    evaluate,
    format_table,
    lmse,
    luminance,
    mse,
    read_records,
    ssim,
    write_records,
)
from .network import (
    DipNetwork,
    ModelParameters,
    NetworkConfig,
    NoiseInput,
    build_network,
    load_config,
    save_config,
)
from .optim import MissingGradientError, adam_step
from .replay import ScriptError, StrokeScript, load_stroke_script, parse_stroke_script, replay
from .session import (
    PaintStroke,
    RestorationSession,
    SessionSnapshot,
    SessionStateError,
    apply_refinement,
    create_session,
    load_session,
    run_phase,
    save_session,
    stop,
)
from .store import (
    DatasetTriplet,
    ImageFormatError,
    find_triplets,
    load_image,
    load_mask,
    make_fixture,
    make_fixture_set,
    save_image,
    save_mask,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Tensor",
    "GradientTape",
    "TapeConsumedError",
    "no_grad",
    "NetworkConfig",
    "ModelParameters",
    "DipNetwork",
    "NoiseInput",
    "build_network",
    "load_config",
    "save_config",
    "MissingGradientError",
    "adam_step",
    "TargetImage",
    "DamageMask",
    "LossValue",
    "CancelToken",
    "OptimizeResult",
    "NonFiniteLossError",
    "masked_loss",
    "optimize",
    "pad_to_multiple",
    "PaintStroke",
    "RestorationSession",
    "SessionSnapshot",
    "SessionStateError",
    "create_session",
    "apply_refinement",
    "run_phase",
    "stop",
    "save_session",
    "load_session",
    "MetricReport",
    "luminance",
    "ssim",
    "dssim",
    "mse",
    "lmse",
    "evaluate",
    "write_records",
    "read_records",
    "format_table",
    "ImageFormatError",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "DatasetTriplet",
    "find_triplets",
    "make_fixture",
    "make_fixture_set",
    "StrokeScript",
    "ScriptError",
    "parse_stroke_script",
    "load_stroke_script",
    "replay",
]
