"""
Restoring a damaged image with an untrained network
====================================================

A small convolutional network, never trained on any dataset, is fit to
the intact pixels of one damaged image.  Its architecture alone pulls
the damaged region toward something plausible.  This script builds a
synthetic test image, runs one optimisation phase, and scores the
result.
"""

from pathlib import Path

import numpy as np

from idip import NetworkConfig, dssim, evaluate, find_triplets, make_fixture_set, replay, save_image

out_dir = Path("demo_output/restore_basics")

# a synthetic triplet: ground truth, a blotch mask, and the corrupted
# image with the damaged quarter blanked to black
make_fixture_set(out_dir / "fixtures", size=64, damage_fraction=0.25, seed=0)
triplet = find_triplets(out_dir / "fixtures")[0]
corrupted, mask, truth = triplet.load()
print(f"fixture {triplet.id}: {corrupted.shape[1]}x{corrupted.shape[0]}, "
      f"{(mask.grid == 0).mean():.0%} damaged")

# 150 iterations is enough to see the effect; the default budget is 600
config = NetworkConfig(iterations_per_phase=150)
session = replay(
    corrupted,
    mask.grid,
    phases=1,
    config=config,
    seed=0,
    callback=lambda phase, it, loss: print(f"  iteration {it:3d}  loss {loss:.5f}")
    if it % 50 == 0 or it == 1
    else None,
)

# known pixels are kept verbatim; only the damaged region is predicted
restored = session.composite_array(crop=True)
trace = session.history[0].trace
print(f"loss fell {trace[0].value:.5f} -> {trace[-1].value:.5f} "
      f"({trace[-1].value / trace[0].value:.1%} of start)")

# compare against the do-nothing baseline: the corrupted input itself
print(f"dssim corrupted vs truth: {dssim(corrupted, truth):.4f}")
print(f"dssim restored  vs truth: {dssim(restored, truth):.4f}")
report = evaluate(restored, truth, image_id=triplet.id)
print(f"full report: dssim {report.dssim:.4f}  lmse {report.lmse:.2f}  mse {report.mse:.2f}")

save_image(corrupted, out_dir / "corrupted.png")
save_image(restored, out_dir / "restored.png")
save_image(truth, out_dir / "truth.png")
print(f"images written under {out_dir}")
