"""
Painting hints between optimisation phases
==========================================

The interactive loop: optimise, look at the result, paint what the
network cannot guess, optimise again.  Painted pixels become known
constraints with the painted color, so the second phase treats them
exactly like original image content.  A correction stroke does the
reverse: it re-declares pixels as damaged and reverts them to the
original corrupted values.
"""

from pathlib import Path

import numpy as np

from idip import (
    NetworkConfig,
    PaintStroke,
    apply_refinement,
    create_session,
    dssim,
    find_triplets,
    make_fixture_set,
    run_phase,
    save_image,
)

out_dir = Path("demo_output/interactive_painting")
make_fixture_set(out_dir / "fixtures", size=32, damage_fraction=0.25, seed=0)

# the checker fixture hides randomly tinted cells under the damage, so
# their exact colors are unrecoverable without outside information
triplet = [t for t in find_triplets(out_dir / "fixtures") if t.id == "checker"][0]
corrupted, mask, truth = triplet.load()

config = NetworkConfig(iterations_per_phase=200)
session = create_session(corrupted, mask.grid, config=config, seed=0)

# phase 0: plain optimisation against the known pixels
run_phase(session)
blind = session.composite_array(crop=True)
print(f"phase 0 done, dssim vs truth: {dssim(blind, truth):.4f}")

# paint half of the damaged pixels with their true colors, one
# single-pixel stroke per pixel, the way a scripted session would
ys, xs = np.nonzero(mask.grid == 0)
picks = np.random.default_rng(0).permutation(len(xs))[: len(xs) // 2]
strokes = [
    PaintStroke(points=((int(xs[i]), int(ys[i])),),
                color=tuple(float(c) for c in truth[ys[i], xs[i]]))
    for i in picks
]
counts = apply_refinement(session, strokes)
print(f"painted {counts['guidance_pixels']} pixels as new constraints")

# phase 1 continues from the same parameters (warm start) but now sees
# the painted pixels inside the loss
run_phase(session)
guided = session.composite_array(crop=True)
print(f"phase 1 done, dssim vs truth: {dssim(guided, truth):.4f}")

# a correction stroke undoes a paint decision: covered pixels go back
# to damaged and their values revert to the original corrupted image
x, y = int(xs[picks[0]]), int(ys[picks[0]])
known_before = int(session.mask.known_count())
apply_refinement(session, [PaintStroke(points=((x, y),), mode="correction")])
print(f"correction at ({x}, {y}): known count {known_before} -> {session.mask.known_count()}")

save_image(blind, out_dir / "phase0_blind.png")
save_image(guided, out_dir / "phase1_guided.png")
save_image(truth, out_dir / "truth.png")
print(f"images written under {out_dir}")
