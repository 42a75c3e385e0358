#!/usr/bin/env python3
# A synthetic seafloor, two survey dives, and the dive-based split.
#
# Run from anywhere once the package is installed:  python3 demos/01_world_and_survey.py

import numpy as np

from benthicbnn import pipeline, survey, terrain
from benthicbnn.numeric import RandomStream

stream = RandomStream(7, "demo-world")

# A 400 x 400 m world at 2 m cells. Classes follow depth, ruggedness and a
# sand band, then 10% of labels are flipped at survey time.
raster, world = terrain.generate_world((400.0, 400.0), terrain.HabitatRuleSet(), stream.child("world"))
print("grid", raster.depths.shape, "depth range %.1f .. %.1f m" % (raster.depths.min(), raster.depths.max()))

truth = world.noiseless(*raster.cell_center(*np.indices(raster.depths.shape)))
for k, name in enumerate(terrain.CLASS_NAMES):
    print(f"  {name:<28s} {np.mean(truth == k):6.1%} of cells")

# Two interleaved lawnmower dives; one trains, the other validates
tracks = pipeline.default_tracks(raster, n_train_lines=4, n_val_lines=3)
points = pipeline.survey(world, tracks, stream.child("survey"))
print(len(points), "labelled points along", [t.dive_id for t in tracks])

# Every point becomes a 21 x 21 depth patch plus the class histogram of
# the points inside it
samples, skipped = survey.build_patch_samples(points, raster)
train, val, removed = survey.split_by_dive(samples, survey.SplitConfig(["train"], ["validation"]))
print(f"{len(train)} training patches, {len(val)} validation patches "
      f"({removed} dropped for overlapping a training patch, {skipped} too close to the edge)")

# how often the point label agrees with its patch majority
bench = np.mean([s.label == np.argmax(s.distribution) for s in val])
print(f"label vs. patch-majority agreement on validation: {bench:.3f}")

# one patch, summarised
p = val[len(val) // 2].patch
depth, slope, aspect, rugosity = terrain.morphological_features(p)
print(f"centre patch: mean depth {depth:.1f} m, slope {slope:.1f} deg, aspect {aspect:.0f} deg, "
      f"rugosity {rugosity:.3f}")
