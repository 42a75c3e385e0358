#!/usr/bin/env python3
# From bathymetry to a habitat map with uncertainty, scaled down to run in about a minute.
#
# Writes category / aleatoric / epistemic images to ./demo_map/.

from pathlib import Path

import numpy as np

from benthicbnn import bnn, evaluate, pipeline, render, survey, terrain, uncertainty
from benthicbnn.autoencoder import AutoencoderConfig
from benthicbnn.numeric import RandomStream

out = Path("demo_map")
out.mkdir(exist_ok=True)
root = RandomStream(11, "demo-map")

raster, world = terrain.generate_world((300.0, 300.0), terrain.HabitatRuleSet(), root.child("world"))
points = pipeline.survey(world, pipeline.default_tracks(raster, 3, 3), root.child("survey"))
samples, _ = survey.build_patch_samples(points, raster)
train, val, _ = survey.split_by_dive(samples, survey.SplitConfig(["train"], ["validation"]))

# Unsupervised features: a small convolutional autoencoder on random windows
ae_cfg = AutoencoderConfig(conv_filters=(16,), dense_widths=(256,), latent_dim=16, epochs=12)
features, ae_trace = pipeline.fit_features(raster, 1000, ae_cfg, root.child("ae"))
held_out = pipeline.random_windows(raster, 200, 21, root.child("held-out"))
mse = features.reconstruction_mse(held_out).mean()
print(f"autoencoder: loss {ae_trace[0]:.3f} -> {ae_trace[-1]:.3f}, held-out MSE {mse:.3f} m^2 "
      f"(depth variance {raster.depths.var():.1f} m^2)")

# The Bayesian classifier on class-balanced latents
balanced = survey.balance_classes(train, root.child("balance"))
model, _ = pipeline.fit_classifier(features, balanced, bnn.BNNConfig(hidden=(64, 64), epochs=80),
                                   root.child("bnn"))
pred = model.predict(np.stack([s.patch.values for s in val]), 30, root.child("mc"))
report = evaluate.evaluate_predictions(val, pred, root.child("draws"))
print(f"validation dive: label {report.label_accuracy:.3f}, neighbour {report.neighbour_accuracy:.3f}, "
      f"benchmark {report.benchmark_accuracy:.3f}")
print("confusion (rows true, columns predicted):")
print(report.confusion)

# Maps. A stride of 3 cells keeps this quick
classes, rgb = evaluate.category_map(model, raster, 3, 10, root.child("category"))
terrain.save_raster(classes, out / "category.asc")
render.write_ppm(out / "category.ppm", rgb)
ale, epi = uncertainty.uncertainty_map(model, raster, 3, 10, root.child("uncertainty"))
for name, r in (("aleatoric", ale), ("epistemic", epi)):
    lo, hi = render.write_scalar_pgm(out / f"{name}.pgm", r)
    print(f"{name} map range {lo:.3f} .. {hi:.3f}")
print("images in", out.resolve())
