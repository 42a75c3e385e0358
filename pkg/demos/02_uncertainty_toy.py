#!/usr/bin/env python3
# Aleatoric and epistemic uncertainty from a small Bayesian network on 2-D data.
#
# Points inside the training clouds where classes overlap have high
# aleatoric uncertainty. Points far from any training data have high
# epistemic uncertainty. The network never sees the far region.

import numpy as np

from benthicbnn import bnn, uncertainty
from benthicbnn.numeric import RandomStream

rng = np.random.default_rng(3)
centres = np.array([[-2.0, 0.0], [2.0, 0.0], [0.0, 0.0]])
x = np.concatenate([c + rng.normal(scale=(0.7, 1.0), size=(300, 2)) for c in centres])
y = np.repeat([0, 1, 2], 300)

cfg = bnn.BNNConfig(hidden=(32, 32), n_classes=3, epochs=60, batch_size=64)
post = bnn.VariationalPosterior(2, cfg, RandomStream(0, "toy-init"))
_, trace = bnn.train_bnn(post, x, y, stream=RandomStream(0, "toy-train"))
print("loss: first epoch %.1f, last epoch %.1f" % (trace[0], trace[-1]))

probes = {
    "inside class 0": [-3.0, 0.0],
    "between 0 and 2": [-1.0, 0.0],
    "far away": [0.0, 12.0],
}
pred = bnn.predict(post, np.array(list(probes.values())), T=200, stream=RandomStream(0, "toy-mc"))
ale, epi = uncertainty.trace_scores(pred)
print(f"{'probe':<18s} {'mean prediction':<24s} aleatoric  epistemic")
for i, name in enumerate(probes):
    mean = np.array2string(pred.mean[i], precision=2, suppress_small=True)
    print(f"{name:<18s} {mean:<24s} {ale[i]:9.3f}  {epi[i]:9.4f}")

# The full matrices, for the far probe. Their sum is diag(ybar) - ybar ybar^T
d = uncertainty.decompose(pred[2])
print("epistemic covariance (far probe):")
print(np.round(d.epistemic, 4))
print("identity residual:", float(np.abs(d.total - (np.diag(pred.mean[2]) - np.outer(pred.mean[2], pred.mean[2]))).max()))
