"""End-to-end plumbing: survey layouts, the autoencoder-plus-BNN bundle, and map prediction."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bnn
from .autoencoder import Autoencoder, AutoencoderConfig, train_autoencoder
from .errors import ConfigurationError, DataError
from .survey import DiveTrack, build_patch_samples, simulate_dive
from .terrain import NormalizationRecord, Raster, normalize_patches, patch_windows


def lawnmower(dive_id, northings, x0, x1, spacing=2.0):
    """East-west survey lines at the given northings, joined at alternating ends."""
    waypoints = []
    for i, y in enumerate(northings):
        a, b = (x0, x1) if i % 2 == 0 else (x1, x0)
        waypoints += [(a, y), (b, y)]
    return DiveTrack(dive_id, tuple(waypoints), spacing)


def default_tracks(raster: Raster, n_train_lines=8, n_val_lines=7, margin=24.0, spacing=2.0):
    """Two interleaved lawnmower dives covering the raster.

    The training dive flies the odd lines of an evenly spaced set and the
    validation dive the even ones, so the two share terrain statistics but
    not patches (apart from where the turn legs cross).
    """
    xmin, xmax, ymin, ymax = raster.bounds
    n_lines = n_train_lines + n_val_lines
    step = (ymax - ymin - 2 * margin) / max(n_lines - 1, 1)
    ys = [ymin + margin + i * step for i in range(n_lines)]
    train = lawnmower("train", ys[0::2][:n_train_lines], xmin + margin, xmax - margin, spacing)
    val = lawnmower("validation", ys[1::2][:n_val_lines], xmin + margin, xmax - margin, spacing)
    return [train, val]


def survey(world, tracks, stream):
    """Labelled points along every track, one child stream per dive."""
    points = []
    for t in tracks:
        points += simulate_dive(t, world, stream.child(t.dive_id))
    return points


def random_windows(raster: Raster, n, width, stream):
    """``n`` windows at uniformly drawn valid centres (with replacement)."""
    half = width // 2
    rows = np.arange(half, raster.n_rows - (width - half) + 1)
    cols = np.arange(half, raster.n_cols - (width - half) + 1)
    if len(rows) == 0 or len(cols) == 0:
        raise ConfigurationError(f"raster {raster.n_rows}x{raster.n_cols} is smaller than one {width}-cell window")
    out = []
    tries = 0
    while len(out) < n:
        r, c = int(stream.choice(rows)), int(stream.choice(cols))
        w = raster.depths[r - half:r - half + width, c - half:c - half + width]
        tries += 1
        if not raster.nodata_mask[r - half:r - half + width, c - half:c - half + width].any():
            out.append(w.copy())
        elif tries > 100 * n:
            raise DataError("could not find enough nodata-free windows")
    return np.stack(out)


@dataclass
class FeatureExtractor:
    """Depth normalisation followed by the encoder."""

    autoencoder: Autoencoder
    normalization: NormalizationRecord

    def latents(self, patches):
        return self.autoencoder.encode(self.normalization.apply(patches))

    def reconstruction_mse(self, patches):
        """De-normalised (metres squared) reconstruction error per patch."""
        x = np.asarray(patches, dtype=float)
        rec = self.normalization.invert(self.autoencoder.reconstruct(self.normalization.apply(x)))
        return np.mean((rec - x) ** 2, axis=(1, 2))

    def save(self, path):
        self.autoencoder.save(path, {"normalization": {"mean": self.normalization.mean,
                                                       "std": self.normalization.std}})

    @classmethod
    def load(cls, path, expected: AutoencoderConfig | None = None):
        ae, extra = Autoencoder.load(path, expected)
        norm = extra.get("normalization")
        if norm is None:
            raise ConfigurationError(f"{path} has no normalisation record")
        return cls(ae, NormalizationRecord(norm["mean"], norm["std"]))


def fit_features(raster: Raster, n_patches, config: AutoencoderConfig, stream, log_fn=None):
    """Train the autoencoder on randomly placed raster windows.

    Returns ``(extractor, loss_trace)``.
    """
    windows = random_windows(raster, n_patches, config.patch_width, stream.child("windows"))
    normed, record = normalize_patches(windows)
    ae, trace = train_autoencoder(normed, config, stream.child("train"), log_fn)
    return FeatureExtractor(ae, record), trace


@dataclass
class HabitatModel:
    """Feature extractor, latent standardisation and the variational posterior."""

    features: FeatureExtractor
    latent_mean: np.ndarray
    latent_std: np.ndarray
    posterior: bnn.VariationalPosterior

    def inputs(self, patches):
        return (self.features.latents(patches) - self.latent_mean) / self.latent_std

    def predict(self, patches, T, stream, batch_size=2048):
        """Predictive samples for a stack of raw-depth patches."""
        x = self.inputs(patches)
        parts = [bnn.predict(self.posterior, x[i:i + batch_size], T, stream).samples
                 for i in range(0, len(x), batch_size)]
        if not parts:
            return bnn.PredictiveSamples(np.empty((T, 0, self.posterior.config.n_classes)))
        return bnn.PredictiveSamples(np.concatenate(parts, axis=1))

    def save_posterior(self, path):
        self.posterior.save(path, {"latent_mean": self.latent_mean.tolist(),
                                   "latent_std": self.latent_std.tolist()})

    @classmethod
    def load(cls, features: FeatureExtractor, posterior_path, expected: bnn.BNNConfig | None = None):
        latent_dim = features.autoencoder.config.latent_dim
        post, extra = bnn.VariationalPosterior.load(posterior_path, expected, latent_dim)
        if post.input_dim != latent_dim:
            from .errors import ModelLoadError
            raise ModelLoadError(
                f"{posterior_path} expects {post.input_dim}-d inputs but the autoencoder emits {latent_dim}")
        return cls(features, np.asarray(extra["latent_mean"]), np.asarray(extra["latent_std"]), post)


def fit_classifier(features: FeatureExtractor, samples, config: bnn.BNNConfig, stream, log_fn=None):
    """Standardise latents of ``samples`` and train a fresh posterior on them.

    Returns ``(model, loss_trace)``.
    """
    if not samples:
        raise ConfigurationError("no training samples")
    z = features.latents(np.stack([s.patch.values for s in samples]))
    mean, std = z.mean(axis=0), z.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    post = bnn.VariationalPosterior(z.shape[1], config, stream.child("init"))
    model = HabitatModel(features, mean, std, post)
    labels = np.array([s.label for s in samples])
    _, trace = bnn.train_bnn(post, (z - mean) / std, labels, stream=stream.child("train"), log_fn=log_fn)
    return model, trace


def auto_stride(raster: Raster, width, max_centres=10_000):
    """Smallest stride keeping the number of map centres under ``max_centres``."""
    n = max(raster.n_rows - width + 1, 1) * max(raster.n_cols - width + 1, 1)
    return max(1, math.ceil(math.sqrt(n / max_centres)))


def map_predictions(model: HabitatModel, raster: Raster, stride, T, stream):
    """Predictive samples at every valid window centre on a ``stride`` grid.

    Returns ``(rows, cols, predictive)``.
    """
    width = model.features.autoencoder.config.patch_width
    rows, cols, windows = patch_windows(raster, width, stride)
    return rows, cols, model.predict(windows, T, stream)


def scatter_to_raster(raster: Raster, rows, cols, values, stride, nodata=-9999.0):
    """Paint per-centre values onto a raster, each covering its ``stride`` block.

    Cells not covered by any valid centre are nodata.
    """
    grid = np.full(raster.depths.shape, nodata, dtype=float)
    lo = -(stride // 2)
    for dr in range(lo, lo + stride):
        for dc in range(lo, lo + stride):
            r, c = rows + dr, cols + dc
            ok = (r >= 0) & (r < raster.n_rows) & (c >= 0) & (c < raster.n_cols)
            grid[r[ok], c[ok]] = values[ok]
    return raster.with_values(grid, nodata)


def labelled_samples(points, raster: Raster, width):
    samples, _ = build_patch_samples(points, raster, width)
    return samples
