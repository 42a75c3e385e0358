"""Split predictive covariance into aleatoric and epistemic parts and reduce them to scalars."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bnn import PredictiveSamples
from .errors import ConfigurationError, DataError


@dataclass(frozen=True, eq=False)
class UncertaintyDecomposition:
    """Aleatoric, epistemic and total ``K x K`` covariances (batched on leading axes)."""

    aleatoric: np.ndarray
    epistemic: np.ndarray

    @property
    def total(self):
        return self.aleatoric + self.epistemic


@dataclass(frozen=True)
class UncertaintyScore:
    aleatoric: float
    epistemic: float


def _samples(predictive):
    s = np.asarray(predictive.samples if isinstance(predictive, PredictiveSamples) else predictive,
                   dtype=np.float64)
    if s.shape[0] < 2:
        raise ConfigurationError(f"need at least two samples, got {s.shape[0]}")
    if np.any(s < -1e-6) or np.any(np.abs(s.sum(axis=-1) - 1.0) > 1e-6):
        raise DataError("predictive samples are not probability vectors")
    return s


def decompose(predictive) -> UncertaintyDecomposition:
    """Per-sample multinomial covariance averaged over draws, plus the spread of the draws.

    ``aleatoric = mean_t(diag(y_t) - y_t y_t^T)`` and
    ``epistemic = mean_t((y_t - ybar)(y_t - ybar)^T)``. Samples have shape
    ``(T, ..., K)``; the result carries the same middle axes.
    """
    s = _samples(predictive)
    T = s.shape[0]
    ybar = s.mean(axis=0)
    outer = np.einsum("t...i,t...j->...ij", s, s) / T
    diag = np.zeros(outer.shape)
    k = s.shape[-1]
    diag[..., np.arange(k), np.arange(k)] = ybar
    d = s - ybar
    epistemic = np.einsum("t...i,t...j->...ij", d, d) / T
    return UncertaintyDecomposition(diag - outer, epistemic)


def score(decomposition: UncertaintyDecomposition, reduction="trace") -> UncertaintyScore:
    """Scalar summary of each matrix: trace (default) or largest diagonal entry."""
    if reduction == "trace":
        f = lambda m: np.trace(m, axis1=-2, axis2=-1)  # noqa: E731
    elif reduction == "max_diag":
        f = lambda m: np.diagonal(m, axis1=-2, axis2=-1).max(axis=-1)  # noqa: E731
    else:
        raise ConfigurationError(f"unknown reduction {reduction!r}")
    a, e = f(decomposition.aleatoric), f(decomposition.epistemic)
    if np.ndim(a) == 0:
        return UncertaintyScore(float(a), float(e))
    return UncertaintyScore(a, e)


def trace_scores(predictive):
    """``(aleatoric, epistemic)`` traces without forming K x K matrices.

    Equal to ``score(decompose(p))`` for the trace reduction.
    """
    s = _samples(predictive)
    ybar = s.mean(axis=0)
    aleatoric = 1.0 - np.mean(np.sum(s * s, axis=-1), axis=0)
    epistemic = np.mean(np.sum((s - ybar) ** 2, axis=-1), axis=0)
    return aleatoric, epistemic


def uncertainty_map(model, raster, stride, T, stream):
    """Aleatoric and epistemic trace rasters over every valid window centre.

    ``model`` is a :class:`~benthicbnn.pipeline.HabitatModel`. Cells not
    covered by a valid window are nodata.
    """
    from .pipeline import map_predictions, scatter_to_raster

    rows, cols, pred = map_predictions(model, raster, stride, T, stream)
    if len(rows) == 0:
        empty = np.empty(0)
        return (scatter_to_raster(raster, rows, cols, empty, stride),
                scatter_to_raster(raster, rows, cols, empty, stride))
    a, e = trace_scores(pred)
    return (scatter_to_raster(raster, rows, cols, a, stride),
            scatter_to_raster(raster, rows, cols, e, stride))
