"""Label, neighbour and benchmark accuracies, confusion counts, distribution error and category maps."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bnn import PredictiveSamples, sample_class
from .errors import DimensionError
from .terrain import CLASS_NAMES, N_CLASSES

# Legend colours, indexed by class id.
CLASS_COLORS = (
    (255, 0, 0),      # sand
    (255, 165, 0),    # screwshell rubble
    (255, 255, 0),    # patchy reef
    (0, 128, 0),      # reef
    (0, 255, 255),    # kelp
)
NODATA_COLOR = (0, 0, 0)


def modal_class(distribution) -> int:
    """Most probable class; ties go to the lowest index."""
    return int(np.argmax(np.asarray(distribution)))


@dataclass
class EvaluationReport:
    label_accuracy: float
    neighbour_accuracy: float
    benchmark_accuracy: float
    confusion: np.ndarray
    n_samples: int
    distribution_mae: list = field(default_factory=list)

    def to_dict(self):
        out = {
            "n_samples": self.n_samples,
            "label_accuracy": self.label_accuracy,
            "neighbour_accuracy": self.neighbour_accuracy,
            "benchmark_accuracy": self.benchmark_accuracy,
            "confusion_matrix": self.confusion.astype(int).tolist(),
            "class_names": list(CLASS_NAMES),
        }
        if self.distribution_mae:
            out["distribution_mae"] = box_summary(self.distribution_mae)
        return out


def _check(samples, predictions):
    predictions = np.asarray(predictions, dtype=int)
    if len(samples) != len(predictions):
        raise DimensionError(f"{len(samples)} samples but {len(predictions)} predictions")
    return predictions


def accuracies(samples, predictions) -> EvaluationReport:
    """The three accuracy rates plus the confusion matrix."""
    pred = _check(samples, predictions)
    n = len(samples)
    if n == 0:
        nan = float("nan")
        return EvaluationReport(nan, nan, nan, np.zeros((N_CLASSES, N_CLASSES), int), 0)
    labels = np.array([s.label for s in samples])
    modal = np.array([modal_class(s.distribution) for s in samples])
    return EvaluationReport(
        label_accuracy=float(np.mean(pred == labels)),
        neighbour_accuracy=float(np.mean(pred == modal)),
        benchmark_accuracy=float(np.mean(labels == modal)),
        confusion=confusion(samples, pred),
        n_samples=n,
    )


def confusion(samples, predictions, n_classes=N_CLASSES):
    """Counts with true classes on rows and predicted classes on columns."""
    pred = _check(samples, predictions)
    labels = np.array([s.label for s in samples], dtype=int)
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (labels, pred), 1)
    return m


def empirical_distribution(classes, n_classes=N_CLASSES):
    classes = np.atleast_1d(classes)
    return np.bincount(classes, minlength=n_classes) / len(classes)


def distribution_mae(empirical, true):
    return float(np.mean(np.abs(np.asarray(empirical) - np.asarray(true))))


def distribution_error(sample, predictive: PredictiveSamples, draws, stream) -> float:
    """Mean absolute difference between ``draws`` sampled classes and the patch distribution."""
    if draws < 1:
        raise DimensionError(f"draws must be at least 1, got {draws}")
    true = sample.distribution if hasattr(sample, "distribution") else np.asarray(sample)
    classes = sample_class(predictive, stream, draws)
    return distribution_mae(empirical_distribution(classes, len(true)), true)


def box_summary(values):
    """Median, quartiles and whiskers at 1.5 IQR clipped to the data."""
    v = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return {"median": float(med), "q1": float(q1), "q3": float(q3),
            "whisker_low": float(lo), "whisker_high": float(hi),
            "mean": float(v.mean()), "n": int(len(v))}


def evaluate_predictions(samples, predictive: PredictiveSamples, stream, draws=100):
    """Full report for predictions taken as the modal class of each sample's MC mean."""
    ybar = predictive.mean
    pred = ybar.argmax(axis=-1) if len(samples) else np.empty(0, int)
    report = accuracies(samples, pred)
    report.distribution_mae = [distribution_error(s, predictive[i], draws, stream)
                               for i, s in enumerate(samples)]
    return report


def write_report(path, reports: dict):
    """JSON document with one entry per named report."""
    doc = {name: (r.to_dict() if isinstance(r, EvaluationReport) else r) for name, r in reports.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def category_map(model, raster, stride, T, stream):
    """Class raster (modal class of the MC mean per window centre) and its RGB image array."""
    from .pipeline import map_predictions, scatter_to_raster

    rows, cols, pred = map_predictions(model, raster, stride, T, stream)
    classes = pred.mean.argmax(axis=-1).astype(float) if len(rows) else np.empty(0)
    grid = scatter_to_raster(raster, rows, cols, classes, stride)
    return grid, colorize(grid)


def colorize(class_raster):
    """``(rows, cols, 3)`` uint8 image using the legend colours; nodata is black."""
    values = class_raster.depths
    img = np.zeros((*values.shape, 3), dtype=np.uint8)
    img[:] = NODATA_COLOR
    valid = ~class_raster.nodata_mask
    palette = np.array(CLASS_COLORS, dtype=np.uint8)
    img[valid] = palette[values[valid].astype(int)]
    return img
