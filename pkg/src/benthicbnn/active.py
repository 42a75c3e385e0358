"""Selective training: grow the training set segment by segment under an acquisition criterion."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import bnn
from .errors import ConfigurationError, ExhaustionError
from .survey import segment_dataset
from .uncertainty import trace_scores

CRITERIA = ("epistemic", "aleatoric", "random")


@dataclass(frozen=True)
class SelectiveConfig:
    n_segments: int = 100
    initial_segments: int = 5
    per_iteration: int = 5
    iterations: int = 15
    epochs: int = 10
    criterion: str = "epistemic"
    runs: int = 3
    T: int = 20
    reset: bool = False

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigurationError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.initial_segments + self.iterations * self.per_iteration > self.n_segments:
            raise ConfigurationError(
                f"{self.initial_segments} + {self.iterations} x {self.per_iteration} segments "
                f"exceed the {self.n_segments} available")
        if self.T < 2:
            raise ConfigurationError("T must be at least 2")
        if self.runs < 1 or self.iterations < 1:
            raise ConfigurationError("runs and iterations must be positive")


@dataclass(frozen=True)
class IterationRecord:
    run: int
    iteration: int
    criterion: str
    selected_ids: tuple
    val_label_accuracy: float
    mean_epistemic: float
    mean_aleatoric: float


@dataclass
class ExperimentTrace:
    records: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)  # run -> initial segment ids

    def selected(self, criterion, run):
        """All segment ids held at the end of a run."""
        ids = set(self.initial.get(run, ()))
        for r in self.records:
            if r.criterion == criterion and r.run == run:
                ids.update(r.selected_ids)
        return ids

    def runs(self):
        return sorted({r.run for r in self.records})

    def criteria(self):
        return [c for c in CRITERIA if any(r.criterion == c for r in self.records)]

    def curve(self, criterion, run):
        rs = sorted((r for r in self.records if r.criterion == criterion and r.run == run),
                    key=lambda r: r.iteration)
        return np.array([r.val_label_accuracy for r in rs])

    def curves(self, criterion):
        """``(runs, iterations)`` array of validation accuracies."""
        return np.array([self.curve(criterion, run) for run in self.runs()
                         if any(r.criterion == criterion and r.run == run for r in self.records)])

    def mean_rows(self):
        """Per-criterion, per-iteration means across runs."""
        rows = []
        for c in self.criteria():
            recs = [r for r in self.records if r.criterion == c]
            for it in sorted({r.iteration for r in recs}):
                at = [r for r in recs if r.iteration == it]
                acc = np.array([r.val_label_accuracy for r in at])
                rows.append({
                    "criterion": c, "iteration": it, "runs": len(at),
                    "mean_val_label_accuracy": float(acc.mean()),
                    "std_val_label_accuracy": float(acc.std(ddof=1)) if len(at) > 1 else 0.0,
                    "mean_epistemic": float(np.mean([r.mean_epistemic for r in at])),
                    "mean_aleatoric": float(np.mean([r.mean_aleatoric for r in at])),
                })
        return rows

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "iteration", "criterion", "selected_ids", "val_label_accuracy",
                        "mean_epistemic", "mean_aleatoric"])
            for r in self.records:
                w.writerow([r.run, r.iteration, r.criterion, " ".join(map(str, r.selected_ids)),
                            repr(r.val_label_accuracy), repr(r.mean_epistemic), repr(r.mean_aleatoric)])

    def write_summary_csv(self, path):
        cols = ["criterion", "iteration", "runs", "mean_val_label_accuracy", "std_val_label_accuracy",
                "mean_epistemic", "mean_aleatoric"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.mean_rows():
                w.writerow([row[c] if isinstance(row[c], (int, str)) else repr(row[c]) for c in cols])


def segment_score(posterior, latents, criterion, T, stream):
    """Mean per-sample uncertainty trace over a segment, or a uniform draw for ``random``."""
    x = np.asarray(latents, dtype=float)
    if len(x) == 0:
        raise ConfigurationError("cannot score an empty segment")
    if criterion == "random":
        return float(stream.random())
    a, e = trace_scores(bnn.predict(posterior, x, T, stream))
    if criterion == "epistemic":
        return float(e.mean())
    if criterion == "aleatoric":
        return float(a.mean())
    raise ConfigurationError(f"unknown criterion {criterion!r}")


def select_segments(scores, k, ids=None):
    """Ids of the ``k`` highest scores; ties go to the lower id.

    ``scores`` is a mapping id -> score or a sequence indexed by id.
    """
    if isinstance(scores, dict):
        ids, vals = list(scores), [scores[i] for i in scores]
    else:
        vals = list(scores)
        ids = list(range(len(vals))) if ids is None else list(ids)
    if k > len(ids):
        raise ExhaustionError(f"asked for {k} segments but only {len(ids)} remain")
    order = sorted(range(len(ids)), key=lambda j: (-vals[j], ids[j]))
    return [ids[j] for j in order[:k]]


def _accuracy(posterior, x, y, T, stream):
    pred = bnn.predict(posterior, x, T, stream).mean.argmax(axis=-1)
    return float(np.mean(pred == y))


def run_selective(latents, labels, val_latents, val_labels, config: SelectiveConfig, stream,
                  bnn_config: bnn.BNNConfig = bnn.BNNConfig(), initial_ids=None, log_fn=None):
    """Selective-training experiment for ``config.criterion`` over ``config.runs`` runs.

    ``latents``/``labels`` are the candidate pool in along-track order.
    Run ``r`` draws its initial segments and weights from
    ``stream.child(f"run{r}")``, so criteria sharing a master stream start
    from identical states. ``initial_ids`` overrides the random start.
    """
    x = np.asarray(latents, dtype=float)
    y = np.asarray(labels, dtype=int)
    xv = np.asarray(val_latents, dtype=float)
    yv = np.asarray(val_labels, dtype=int)
    if len(xv) == 0:
        raise ConfigurationError("validation set is empty")
    segments = segment_dataset(list(range(len(x))), config.n_segments)
    trace = ExperimentTrace()
    for run in range(config.runs):
        rs = stream.child(f"run{run}")
        if initial_ids is None:
            selected = sorted(int(i) for i in rs.child("initial").choice(
                config.n_segments, size=config.initial_segments, replace=False))
        else:
            selected = sorted(int(i) for i in initial_ids)
        trace.initial[run] = tuple(selected)
        post = bnn.VariationalPosterior(x.shape[1], bnn_config, rs.child("init"))
        score_stream = rs.child(f"score-{config.criterion}")
        train_stream = rs.child("train")
        val_stream = rs.child("validation")
        for it in range(config.iterations):
            if config.reset:
                post = bnn.VariationalPosterior(x.shape[1], bnn_config, rs.child("init"))
            idx = np.concatenate([segments[s] for s in selected])
            bnn.train_bnn(post, x[idx], y[idx], epochs=config.epochs, stream=train_stream.child(str(it)))
            acc = _accuracy(post, xv, yv, config.T, val_stream.child(str(it)))
            remaining = [s for s in range(config.n_segments) if s not in set(selected)]
            it_stream = score_stream.child(f"it{it}")
            ale, epi, crit = {}, {}, {}
            for s in remaining:
                a, e = trace_scores(bnn.predict(post, x[segments[s]], config.T, it_stream))
                ale[s], epi[s] = float(a.mean()), float(e.mean())
                if config.criterion == "epistemic":
                    crit[s] = epi[s]
                elif config.criterion == "aleatoric":
                    crit[s] = ale[s]
                else:
                    crit[s] = float(it_stream.random())
            chosen = select_segments(crit, config.per_iteration)
            selected = sorted(selected + chosen)
            rec = IterationRecord(run, it, config.criterion, tuple(chosen), acc,
                                  float(np.mean(list(epi.values()))), float(np.mean(list(ale.values()))))
            trace.records.append(rec)
            if log_fn is not None:
                log_fn(rec)
    return trace


def iterations_to_fraction(curve, fraction=0.95):
    """First iteration whose accuracy reaches ``fraction`` of the final accuracy."""
    curve = np.asarray(curve)
    target = fraction * curve[-1]
    return int(np.argmax(curve >= target))
