"""Dive tracks, labelled points, per-patch label distributions and data splits."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BalancingError,
    ConfigurationError,
    NodataError,
    OutOfBoundsError,
    ParseError,
)
from .terrain import N_CLASSES, Patch, Raster, extract_patch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledPoint:
    easting: float
    northing: float
    class_id: int
    dive_id: str

    def __post_init__(self):
        if not 0 <= self.class_id < N_CLASSES:
            raise ConfigurationError(f"class_id {self.class_id} outside [0, {N_CLASSES})")


@dataclass(frozen=True)
class DiveTrack:
    dive_id: str
    waypoints: tuple
    spacing: float = 2.0
    footprint: tuple = (1.5, 1.2)  # along, across (metres); recorded only

    def __post_init__(self):
        if not self.spacing > 0:
            raise ConfigurationError(f"spacing must be positive, got {self.spacing}")
        if len(self.waypoints) == 0:
            raise ConfigurationError(f"dive {self.dive_id!r} has no waypoints")
        object.__setattr__(self, "waypoints", tuple(tuple(map(float, w)) for w in self.waypoints))

    def positions(self) -> np.ndarray:
        """Sample positions every ``spacing`` metres of arc length, start included."""
        pts = np.asarray(self.waypoints, dtype=float)
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1]) if len(seg) else np.zeros(0)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        total = cum[-1]
        n = int(math.floor(total / self.spacing + 1e-9)) + 1
        s = np.arange(n) * self.spacing
        if len(seg) == 0 or total == 0:
            return np.repeat(pts[:1], n, axis=0)
        return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])


@dataclass(frozen=True, eq=False)
class PatchSample:
    patch: Patch
    label: int
    distribution: np.ndarray
    dive_id: str

    @property
    def easting(self) -> float:
        return self.patch.easting

    @property
    def northing(self) -> float:
        return self.patch.northing


@dataclass(frozen=True)
class SplitConfig:
    train_dives: tuple
    validation_dives: tuple
    extent: float = 42.0

    def __post_init__(self):
        object.__setattr__(self, "train_dives", tuple(self.train_dives))
        object.__setattr__(self, "validation_dives", tuple(self.validation_dives))
        both = set(self.train_dives) & set(self.validation_dives)
        if both:
            raise ConfigurationError(f"dives {sorted(both)} are on both sides of the split")


def simulate_dive(track: DiveTrack, label_fn, stream, raster: Raster | None = None):
    """Label every sample position along ``track`` with ``label_fn(e, n, stream)``."""
    raster = raster if raster is not None else getattr(label_fn, "raster", None)
    if raster is not None:
        for w in track.waypoints:
            if not raster.contains(w[0], w[1]):
                raise OutOfBoundsError(f"dive {track.dive_id!r} waypoint {w} lies outside the raster")
    pos = track.positions()
    labels = np.atleast_1d(label_fn(pos[:, 0], pos[:, 1], stream))
    return [LabeledPoint(float(e), float(n), int(c), track.dive_id)
            for (e, n), c in zip(pos, labels)]


def build_patch_samples(points, raster: Raster, width=21):
    """Patch samples for every point whose window is extractable.

    Each sample's distribution is the class histogram of all ``points``
    whose coordinates fall inside the sample's patch extent. Returns
    ``(samples, n_skipped)``.
    """
    points = list(points)
    if not points:
        return [], 0
    xy = np.array([(p.easting, p.northing) for p in points])
    cls = np.array([p.class_id for p in points])
    tree = cKDTree(xy)
    samples = []
    skipped = 0
    for p in points:
        try:
            patch = extract_patch(raster, p.easting, p.northing, width)
        except (OutOfBoundsError, NodataError):
            skipped += 1
            continue
        xmin, xmax, ymin, ymax = patch.extent
        half = (xmax - xmin) / 2
        idx = np.asarray(tree.query_ball_point((patch.easting, patch.northing), half, p=np.inf), dtype=int)
        inside = idx[(xy[idx, 0] >= xmin) & (xy[idx, 0] < xmax) & (xy[idx, 1] >= ymin) & (xy[idx, 1] < ymax)]
        hist = np.bincount(cls[inside], minlength=N_CLASSES).astype(float)
        samples.append(PatchSample(patch, p.class_id, hist / hist.sum(), p.dive_id))
    if skipped:
        log.info("skipped %d of %d points whose patch could not be extracted", skipped, len(points))
    return samples, skipped


def split_by_dive(samples, config: SplitConfig):
    """Dive-based split; validation samples overlapping any training patch are dropped.

    Returns ``(train, validation, n_removed)``.
    """
    train, val = [], []
    for s in samples:
        if s.dive_id in config.train_dives:
            train.append(s)
        elif s.dive_id in config.validation_dives:
            val.append(s)
        else:
            raise ConfigurationError(f"dive {s.dive_id!r} is in neither side of the split")
    if not train or not val:
        return train, val, 0
    txy = np.array([(s.easting, s.northing) for s in train])
    tree = cKDTree(txy)
    keep = []
    for s in val:
        idx = tree.query_ball_point((s.easting, s.northing), config.extent, p=np.inf)
        if idx:
            d = np.abs(txy[idx] - (s.easting, s.northing))
            if np.any((d[:, 0] < config.extent) & (d[:, 1] < config.extent)):
                continue
        keep.append(s)
    removed = len(val) - len(keep)
    if removed:
        log.warning("removed %d of %d validation samples overlapping training patches", removed, len(val))
    return train, keep, removed


def balance_classes(samples, stream, n_classes=N_CLASSES):
    """Down-sample every class to the minority count; original order kept."""
    labels = np.array([s.label for s in samples], dtype=int)
    counts = np.bincount(labels, minlength=n_classes)
    missing = [k for k in range(n_classes) if counts[k] == 0]
    if missing:
        raise BalancingError(f"cannot balance: classes {missing} have no samples")
    m = counts.min()
    keep = []
    for k in range(n_classes):
        idx = np.flatnonzero(labels == k)
        keep.append(stream.choice(idx, size=m, replace=False))
    keep = np.sort(np.concatenate(keep))
    return [samples[i] for i in keep]


def segment_dataset(samples, n_segments):
    """Split along-track ordered samples into contiguous, near-equal segments."""
    n = len(samples)
    if n_segments <= 0:
        raise ConfigurationError(f"n_segments must be positive, got {n_segments}")
    if n_segments > n:
        raise ConfigurationError(f"cannot cut {n} samples into {n_segments} segments")
    base, extra = divmod(n, n_segments)
    sizes = [base + 1 if i < extra else base for i in range(n_segments)]
    out, start = [], 0
    for size in sizes:
        out.append(list(samples[start:start + size]))
        start += size
    return out


# CSV interfaces ----------------------------------------------------------------

POINT_HEADER = ["easting", "northing", "dive_id", "class_id"]
TRACK_HEADER = ["dive_id", "easting", "northing"]


def write_points(points, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POINT_HEADER)
        for p in points:
            w.writerow([repr(float(p.easting)), repr(float(p.northing)), p.dive_id, int(p.class_id)])


def read_points(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != POINT_HEADER:
            raise ParseError(f"expected header {','.join(POINT_HEADER)}, got {header}", 1)
        out = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line_no)
            try:
                out.append(LabeledPoint(float(row[0]), float(row[1]), int(row[3]), row[2]))
            except (ValueError, ConfigurationError) as exc:
                raise ParseError(str(exc), line_no) from None
        return out


def write_tracks(tracks, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_HEADER)
        for t in tracks:
            for e, n in t.waypoints:
                w.writerow([t.dive_id, repr(float(e)), repr(float(n))])


def read_tracks(path, spacing=2.0):
    """Dive tracks from consecutive ``dive_id,easting,northing`` rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACK_HEADER:
            raise ParseError(f"expected header {','.join(TRACK_HEADER)}, got {header}", 1)
        order, pts = [], {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                e, n = float(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise ParseError("bad track row", line_no) from None
            if row[0] not in pts:
                order.append(row[0])
                pts[row[0]] = []
            pts[row[0]].append((e, n))
    return [DiveTrack(d, tuple(pts[d]), spacing) for d in order]
