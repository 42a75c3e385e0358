"""Ready-made synthetic survey layouts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pipeline as pl
from .survey import SplitConfig, build_patch_samples, split_by_dive
from .terrain import HabitatRuleSet, WorldShape, generate_world

RUGGED_START = 0.7  # fraction of the width where the outcrop field begins


@dataclass
class TwoRegionScenario:
    """A flat western plain next to an eastern outcrop field, surveyed by two dives.

    ``train`` is in along-track order. ``rugged`` flags training samples
    east of the region boundary.
    """

    raster: object
    world: object
    train: list
    validation: list
    boundary: float

    @property
    def rugged(self):
        return np.array([s.easting >= self.boundary for s in self.train])

    def region_of_cells(self):
        """Boolean grid: True east of the boundary."""
        x, _ = self.raster.cell_center(0, np.arange(self.raster.n_cols))
        return np.broadcast_to(x >= self.boundary, self.raster.depths.shape)

    def flat_segments(self, segments):
        """Ids of segments lying entirely on the plain."""
        rugged = self.rugged
        return [i for i, seg in enumerate(segments) if not rugged[seg].any()]


def two_region(stream, extent=(600.0, 400.0), rules=HabitatRuleSet(), n_train_lines=4, n_val_lines=3,
               bump_density=250.0, balance_validation=True):
    """Build the scenario.

    With ``balance_validation`` the validation samples are down-sampled so
    both regions contribute equally; otherwise the plain dominates them.
    """
    x0 = RUGGED_START
    # keep outcrop centres clear of the boundary
    shape = WorldShape(bump_density=bump_density, bump_region=(x0 + 0.05, 1.0, 0.0, 1.0))
    raster, world = generate_world(extent, rules, stream.child("world"), shape=shape)
    tracks = pl.default_tracks(raster, n_train_lines, n_val_lines)
    points = pl.survey(world, tracks, stream.child("survey"))
    samples, _ = build_patch_samples(points, raster)
    train, val, _ = split_by_dive(samples, SplitConfig(["train"], ["validation"]))
    boundary = x0 * extent[0]
    if balance_validation:
        east = np.array([s.easting >= boundary for s in val])
        m = int(min(east.sum(), (~east).sum()))
        pick = stream.child("validation")
        keep = np.sort(np.concatenate([pick.choice(np.flatnonzero(east), m, replace=False),
                                       pick.choice(np.flatnonzero(~east), m, replace=False)]))
        val = [val[i] for i in keep]
    return TwoRegionScenario(raster, world, train, val, boundary)
