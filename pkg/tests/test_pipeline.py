import numpy as np
import pytest

from benthicbnn import pipeline as pl
from benthicbnn import scenarios, uncertainty
from benthicbnn.autoencoder import Autoencoder, AutoencoderConfig
from benthicbnn.bnn import BNNConfig, VariationalPosterior
from benthicbnn.errors import ModelLoadError
from benthicbnn.numeric import RandomStream
from benthicbnn.survey import segment_dataset
from benthicbnn.terrain import NormalizationRecord, Raster

AE = AutoencoderConfig(conv_filters=(2,), dense_widths=(8,), latent_dim=4, patch_width=5)


def _model(rho=-3.0, seed=0):
    fx = pl.FeatureExtractor(Autoencoder(AE, RandomStream(seed, "ae")), NormalizationRecord(40.0, 5.0))
    post = VariationalPosterior(4, BNNConfig(hidden=(6,), rho_init=rho), RandomStream(seed, "post"))
    return pl.HabitatModel(fx, np.zeros(4), np.ones(4), post)


def test_lawnmower_alternates():
    t = pl.lawnmower("d", [10.0, 20.0, 30.0], 0.0, 100.0)
    assert t.waypoints == ((0, 10), (100, 10), (100, 20), (0, 20), (0, 30), (100, 30))


def test_default_tracks_interleave():
    r = Raster(np.zeros((100, 100)))
    train, val = pl.default_tracks(r, 3, 2)
    ty = sorted({w[1] for w in train.waypoints})
    vy = sorted({w[1] for w in val.waypoints})
    assert ty[0] < vy[0] < ty[1] < vy[1] < ty[2]


def test_random_windows_avoid_nodata():
    d = np.full((30, 30), 10.0)
    d[:, :15] = -9999.0
    w = pl.random_windows(Raster(d), 50, 5, RandomStream(0, "w"))
    assert w.shape == (50, 5, 5) and np.all(w == 10.0)


def test_auto_stride():
    r = Raster(np.zeros((400, 400)))
    s = pl.auto_stride(r, 21, 10_000)
    assert ((380 + s - 1) // s) ** 2 <= 10_000 + 2 * 380
    assert pl.auto_stride(Raster(np.zeros((50, 50))), 21) == 1


def test_scatter_marks_uncovered_nodata():
    r = Raster(np.zeros((10, 10)))
    out = pl.scatter_to_raster(r, np.array([5]), np.array([5]), np.array([3.0]), 3)
    assert out.depths[4:7, 4:7].tolist() == [[3.0] * 3] * 3
    assert out.nodata_mask.sum() == 100 - 9


def test_uncertainty_map_nodata_border_and_deterministic_limit():
    rng = np.random.default_rng(0)
    r = Raster(40 + rng.normal(size=(20, 20)))
    ale, epi = uncertainty.uncertainty_map(_model(rho=-60.0), r, 1, 5, RandomStream(0, "m"))
    assert epi.nodata_mask[:2].all() and epi.nodata_mask[:, -2:].all()
    inner = epi.depths[2:-2, 2:-2]
    assert np.all(inner >= 0) and inner.max() < 1e-20
    assert np.all(ale.depths[2:-2, 2:-2] > 0)


def test_posterior_round_trip(tmp_path):
    m = _model()
    m.save_posterior(tmp_path / "p.npz")
    back = pl.HabitatModel.load(m.features, tmp_path / "p.npz")
    np.testing.assert_array_equal(back.latent_std, m.latent_std)


def test_posterior_autoencoder_width_mismatch(tmp_path):
    m = _model()
    m.save_posterior(tmp_path / "p.npz")
    wide = pl.FeatureExtractor(Autoencoder(AutoencoderConfig(conv_filters=(2,), dense_widths=(8,), latent_dim=6,
                                                             patch_width=5), RandomStream(0, "ae")),
                               NormalizationRecord(0.0, 1.0))
    with pytest.raises(ModelLoadError):
        pl.HabitatModel.load(wide, tmp_path / "p.npz")


def test_two_region_layout():
    s = scenarios.two_region(RandomStream(0, "scn"))
    segs = segment_dataset(list(range(len(s.train))), 100)
    flat = s.flat_segments(segs)
    assert 20 < len(flat) < 95
    assert s.rugged.any() and not s.rugged.all()
    grid, mask = s.world.label_grid, s.region_of_cells()
    # outcrop habitats (patchy, reef, kelp) sit almost entirely in the eastern region
    west = np.isin(grid[~mask], [2, 3, 4]).mean()
    east = np.isin(grid[mask], [2, 3, 4]).mean()
    assert west < 0.02 < 0.3 < east
