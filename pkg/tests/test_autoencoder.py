import numpy as np
import pytest

from benthicbnn.autoencoder import Autoencoder, AutoencoderConfig, train_autoencoder
from benthicbnn.errors import DataError, DimensionError, ModelLoadError
from benthicbnn.numeric import RandomStream

SMALL = AutoencoderConfig(conv_filters=(4,), dense_widths=(32,), latent_dim=8, patch_width=9,
                          epochs=4, batch_size=16)


def _smooth_patches(n, w, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:w, 0:w] / (w - 1)
    a, b, c = rng.normal(size=(3, n, 1, 1))
    return a * xx + b * yy + 0.5 * c


def test_default_latent_length():
    ae = Autoencoder(AutoencoderConfig(), RandomStream(0, "ae"))
    z = ae.encode(np.zeros((21, 21)))
    assert z.shape == (32,)
    assert ae.decode(z).shape == (21, 21)


def test_untrained_error_finite():
    ae = Autoencoder(AutoencoderConfig(), RandomStream(0, "ae"))
    x = _smooth_patches(4, 21, 0)
    assert np.isfinite(np.mean((ae.reconstruct(x) - x) ** 2))


def test_encode_deterministic():
    x = _smooth_patches(3, 9, 1)
    a = Autoencoder(SMALL, RandomStream(5, "ae")).encode(x)
    b = Autoencoder(SMALL, RandomStream(5, "ae")).encode(x)
    np.testing.assert_array_equal(a, b)


def test_wrong_patch_size():
    ae = Autoencoder(SMALL, RandomStream(0, "ae"))
    with pytest.raises(DimensionError):
        ae.encode(np.zeros((2, 10, 10)))


def test_nan_patch():
    ae = Autoencoder(SMALL, RandomStream(0, "ae"))
    x = np.zeros((1, 9, 9))
    x[0, 3, 3] = np.nan
    with pytest.raises(DataError):
        ae.encode(x)


def test_constant_dataset_loss_vanishes():
    x = np.full((64, 9, 9), 0.7)
    cfg = AutoencoderConfig(conv_filters=(4,), dense_widths=(32,), latent_dim=8, patch_width=9,
                            epochs=30, batch_size=16)
    _, trace = train_autoencoder(x, cfg, RandomStream(0, "ae"))
    assert trace[-1] < 0.01 and trace[-1] < 0.02 * trace[0]


def test_training_deterministic():
    x = _smooth_patches(64, 9, 2)
    _, t1 = train_autoencoder(x, SMALL, RandomStream(3, "ae"))
    _, t2 = train_autoencoder(x, SMALL, RandomStream(3, "ae"))
    assert t1 == t2


def test_structured_beats_shuffled():
    # Same marginal values, structure destroyed by shuffling pixels.
    x = _smooth_patches(256, 9, 4)
    rng = np.random.default_rng(0)
    shuffled = np.stack([rng.permutation(p.ravel()).reshape(9, 9) for p in x])
    cfg = AutoencoderConfig(conv_filters=(4,), dense_widths=(32,), latent_dim=3, patch_width=9,
                            epochs=15, batch_size=16)
    _, ts = train_autoencoder(x, cfg, RandomStream(0, "ae"))
    _, tu = train_autoencoder(shuffled, cfg, RandomStream(0, "ae"))
    assert ts[-1] < tu[-1]


def test_linear_autoencoder_below_variance():
    # Planar patches live in a 3-d subspace; a linear 3-latent model fits them.
    x = _smooth_patches(512, 9, 5)
    cfg = AutoencoderConfig(conv_filters=(), dense_widths=(), latent_dim=3, patch_width=9,
                            epochs=60, batch_size=32, learning_rate=1e-2, activation="linear")
    model, _ = train_autoencoder(x, cfg, RandomStream(0, "ae"))
    test = _smooth_patches(128, 9, 6)
    assert np.mean((model.reconstruct(test) - test) ** 2) < 0.05 * test.var()


def test_save_load_round_trip(tmp_path):
    ae = Autoencoder(SMALL, RandomStream(0, "ae"))
    ae.save(tmp_path / "ae.npz", {"note": 1})
    back, extra = Autoencoder.load(tmp_path / "ae.npz", SMALL)
    assert extra == {"note": 1}
    x = _smooth_patches(2, 9, 0)
    np.testing.assert_array_equal(ae.encode(x), back.encode(x))


def test_load_architecture_mismatch(tmp_path):
    Autoencoder(SMALL, RandomStream(0, "ae")).save(tmp_path / "ae.npz")
    other = AutoencoderConfig(conv_filters=(4,), dense_widths=(32,), latent_dim=16, patch_width=9)
    with pytest.raises(ModelLoadError):
        Autoencoder.load(tmp_path / "ae.npz", other)


def test_full_width_linear_latent_reaches_near_zero():
    x = np.random.default_rng(7).normal(size=(256, 5, 5))
    cfg = AutoencoderConfig(conv_filters=(), dense_widths=(), latent_dim=25, patch_width=5,
                            epochs=80, batch_size=32, learning_rate=1e-2, activation="linear")
    model, trace = train_autoencoder(x, cfg, RandomStream(0, "ae"))
    assert trace[-1] <= trace[0]
    assert np.mean((model.reconstruct(x) - x) ** 2) < 1e-3


def test_large_scale_structure_separates_latents():
    x = _smooth_patches(128, 9, 8)
    model, _ = train_autoencoder(x, SMALL, RandomStream(0, "ae"))
    yy, xx = np.mgrid[0:9, 0:9] / 8.0
    z = model.encode(np.stack([xx, -xx]))
    assert np.linalg.norm(z[0] - z[1]) > 0
