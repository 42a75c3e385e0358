"""Convolutional autoencoder that compresses bathymetry patches to latent vectors."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numeric as nm
from .errors import ConfigurationError, DataError, DimensionError, ModelLoadError, TrainingError
from .store import check_shapes, load_model, save_model


@dataclass(frozen=True)
class AutoencoderConfig:
    """Architecture and training settings.

    The encoder is ``conv_filters`` same-padded convolutions, a flatten,
    ``dense_widths`` fully connected layers and a linear projection to
    ``latent_dim``. The decoder mirrors it and ends in a single-filter
    convolution producing the reconstruction.
    """

    conv_filters: tuple = (32, 16)
    kernel_size: int = 3
    dense_widths: tuple = (512, 512)
    latent_dim: int = 32
    patch_width: int = 21
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 1e-3
    input_noise: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        object.__setattr__(self, "dense_widths", tuple(int(d) for d in self.dense_widths))
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be at least 1")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel_size must be odd")
        if self.activation not in ("relu", "linear"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Autoencoder:
    """Parameters plus encode/decode for one :class:`AutoencoderConfig`."""

    def __init__(self, config: AutoencoderConfig, stream=None, arrays=None):
        self.config = config
        shapes = self.param_shapes(config)
        if arrays is None:
            if stream is None:
                raise ConfigurationError("need a stream to initialise parameters")
            arrays = {}
            for name, shape in shapes.items():
                if name.endswith(".b"):
                    arrays[name] = np.zeros(shape)
                else:
                    conv = name.startswith(("enc.conv", "dec.conv", "dec.out"))
                    fan_in = int(np.prod(shape[1:])) if conv else shape[0]
                    gain = 1.0 if name.startswith(("enc.latent", "dec.out")) else 2.0
                    arrays[name] = stream.normal(0.0, np.sqrt(gain / fan_in), size=shape)
        check_shapes(arrays, shapes, "autoencoder")
        self.params = {name: nm.Tensor(arrays[name], requires_grad=True, name=name) for name in shapes}

    @staticmethod
    def param_shapes(c: AutoencoderConfig):
        w2 = c.patch_width * c.patch_width
        k = c.kernel_size
        shapes = {}
        ch = 1
        for i, f in enumerate(c.conv_filters):
            shapes[f"enc.conv{i}.W"] = (f, ch, k, k)
            shapes[f"enc.conv{i}.b"] = (f,)
            ch = f
        width = ch * w2
        for i, d in enumerate(c.dense_widths):
            shapes[f"enc.dense{i}.W"] = (width, d)
            shapes[f"enc.dense{i}.b"] = (d,)
            width = d
        shapes["enc.latent.W"] = (width, c.latent_dim)
        shapes["enc.latent.b"] = (c.latent_dim,)

        width = c.latent_dim
        for i, d in enumerate(reversed(c.dense_widths)):
            shapes[f"dec.dense{i}.W"] = (width, d)
            shapes[f"dec.dense{i}.b"] = (d,)
            width = d
        ch = c.conv_filters[-1] if c.conv_filters else 1
        shapes["dec.unflatten.W"] = (width, ch * w2)
        shapes["dec.unflatten.b"] = (ch * w2,)
        for i, f in enumerate(reversed(c.conv_filters)):
            shapes[f"dec.conv{i}.W"] = (f, ch, k, k)
            shapes[f"dec.conv{i}.b"] = (f,)
            ch = f
        if c.conv_filters:
            shapes["dec.out.W"] = (1, ch, k, k)
            shapes["dec.out.b"] = (1,)
        return shapes

    def parameters(self):
        return list(self.params.values())

    @property
    def n_parameters(self):
        return sum(p.size for p in self.params.values())

    def _act(self, t):
        return nm.relu(t) if self.config.activation == "relu" else t

    def _encode(self, x):
        c, p = self.config, self.params
        n = x.shape[0]
        h = nm.reshape(x, (n, 1, c.patch_width, c.patch_width))
        for i in range(len(c.conv_filters)):
            h = self._act(nm.conv2d_forward(h, p[f"enc.conv{i}.W"], p[f"enc.conv{i}.b"]))
        h = nm.reshape(h, (n, -1))
        for i in range(len(c.dense_widths)):
            h = self._act(nm.dense_forward(h, p[f"enc.dense{i}.W"], p[f"enc.dense{i}.b"]))
        return nm.dense_forward(h, p["enc.latent.W"], p["enc.latent.b"])

    def _decode(self, z):
        c, p = self.config, self.params
        n = z.shape[0]
        h = z
        for i in range(len(c.dense_widths)):
            h = self._act(nm.dense_forward(h, p[f"dec.dense{i}.W"], p[f"dec.dense{i}.b"]))
        h = nm.dense_forward(h, p["dec.unflatten.W"], p["dec.unflatten.b"])
        if not c.conv_filters:
            return nm.reshape(h, (n, c.patch_width, c.patch_width))
        h = self._act(h)
        ch = c.conv_filters[-1]
        h = nm.reshape(h, (n, ch, c.patch_width, c.patch_width))
        for i in range(len(c.conv_filters)):
            h = self._act(nm.conv2d_forward(h, p[f"dec.conv{i}.W"], p[f"dec.conv{i}.b"]))
        h = nm.conv2d_forward(h, p["dec.out.W"], p["dec.out.b"])
        return nm.reshape(h, (n, c.patch_width, c.patch_width))

    def _check_patches(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        w = self.config.patch_width
        if x.ndim != 3 or x.shape[1:] != (w, w):
            raise DimensionError(f"expected patches of shape (N, {w}, {w}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("patches contain non-finite values")
        return x, single

    def encode(self, patches, batch_size=256):
        """Latent vectors for normalised patches ``(N, w, w)`` (or one ``(w, w)`` patch)."""
        x, single = self._check_patches(patches)
        out = np.concatenate([self._encode(nm.Tensor(x[i:i + batch_size])).value
                              for i in range(0, len(x), batch_size)]) if len(x) else np.empty((0, self.config.latent_dim))
        return out[0] if single else out

    def decode(self, latents, batch_size=256):
        z = np.asarray(latents, dtype=np.float64)
        single = z.ndim == 1
        if single:
            z = z[None]
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise DimensionError(f"expected latents of width {self.config.latent_dim}, got {z.shape}")
        out = np.concatenate([self._decode(nm.Tensor(z[i:i + batch_size])).value
                              for i in range(0, len(z), batch_size)])
        return out[0] if single else out

    def reconstruct(self, patches):
        return self.decode(self.encode(patches))

    def loss(self, x, target=None):
        """Mean squared reconstruction error as a recorded scalar."""
        x = nm.as_tensor(x)
        return nm.mse(self._decode(self._encode(x)), x.value if target is None else target)

    # persistence -----------------------------------------------------------------

    def save(self, path, extra=None):
        cfg = asdict(self.config)
        if extra:
            cfg = {"autoencoder": cfg, **extra}
        else:
            cfg = {"autoencoder": cfg}
        save_model(path, "autoencoder", cfg, {k: v.value for k, v in self.params.items()})

    @classmethod
    def load(cls, path, expected: AutoencoderConfig | None = None):
        cfg, arrays = load_model(path, "autoencoder")
        config = AutoencoderConfig.from_dict(cfg["autoencoder"])
        if expected is not None:
            check_shapes(arrays, cls.param_shapes(expected), str(path))
        model = cls(config, arrays=arrays)
        return model, {k: v for k, v in cfg.items() if k != "autoencoder"}


def train_autoencoder(patches, config: AutoencoderConfig, stream, log_fn=None):
    """Fit an autoencoder to normalised patches by minibatch Adam on MSE.

    Returns ``(model, loss_trace)`` where the trace holds the mean batch
    loss of every epoch.
    """
    x = np.asarray(patches, dtype=np.float64)
    if len(x) < config.batch_size:
        raise ConfigurationError(f"need at least batch_size={config.batch_size} patches, got {len(x)}")
    model = Autoencoder(config, stream.child("init"))
    order_stream = stream.child("shuffle")
    noise_stream = stream.child("noise")
    params = model.parameters()
    state = nm.OptimizerState.for_params(params, lr=config.learning_rate)
    trace = []
    for epoch in range(config.epochs):
        perm = order_stream.permutation(len(x))
        total, count = 0.0, 0
        for i in range(0, len(x), config.batch_size):
            batch = x[perm[i:i + config.batch_size]]
            inp = batch
            if config.input_noise > 0:
                inp = batch + noise_stream.normal(0.0, config.input_noise, size=batch.shape)
            loss = model.loss(inp, batch)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingError(f"autoencoder loss diverged in epoch {epoch}")
            grads = nm.backward(loss, params)
            try:
                nm.optimizer_step(params, grads, state)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from None
            total += value * len(batch)
            count += len(batch)
        trace.append(total / count)
        if log_fn is not None:
            log_fn(epoch, trace[-1])
    return model, trace
