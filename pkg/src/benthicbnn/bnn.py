"""Bayes-by-Backprop classifier from latent vectors to habitat classes.

Every weight and bias carries a Gaussian variational factor
``N(mu, softplus(rho)^2)``. Training minimises the Monte Carlo estimate of

    kl_weight * (log q(w | mu, rho) - log P(w)) - log P(batch | w)

averaged over ``n_mc`` reparameterised draws ``w = mu + softplus(rho) * eps``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nm
from .errors import ConfigurationError, DimensionError, TrainingError
from .store import check_shapes, load_model, save_model

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorConfig:
    """Weight prior: isotropic Gaussian, or Blundell's two-Gaussian scale mixture."""

    kind: str = "gaussian"
    std: float = 1.0
    mixture_pi: float = 0.5
    mixture_sigma1: float = 1.0
    mixture_sigma2: float = math.exp(-6)

    def __post_init__(self):
        if self.kind not in ("gaussian", "scale_mixture"):
            raise ConfigurationError(f"unknown prior kind {self.kind!r}")
        if not self.std > 0 or not self.mixture_sigma1 > 0 or not self.mixture_sigma2 > 0:
            raise ConfigurationError("prior standard deviations must be positive")
        if not 0 < self.mixture_pi < 1:
            raise ConfigurationError("mixture_pi must lie in (0, 1)")

    def log_prob(self, w):
        """Summed log density of the tensor ``w`` (recorded)."""
        if self.kind == "gaussian":
            s = self.std
            return nm.tsum(nm.square(w)) * (-0.5 / (s * s)) - w.size * (_HALF_LOG_2PI + math.log(s))
        s1, s2, pi = self.mixture_sigma1, self.mixture_sigma2, self.mixture_pi
        sq = nm.square(w)
        a = sq * (-0.5 / (s1 * s1)) + (math.log(pi) - math.log(s1) - _HALF_LOG_2PI)
        b = sq * (-0.5 / (s2 * s2)) + (math.log1p(-pi) - math.log(s2) - _HALF_LOG_2PI)
        return nm.tsum(nm.logaddexp(a, b))


@dataclass(frozen=True)
class BNNConfig:
    hidden: tuple = (128, 128, 128)
    n_classes: int = 5
    prior: PriorConfig = field(default_factory=PriorConfig)
    rho_init: float = -3.0
    mu_init_std: float = 0.1
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    n_mc: int = 1
    predict_samples: int = 50

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if isinstance(self.prior, dict):
            object.__setattr__(self, "prior", PriorConfig(**self.prior))
        if self.n_classes < 2:
            raise ConfigurationError("need at least two classes")
        if self.n_mc < 1:
            raise ConfigurationError("n_mc must be at least 1")

    def to_dict(self):
        return asdict(self)


def softplus_np(x):
    return np.logaddexp(0.0, x)


class VariationalPosterior:
    """Gaussian factors ``(mu, rho)`` for every weight and bias of an MLP."""

    def __init__(self, input_dim: int, config: BNNConfig = BNNConfig(), stream=None, arrays=None):
        self.input_dim = int(input_dim)
        self.config = config
        shapes = self.param_shapes(self.input_dim, config)
        if arrays is None:
            if stream is None:
                raise ConfigurationError("need a stream to initialise the posterior")
            arrays = {}
            for name, shape in shapes.items():
                if name.endswith("_mu"):
                    arrays[name] = stream.normal(0.0, config.mu_init_std, size=shape)
                else:
                    arrays[name] = np.full(shape, config.rho_init)
        check_shapes(arrays, shapes, "posterior")
        self.params = {n: nm.Tensor(arrays[n], requires_grad=True, name=n) for n in shapes}

    @staticmethod
    def param_shapes(input_dim, config: BNNConfig):
        widths = [input_dim, *config.hidden, config.n_classes]
        shapes = {}
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"l{i}.W_mu"] = (a, b)
            shapes[f"l{i}.W_rho"] = (a, b)
            shapes[f"l{i}.b_mu"] = (b,)
            shapes[f"l{i}.b_rho"] = (b,)
        return shapes

    @property
    def n_layers(self):
        return len(self.config.hidden) + 1

    def parameters(self):
        return list(self.params.values())

    @property
    def n_weights(self):
        return sum(p.size for n, p in self.params.items() if n.endswith("_mu"))

    def sigmas(self):
        return {n[:-4]: softplus_np(p.value) for n, p in self.params.items() if n.endswith("_rho")}

    def noise_shapes(self):
        return [self.params[f"l{i}.{k}_mu"].shape for i in range(self.n_layers) for k in ("W", "b")]

    def draw_noise(self, stream):
        return [stream.standard_normal(s) for s in self.noise_shapes()]

    def sample_weights(self, stream=None, noise=None):
        """Reparameterised draw ``mu + softplus(rho) * eps`` (recorded).

        Returns ``(weights, sigmas)``: lists of tensors in the order
        ``W0, b0, W1, b1, ...``. ``noise`` fixes ``eps``.
        """
        if noise is None:
            noise = self.draw_noise(stream)
        weights, sigmas = [], []
        j = 0
        for i in range(self.n_layers):
            for k in ("W", "b"):
                mu, rho = self.params[f"l{i}.{k}_mu"], self.params[f"l{i}.{k}_rho"]
                sig = nm.softplus(rho)
                weights.append(mu + sig * noise[j])
                sigmas.append(sig)
                j += 1
        return weights, sigmas

    def log_q(self, weights, sigmas):
        """Summed log density of the drawn weights under the posterior (recorded)."""
        total = None
        j = 0
        for i in range(self.n_layers):
            for k in ("W", "b"):
                mu = self.params[f"l{i}.{k}_mu"]
                w, s = weights[j], sigmas[j]
                term = nm.tsum(nm.square(w - mu) / (nm.square(s) * 2.0) + nm.log(s))
                total = term if total is None else total + term
                j += 1
        return -total - self.n_weights * _HALF_LOG_2PI

    def forward(self, x, weights):
        h = nm.as_tensor(x)
        for i in range(self.n_layers):
            h = nm.dense_forward(h, weights[2 * i], weights[2 * i + 1])
            if i < self.n_layers - 1:
                h = nm.relu(h)
        return h

    def logits_np(self, x, noise):
        """Forward pass with plain arrays; ``noise`` as from :meth:`draw_noise`."""
        h = np.asarray(x, dtype=np.float64)
        j = 0
        for i in range(self.n_layers):
            W = self.params[f"l{i}.W_mu"].value + softplus_np(self.params[f"l{i}.W_rho"].value) * noise[j]
            b = self.params[f"l{i}.b_mu"].value + softplus_np(self.params[f"l{i}.b_rho"].value) * noise[j + 1]
            h = h @ W + b
            if i < self.n_layers - 1:
                np.maximum(h, 0.0, out=h)
            j += 2
        return h

    def copy(self):
        return VariationalPosterior(self.input_dim, self.config,
                                    arrays={n: p.value.copy() for n, p in self.params.items()})

    def save(self, path, extra=None):
        cfg = {"input_dim": self.input_dim, "bnn": self.config.to_dict(), **(extra or {})}
        save_model(path, "bnn", cfg, {n: p.value for n, p in self.params.items()})

    @classmethod
    def load(cls, path, expected: BNNConfig | None = None, input_dim=None):
        cfg, arrays = load_model(path, "bnn")
        config = BNNConfig(**cfg["bnn"])
        if expected is not None:
            check_shapes(arrays, cls.param_shapes(input_dim or cfg["input_dim"], expected), str(path))
        post = cls(cfg["input_dim"], config, arrays=arrays)
        return post, {k: v for k, v in cfg.items() if k not in ("input_dim", "bnn")}


def sample_weights(posterior: VariationalPosterior, stream, noise=None):
    """Concrete weights ``w = mu + softplus(rho) * eps`` as plain arrays."""
    weights, _ = posterior.sample_weights(stream, noise)
    return [w.value for w in weights]


def complexity_cost(posterior: VariationalPosterior, prior: PriorConfig, weights, sigmas):
    """Single-draw estimate ``log q(w) - log P(w)`` summed over all parameters (recorded)."""
    cost = posterior.log_q(weights, sigmas)
    for w in weights:
        cost = cost - prior.log_prob(w)
    return cost


def elbo_loss(posterior: VariationalPosterior, prior: PriorConfig, latents, labels,
              n_mc=1, kl_weight=1.0, stream=None, noise=None):
    """Monte Carlo variational free energy of one minibatch (recorded scalar).

    ``noise`` optionally fixes the ``eps`` draws: a list with one entry per
    Monte Carlo sample, each as returned by ``posterior.draw_noise``.
    """
    if n_mc < 1:
        raise ConfigurationError("n_mc must be at least 1")
    if not 0 < kl_weight <= 1:
        raise ConfigurationError(f"kl_weight must lie in (0, 1], got {kl_weight}")
    x = np.asarray(latents, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != posterior.input_dim or len(y) != len(x):
        raise DimensionError(f"latents {x.shape} / labels {y.shape} do not fit input width {posterior.input_dim}")
    total = None
    for i in range(n_mc):
        weights, sigmas = posterior.sample_weights(stream, None if noise is None else noise[i])
        complexity = complexity_cost(posterior, prior, weights, sigmas)
        nll = nm.cross_entropy(posterior.forward(x, weights), y, reduction="sum")
        term = complexity * kl_weight + nll
        total = term if total is None else total + term
    loss = total * (1.0 / n_mc)
    if not np.isfinite(loss.value):
        raise TrainingError("ELBO loss is not finite")
    return loss


def gaussian_kl(mu, sigma):
    """Closed-form KL(N(mu, sigma^2) || N(0, 1))."""
    return 0.5 * (mu * mu + sigma * sigma - 1.0 - np.log(sigma * sigma))


def train_bnn(posterior: VariationalPosterior, latents, labels, epochs=None, batch_size=None,
              stream=None, learning_rate=None, log_fn=None):
    """Minibatch Bayes-by-Backprop with KL weight ``1 / n_batches``.

    Updates ``posterior`` in place (warm start) and returns
    ``(posterior, trace)``; the trace holds the summed minibatch loss of
    every epoch.
    """
    cfg = posterior.config
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    x = np.asarray(latents, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    if len(y) != len(x):
        raise DimensionError(f"{len(x)} latents but {len(y)} labels")
    if y.min() < 0 or y.max() >= cfg.n_classes:
        raise ConfigurationError(f"labels must lie in [0, {cfg.n_classes})")
    n_batches = math.ceil(len(x) / batch_size)
    kl_weight = 1.0 / n_batches
    params = posterior.parameters()
    state = nm.OptimizerState.for_params(params, lr=lr)
    order_stream = stream.child("shuffle")
    mc_stream = stream.child("mc")
    trace = []
    for epoch in range(epochs):
        perm = order_stream.permutation(len(x))
        total = 0.0
        for i in range(0, len(x), batch_size):
            idx = perm[i:i + batch_size]
            try:
                loss = elbo_loss(posterior, cfg.prior, x[idx], y[idx], cfg.n_mc, kl_weight, mc_stream)
                grads = nm.backward(loss, params)
                nm.optimizer_step(params, grads, state)
            except TrainingError as exc:
                raise TrainingError(f"BNN training diverged in epoch {epoch}: {exc}") from None
            total += float(loss.value)
        trace.append(total)
        if log_fn is not None:
            log_fn(epoch, total)
    return posterior, trace


@dataclass(frozen=True, eq=False)
class PredictiveSamples:
    """``T`` softmax vectors per input; ``samples`` has shape ``(T, ..., K)``."""

    samples: np.ndarray

    @property
    def T(self):
        return self.samples.shape[0]

    @property
    def mean(self):
        return self.samples.mean(axis=0)

    def __getitem__(self, idx):
        """Predictive samples of one input (or a slice of inputs)."""
        return PredictiveSamples(self.samples[:, idx])


def predict(posterior: VariationalPosterior, latents, T=None, stream=None):
    """``T`` independent weight draws, each giving a softmax vector per latent."""
    T = posterior.config.predict_samples if T is None else T
    if T < 2:
        raise ConfigurationError(f"T must be at least 2 for a variance estimate, got {T}")
    x = np.asarray(latents, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    out = np.empty((T, len(x), posterior.config.n_classes))
    for t in range(T):
        out[t] = nm.softmax(posterior.logits_np(x, posterior.draw_noise(stream)))
    return PredictiveSamples(out[:, 0] if single else out)


def sample_class(predictive: PredictiveSamples, stream, size=None):
    """Draw classes from the Monte Carlo mean ``ybar``."""
    p = np.asarray(predictive.mean if isinstance(predictive, PredictiveSamples) else predictive)
    cdf = np.cumsum(p, axis=-1)
    cdf[..., -1] = 1.0
    if p.ndim == 1:
        u = stream.random(size)
        return np.searchsorted(cdf, u, side="right") if size is not None else int(np.searchsorted(cdf, u, side="right"))
    u = stream.random(p.shape[:-1] if size is None else (size, *p.shape[:-1]))
    return (u[..., None] >= cdf).sum(axis=-1)
