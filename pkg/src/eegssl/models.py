"""Model zoo: recurrent autoencoders with and without soft attention, the
stacked autoencoder, DNN/CNN backbones and the shared classifier head.

Every model consumes feature sequences shaped ``(batch, steps, features)``
(8 one-second windows of 310 DE features by default) and exposes
``logits(x)`` returning ``(batch, 3)`` class scores.
"""
from __future__ import annotations

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import LSTM, BatchNorm1d, Conv1d, Dropout, Linear, Module, Parameter, uniform_init
from .autodiff.tensor import Tensor, leaky_relu, matmul, no_grad, relu, softmax, stack, tanh
from .errors import ConfigError, ShapeError

N_CLASSES = 3
N_STEPS = 8
N_FEATURES = 310


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def _leaky(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.3)


def _check_input(x: Tensor, steps: int, features: int):
    if x.ndim != 3 or x.shape[1] != steps or x.shape[2] != features:
        raise ShapeError(f"expected input of shape (batch, {steps}, {features}), got {x.shape}")


class SoftAttention(Module):
    """Additive soft attention over recurrent outputs.

    Each step's hidden state is squashed through ``tanh(h W + b)`` and
    scored against a learned context vector; the scores are softmaxed over
    steps and used to average the hidden states.
    """

    def __init__(self, hidden_size: int, rng):
        rng = _rng(rng)
        self.hidden_size = hidden_size
        self.weight = Parameter(uniform_init(rng, (hidden_size, hidden_size), hidden_size))
        self.bias = Parameter(np.zeros(hidden_size))
        self.context = Parameter(uniform_init(rng, (hidden_size, 1), hidden_size))

    def forward(self, hidden):
        """Return ``(summary, weights)`` with ``summary`` of shape (batch, hidden) and
        ``weights`` of shape (batch, steps)."""
        h = stack(hidden, axis=1) if isinstance(hidden, (list, tuple)) else hidden
        batch, steps, width = h.shape
        if width != self.hidden_size:
            raise ShapeError(f"attention expects hidden width {self.hidden_size}, got {width}")
        squashed = tanh(matmul(h.reshape(-1, width), self.weight) + self.bias)
        scores = matmul(squashed, self.context).reshape(batch, steps)
        weights = softmax(scores, axis=1)
        summary = (h * weights.reshape(batch, steps, 1)).sum(axis=1)
        return summary, weights


class AttRae(Module):
    """Two-layer LSTM encoder, optional soft attention, two-layer LSTM
    decoder and a per-step linear read-out back to feature width.

    With ``attention=False`` the latent is the last encoder hidden state
    (the plain recurrent autoencoder).
    """

    per_window = False

    def __init__(self, input_size: int = N_FEATURES, hidden_size: int = 256, steps: int = N_STEPS,
                 attention: bool = True, forget_bias: float = 1.0, seed=0):
        rng = _rng(seed)
        self.config = dict(input_size=input_size, hidden_size=hidden_size, steps=steps,
                           attention=attention, forget_bias=forget_bias)
        self.input_size = input_size
        self.steps = steps
        self.latent_width = hidden_size
        self.enc1 = LSTM(input_size, hidden_size, rng, steps, forget_bias)
        self.enc2 = LSTM(hidden_size, hidden_size, rng, steps, forget_bias)
        self.attention = SoftAttention(hidden_size, rng) if attention else None
        self.dec1 = LSTM(hidden_size, hidden_size, rng, steps, forget_bias)
        self.dec2 = LSTM(hidden_size, hidden_size, rng, steps, forget_bias)
        self.readout = Linear(hidden_size, input_size, rng)
        self.last_weights = None

    def encode(self, x: Tensor) -> Tensor:
        _check_input(x, self.steps, self.input_size)
        h2 = self.enc2(self.enc1(x))
        if self.attention is None:
            return h2[-1]
        summary, self.last_weights = self.attention(h2)
        return summary

    def decode(self, summary: Tensor) -> Tensor:
        # the latent is the input of every decoder step
        proj = matmul(summary, self.dec1.w_input) + self.dec1.bias
        h1 = self.dec1.forward_projected([proj] * self.steps)
        h2 = self.dec2(h1)
        return self.readout(stack(h2, axis=1))

    def forward(self, x: Tensor):
        summary = self.encode(x)
        return self.decode(summary), summary


class Sae(Module):
    """Stacked autoencoder applied window by window.

    ``encode`` maps (batch, steps, features) to per-window latents of shape
    (batch, steps, latent).
    """

    per_window = True

    def __init__(self, input_size: int = N_FEATURES, hidden: int = 256, latent: int = 64,
                 steps: int = N_STEPS, seed=0):
        rng = _rng(seed)
        self.config = dict(input_size=input_size, hidden=hidden, latent=latent, steps=steps)
        self.input_size = input_size
        self.steps = steps
        self.latent_width = latent
        self.enc1 = Linear(input_size, hidden, rng)
        self.enc2 = Linear(hidden, latent, rng)
        self.dec1 = Linear(latent, hidden, rng)
        self.dec2 = Linear(hidden, input_size, rng)

    def encode(self, x: Tensor) -> Tensor:
        _check_input(x, self.steps, self.input_size)
        return relu(self.enc2(relu(self.enc1(x))))

    def decode(self, z: Tensor) -> Tensor:
        return self.dec2(relu(self.dec1(z)))

    def forward(self, x: Tensor):
        z = self.encode(x)
        return self.decode(z), z


class Classifier(Module):
    """FC(64) -> ReLU -> dropout(0.5) -> FC(3)."""

    def __init__(self, in_width: int, hidden: int = 64, n_classes: int = N_CLASSES,
                 dropout: float = 0.5, seed=0):
        rng = _rng(seed)
        self.fc1 = Linear(in_width, hidden, rng)
        self.drop = Dropout(dropout)
        self.fc2 = Linear(hidden, n_classes, rng)

    def forward(self, z: Tensor) -> Tensor:
        logits = self.fc2(self.drop(relu(self.fc1(z))))
        # per-window heads are averaged into one segment prediction
        if logits.ndim == 3:
            logits = logits.mean(axis=1)
        return logits


class JointModel(Module):
    """Autoencoder plus a classifier on its latent representation."""

    def __init__(self, autoencoder: Module, head: Classifier):
        self.autoencoder = autoencoder
        self.head = head

    def encode(self, x: Tensor) -> Tensor:
        return self.autoencoder.encode(x)

    def decode(self, z: Tensor) -> Tensor:
        return self.autoencoder.decode(z)

    def logits(self, x: Tensor) -> Tensor:
        return self.head(self.encode(x))

    def forward(self, x: Tensor):
        z = self.encode(x)
        return self.decode(z), self.head(z)

    def supervised_parameters(self) -> list:
        """Parameters reached by the classification path (decoder excluded)."""
        ae = self.autoencoder
        skip = set()
        for name in ("dec1", "dec2", "readout"):
            sub = getattr(ae, name, None)
            if sub is not None:
                skip.update(id(p) for p in sub.parameters())
        return [p for p in self.parameters() if id(p) not in skip]


class DnnBackbone(Module):
    """FC(256) -> FC(64) with ReLU, then the shared classifier; per window."""

    def __init__(self, input_size: int = N_FEATURES, steps: int = N_STEPS, seed=0):
        rng = _rng(seed)
        self.config = dict(input_size=input_size, steps=steps)
        self.input_size = input_size
        self.steps = steps
        self.fc1 = Linear(input_size, 256, rng)
        self.fc2 = Linear(256, 64, rng)
        self.head = Classifier(64, seed=rng)

    def logits(self, x: Tensor) -> Tensor:
        _check_input(x, self.steps, self.input_size)
        return self.head(relu(self.fc2(relu(self.fc1(x)))))

    forward = logits


class CnnBackbone(Module):
    """Two 1-D convolutions over the feature axis of each window, then the
    shared classifier on the flattened maps."""

    def __init__(self, input_size: int = N_FEATURES, steps: int = N_STEPS, seed=0):
        rng = _rng(seed)
        self.config = dict(input_size=input_size, steps=steps)
        self.input_size = input_size
        self.steps = steps
        self.conv1 = Conv1d(1, 5, 3, rng)
        self.bn1 = BatchNorm1d(5)
        self.conv2 = Conv1d(5, 10, 3, rng)
        self.bn2 = BatchNorm1d(10)
        self.flat_width = 10 * ((input_size - 2) // 2 - 2)
        if self.flat_width <= 0:
            raise ConfigError(f"the convolutional backbone needs at least 8 input features, got {input_size}")
        self.head = Classifier(self.flat_width, seed=rng)

    def logits(self, x: Tensor) -> Tensor:
        _check_input(x, self.steps, self.input_size)
        batch = x.shape[0]
        h = x.reshape(batch * self.steps, 1, self.input_size)
        h = F.max_pool1d(_leaky(self.bn1(self.conv1(h))), 2, 2)
        h = _leaky(self.bn2(self.conv2(h)))
        out = self.head(h.reshape(batch * self.steps, self.flat_width))
        return out.reshape(batch, self.steps, N_CLASSES).mean(axis=1)

    forward = logits


# ---------------------------------------------------------------------------
# construction by name
# ---------------------------------------------------------------------------

AUTOENCODERS = ("att_rae", "rae", "sae")
BACKBONES = ("dnn", "cnn")


def build_model(kind: str, seed=0, input_size: int = N_FEATURES, steps: int = N_STEPS,
                hidden_size: int = 256) -> Module:
    """Build a freshly initialized model.

    ``kind`` is an autoencoder name (returns a :class:`JointModel`) or a
    backbone name.
    """
    rng = _rng(seed)
    if kind in ("att_rae", "rae"):
        ae = AttRae(input_size, hidden_size, steps, attention=(kind == "att_rae"), seed=rng)
        return JointModel(ae, Classifier(ae.latent_width, seed=rng))
    if kind == "sae":
        ae = Sae(input_size, steps=steps, seed=rng)
        return JointModel(ae, Classifier(ae.latent_width, seed=rng))
    if kind == "dnn":
        return DnnBackbone(input_size, steps, seed=rng)
    if kind == "cnn":
        return CnnBackbone(input_size, steps, seed=rng)
    raise ConfigError(f"unknown model kind {kind!r}")


def predict_proba(model: Module, x) -> np.ndarray:
    """Eval-mode class probabilities, without recording a graph."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = softmax(model.logits(x if isinstance(x, Tensor) else Tensor(x)), axis=-1).data
    finally:
        model.train(was_training)
    return out


def predict(model: Module, x, batch_size: int = 256) -> np.ndarray:
    """Eval-mode argmax predictions in {0, 1, 2}."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
    if len(x) == 0:
        return np.zeros(0, dtype=int)
    chunks = [predict_proba(model, x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(chunks).argmax(axis=1)


__all__ = [
    "SoftAttention", "AttRae", "Sae", "Classifier", "JointModel", "DnnBackbone", "CnnBackbone",
    "build_model", "predict", "predict_proba",
]
