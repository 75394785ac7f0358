"""Transformer-based residual 1D CNN classifier."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import RunConfig, ShapeMismatch
from . import layers as L

N_CLASSES = 2


@dataclass(frozen=True)
class Architecture:
    in_channels: int = 39
    channels: int = 32
    heads: int = 2
    ffn: int = 32
    dropout: float = 0.2
    n_block1: int = 3
    n_block2: int = 2
    hidden: int = 32
    pe_omega: float = 10000.0
    kernel_size: int = 3

    @classmethod
    def from_config(cls, cfg: RunConfig, in_channels: int = 39) -> "Architecture":
        return cls(in_channels=in_channels, channels=cfg.channels, heads=cfg.heads, ffn=cfg.ffn,
                   dropout=cfg.dropout, n_block1=cfg.n_block1, n_block2=cfg.n_block2,
                   hidden=cfg.channels, pe_omega=cfg.pe_omega)

    def to_text(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "Architecture":
        return cls(**json.loads(text))

    @property
    def block_names(self) -> list[str]:
        return [f"block1_{i}" for i in range(self.n_block1)] + [f"block2_{i}" for i in range(self.n_block2)]

    def min_length(self) -> int:
        return 2 ** self.n_block1

    def pooled_length(self, t: int) -> int:
        for _ in range(self.n_block1):
            t //= 2
        return t


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _he_conv(rng, cout, cin, k):
    return rng.normal(0.0, np.sqrt(2.0 / (cin * k)), size=(cout, cin, k))


class Network:
    """Parameters, running statistics and the forward/backward passes.

    ``params`` holds every trainable tensor by name; ``state`` holds the
    batch-norm running statistics and the input standardisation vectors,
    none of which receive gradients.
    """

    def __init__(self, arch: Architecture, params: dict, state: dict):
        self.arch = arch
        self.params = params
        self.state = state

    @classmethod
    def initialize(cls, arch: Architecture, rng: np.random.Generator) -> "Network":
        c, k = arch.channels, arch.kernel_size
        params: dict[str, np.ndarray] = {}
        state: dict[str, np.ndarray] = {
            "input.mean": np.zeros(arch.in_channels),
            "input.std": np.ones(arch.in_channels),
        }

        def bn(name, width):
            params[f"{name}.gamma"] = np.ones(width)
            params[f"{name}.beta"] = np.zeros(width)
            state[f"{name}.running_mean"] = np.zeros(width)
            state[f"{name}.running_var"] = np.ones(width)

        params["encoder.conv.w"] = _he_conv(rng, c, arch.in_channels, k)
        params["encoder.conv.b"] = np.zeros(c)
        bn("encoder.bn", c)
        for name in arch.block_names:
            params[f"{name}.conv.w"] = _he_conv(rng, c, c, k)
            params[f"{name}.conv.b"] = np.zeros(c)
            for w in ("wq", "wk", "wv", "wo"):
                params[f"{name}.tf.{w}"] = _glorot(rng, c, c, (c, c))
            params[f"{name}.tf.w1"] = _glorot(rng, c, arch.ffn, (c, arch.ffn))
            params[f"{name}.tf.b1"] = np.zeros(arch.ffn)
            params[f"{name}.tf.w2"] = _glorot(rng, arch.ffn, c, (arch.ffn, c))
            params[f"{name}.tf.b2"] = np.zeros(c)
            bn(f"{name}.bn", c)
            params[f"{name}.res.w"] = _he_conv(rng, c, c, 1)
            params[f"{name}.res.b"] = np.zeros(c)
            bn(f"{name}.res_bn", c)
        params["head.fc1.w"] = _glorot(rng, c, arch.hidden, (c, arch.hidden))
        params["head.fc1.b"] = np.zeros(arch.hidden)
        params["head.fc2.w"] = _glorot(rng, arch.hidden, N_CLASSES, (arch.hidden, N_CLASSES))
        params["head.fc2.b"] = np.zeros(N_CLASSES)
        return cls(arch, params, state)

    def copy(self) -> "Network":
        return Network(self.arch, {k: v.copy() for k, v in self.params.items()},
                       {k: v.copy() for k, v in self.state.items()})

    def set_input_normalization(self, features: np.ndarray) -> None:
        """Per-feature-row mean/std over a (N, 39, T) training batch."""
        self.state["input.mean"] = features.mean(axis=(0, 2))
        self.state["input.std"] = features.std(axis=(0, 2)) + 1e-8

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        for name in sorted(self.state):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.state[name]).tobytes())
        return h.hexdigest()

    # -- forward -------------------------------------------------------------

    def _bn(self, x, name, train, caches, new_state):
        p, s = self.params, self.state
        out, cache, (rm, rv) = L.batchnorm_forward(
            x, p[f"{name}.gamma"], p[f"{name}.beta"],
            s[f"{name}.running_mean"], s[f"{name}.running_var"], train)
        caches[name] = cache
        new_state[f"{name}.running_mean"] = rm
        new_state[f"{name}.running_var"] = rv
        return out

    def _block(self, x, name, pooled, train, rng, caches, new_state, acts):
        p, a = self.params, self.arch
        h, caches[f"{name}.conv"] = L.conv1d_forward(x, p[f"{name}.conv.w"], p[f"{name}.conv.b"])
        t = h.shape[2]
        z = h.transpose(0, 2, 1) + L.positional_encoding(t, a.channels, a.pe_omega)[None]
        tf = {k: p[f"{name}.tf.{k}"] for k in L.TRANSFORMER_PARAMS}
        z, caches[f"{name}.tf"] = L.transformer_forward(z, tf, a.heads, a.dropout, rng)
        if acts is not None:
            acts.append(z.copy())
        z = self._bn(z.transpose(0, 2, 1), f"{name}.bn", train, caches, new_state)
        r, caches[f"{name}.res"] = L.conv1d_forward(x, p[f"{name}.res.w"], p[f"{name}.res.b"])
        r = self._bn(r, f"{name}.res_bn", train, caches, new_state)
        out, caches[f"{name}.relu"] = L.relu_forward(z + r)
        if pooled:
            out, caches[f"{name}.drop"] = L.dropout_forward(out, a.dropout, rng)
            out, caches[f"{name}.pool"] = L.maxpool_forward(out)
        return out

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None,
                collect: bool = False):
        """Run the network on a (B, 39, T) batch.

        Returns ``(logits, probs, ctx)``.  ``ctx`` carries the backward
        caches, the would-be running statistics (``ctx["state"]``) and, when
        ``collect`` is set, the transformer and pooled activations.
        Dropout is active only when ``train`` and ``rng`` are both given.
        """
        a, p = self.arch, self.params
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != a.in_channels:
            raise ShapeMismatch(f"expected (batch, {a.in_channels}, T) input, got {x.shape}")
        if x.shape[2] < a.min_length():
            raise ShapeMismatch(f"T={x.shape[2]} too short for {a.n_block1} pooling blocks")
        drop_rng = rng if train else None
        caches: dict = {}
        new_state: dict = {}
        acts: list | None = [] if collect else None

        h = (x - self.state["input.mean"][None, :, None]) / self.state["input.std"][None, :, None]
        h, caches["encoder.conv"] = L.conv1d_forward(h, p["encoder.conv.w"], p["encoder.conv.b"])
        h = self._bn(h, "encoder.bn", train, caches, new_state)
        h, caches["encoder.relu"] = L.relu_forward(h)
        for i, name in enumerate(a.block_names):
            h = self._block(h, name, i < a.n_block1, train, drop_rng, caches, new_state, acts)
        caches["gap.t"] = h.shape[2]
        g = h.mean(axis=2)
        if acts is not None:
            acts.append(g.copy())
        g, caches["head.drop"] = L.dropout_forward(g, a.dropout, drop_rng)
        g, caches["head.fc1"] = L.linear_forward(g, p["head.fc1.w"], p["head.fc1.b"])
        g, caches["head.relu"] = L.relu_forward(g)
        logits, caches["head.fc2"] = L.linear_forward(g, p["head.fc2.w"], p["head.fc2.b"])
        probs = L.softmax(logits, axis=1)
        return logits, probs, {"caches": caches, "state": new_state, "activations": acts}

    def predict_proba(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[i:i + batch_size])[1] for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out) if out else np.empty((0, N_CLASSES))

    # -- backward ------------------------------------------------------------

    def backward(self, dlogits, ctx) -> dict[str, np.ndarray]:
        a = self.arch
        caches = ctx["caches"]
        grads: dict[str, np.ndarray] = {}

        def lin(d, name):
            d, grads[f"{name}.w"], grads[f"{name}.b"] = L.linear_backward(d, caches[name])
            return d

        def conv(d, name):
            d, grads[f"{name}.w"], grads[f"{name}.b"] = L.conv1d_backward(d, caches[name])
            return d

        def bn(d, name):
            d, grads[f"{name}.gamma"], grads[f"{name}.beta"] = L.batchnorm_backward(d, caches[name])
            return d

        d = lin(dlogits, "head.fc2")
        d = L.relu_backward(d, caches["head.relu"])
        d = lin(d, "head.fc1")
        d = L.dropout_backward(d, caches["head.drop"])
        t = caches["gap.t"]
        d = np.repeat(d[:, :, None] / t, t, axis=2)
        for i, name in reversed(list(enumerate(a.block_names))):
            if i < a.n_block1:
                d = L.maxpool_backward(d, caches[f"{name}.pool"])
                d = L.dropout_backward(d, caches[f"{name}.drop"])
            d = L.relu_backward(d, caches[f"{name}.relu"])
            dres = conv(bn(d, f"{name}.res_bn"), f"{name}.res")
            dz = bn(d, f"{name}.bn").transpose(0, 2, 1)
            dz, tf_grads = L.transformer_backward(dz, caches[f"{name}.tf"])
            for k, v in tf_grads.items():
                grads[f"{name}.tf.{k}"] = v
            d = conv(dz.transpose(0, 2, 1), f"{name}.conv") + dres
        d = L.relu_backward(d, caches["encoder.relu"])
        d = bn(d, "encoder.bn")
        conv(d, "encoder.conv")
        return grads

    def loss_and_grads(self, x, labels, class_weights, rng=None, train: bool = True):
        """Weighted cross-entropy and its gradient for every trainable tensor."""
        logits, probs, ctx = self.forward(x, train=train, rng=rng)
        loss, probs, dlogits = L.weighted_cross_entropy(logits, np.asarray(labels), class_weights)
        return loss, probs, self.backward(dlogits, ctx), ctx

    def activations(self, x) -> list[np.ndarray]:
        """Eval-mode transformer outputs (B, T_i, C) per block plus the pooled (B, C) vector."""
        return self.forward(x, train=False, collect=True)[2]["activations"]
