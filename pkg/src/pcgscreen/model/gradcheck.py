"""Central finite-difference gradient checking for :class:`Network`."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..core import make_rng
from .layers import weighted_cross_entropy
from .network import Network


def _pattern(ctx) -> str:
    """Digest of every ReLU mask and max-pool argmax in a forward context."""
    h = hashlib.sha1()
    for name, cache in sorted(ctx["caches"].items()):
        if name.endswith(".relu"):
            h.update(np.packbits(cache).tobytes())
        elif name.endswith(".pool"):
            h.update(cache[0].tobytes())
        elif name.endswith(".tf"):
            h.update(np.packbits(cache[3]).tobytes())  # FFN ReLU mask
    return h.hexdigest()


@dataclass
class GradCheckResult:
    checked: int = 0
    failures: list = field(default_factory=list)
    reduced_steps: int = 0
    worst_abs: float = 0.0
    worst_rel: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures


def check_network_gradients(net: Network, x, labels, class_weights, dropout_seed: int = 0,
                            step: float = 1e-4, rtol: float = 1e-4, atol: float = 1e-6,
                            names=None) -> GradCheckResult:
    """Compare ``Network.backward`` with central differences on every parameter entry.

    Dropout masks are frozen by reseeding the dropout generator for every
    evaluation.  If a perturbation of ``step`` flips a ReLU or max-pool
    decision the loss is not differentiable across that interval, so the
    step for that coordinate is divided by ten until the activation pattern
    is stable (at most four times).
    """
    labels = np.asarray(labels)

    def run():
        logits, _, ctx = net.forward(x, train=True, rng=make_rng(dropout_seed))
        return weighted_cross_entropy(logits, labels, class_weights)[0], ctx

    logits, _, ctx = net.forward(x, train=True, rng=make_rng(dropout_seed))
    _, _, dlogits = weighted_cross_entropy(logits, labels, class_weights)
    grads = net.backward(dlogits, ctx)
    base = _pattern(ctx)

    result = GradCheckResult()
    for name in names or sorted(net.params):
        p = net.params[name]
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            h = step
            for attempt in range(5):
                p[idx] = orig + h
                lp, cp = run()
                p[idx] = orig - h
                lm, cm = run()
                p[idx] = orig
                if (_pattern(cp) == base and _pattern(cm) == base) or attempt == 4:
                    break
                h /= 10
            if h != step:
                result.reduced_steps += 1
            num = (lp - lm) / (2 * h)
            ana = float(grads[name][idx])
            err = abs(num - ana)
            rel = err / max(abs(num), abs(ana), 1e-300)
            result.checked += 1
            result.worst_abs = max(result.worst_abs, err)
            if err > atol:
                result.worst_rel = max(result.worst_rel, rel)
                if rel > rtol:
                    result.failures.append((name, idx, num, ana))
    return result
