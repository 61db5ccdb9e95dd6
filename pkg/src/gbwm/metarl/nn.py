"""Small fully connected networks with hand-written backpropagation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first, output last) and the output head.

    Hidden layers use ``tanh``; the head is ``"sigmoid"`` or ``"linear"``.
    """

    widths: tuple[int, ...]
    head: str = "linear"

    def __post_init__(self) -> None:
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if self.head not in ("sigmoid", "linear"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @classmethod
    def actor(cls, n_in: int = 26) -> "MlpSpec":
        return cls((n_in, 256, 64, 16, 1), "sigmoid")

    @classmethod
    def critic(cls, n_in: int = 26) -> "MlpSpec":
        return cls((n_in, 64, 16, 1), "linear")


@dataclass
class Mlp:
    """Parameters of one network: ``weights[l]`` is ``(in, out)``."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator) -> "Mlp":
        """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` weights and biases."""
        ws, bs = [], []
        for a, b in zip(spec.widths[:-1], spec.widths[1:]):
            bound = 1.0 / np.sqrt(a)
            ws.append(rng.uniform(-bound, bound, size=(a, b)))
            bs.append(rng.uniform(-bound, bound, size=b))
        return cls(spec, ws, bs)

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "Mlp":
        return cls(
            spec,
            [np.zeros((a, b)) for a, b in zip(spec.widths[:-1], spec.widths[1:])],
            [np.zeros(b) for b in spec.widths[1:]],
        )

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: np.ndarray | None = None
    out: np.ndarray | None = None


def _rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # a fixed reduction order per row keeps results independent of batch size
    return np.einsum("ij,jk->ik", x, w, optimize=False)


def mlp_forward(net: Mlp, x: np.ndarray, rowwise: bool = True) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate ``net`` on a batch ``(B, n_in)`` (or a single vector).

    Returns the head output with shape ``(B,)`` and the activations needed by
    :func:`mlp_gradient`. ``cache.pre`` is the head's input (the logit for a
    sigmoid head).

    With ``rowwise`` each row's result is bitwise independent of the batch it
    sits in (BLAS picks different kernels for different batch shapes); the
    faster BLAS path is fine inside optimisation steps.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != net.spec.n_in:
        raise ValueError(f"expected {net.spec.n_in} inputs, got {x.shape[1]}")
    cache = ForwardCache()
    h = x
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(h)
        z = (_rowwise_matmul(h, w) if rowwise else h @ w) + b
        h = np.tanh(z) if l < last else z
    pre = h[:, 0]
    out = expit(pre) if net.spec.head == "sigmoid" else pre
    cache.pre, cache.out = pre, out
    return out, cache


def mlp_gradient(net: Mlp, cache: ForwardCache, upstream, wrt: str = "out") -> list[np.ndarray]:
    """Gradients of ``sum(upstream * y)`` with respect to every parameter.

    ``wrt="out"`` takes ``y`` as the network output; ``wrt="pre"`` takes it
    as the head's input (skipping the sigmoid). Gradients are returned in the
    order of :meth:`Mlp.params`.
    """
    g = np.asarray(upstream, dtype=float).reshape(-1)
    if wrt == "out" and net.spec.head == "sigmoid":
        g = g * cache.out * (1.0 - cache.out)
    elif wrt not in ("out", "pre"):
        raise ValueError("wrt must be 'out' or 'pre'")
    delta = g[:, None]
    grads: list[np.ndarray] = []
    n = len(net.weights)
    for l in range(n - 1, -1, -1):
        inp = cache.inputs[l]
        grads.append(delta.sum(axis=0))
        grads.append(inp.T @ delta)
        if l > 0:
            # inputs[l] is tanh of the previous layer's pre-activation
            delta = (delta @ net.weights[l].T) * (1.0 - inp * inp)
    grads.reverse()
    return grads


class Adam:
    """Adaptive moment estimation over a fixed list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src
