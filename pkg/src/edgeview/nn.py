"""Minimal dense networks used by the learners, with hand-rolled autodiff.

Fully-connected layers with ReLU hidden activations.  The output layer
is sigmoid-squashed (actions in [0, 1]) or left linear (value heads); an
actor may reserve a linear tail for outputs that feed a downstream
softmax.  Parameters live in one flat float64 vector so the optimizer,
the soft target updates and checkpointing stay trivial.

The backward pass computes the exact gradient of sum_i <grad_out_i,
y_i> over a batch, i.e. the caller folds any loss scaling into
``grad_out``.  Gradients are validated against central finite
differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Mlp:
    """Dense ReLU network over a single flat parameter vector.

    ``sizes`` lists layer widths input-first; ``output`` is "sigmoid" or
    "identity"; ``linear_tail`` exempts the last k outputs from the
    sigmoid squash.
    """

    def __init__(
        self,
        sizes: tuple[int, ...],
        output: str = "sigmoid",
        linear_tail: int = 0,
        rng: np.random.Generator | None = None,
    ) -> None:
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        if output not in ("sigmoid", "identity"):
            raise ValueError(f"unknown output mode {output!r}")
        if not (0 <= linear_tail <= sizes[-1]):
            raise ValueError("linear_tail must fit in the output layer")
        self.sizes = tuple(int(s) for s in sizes)
        self.output = output
        self.linear_tail = int(linear_tail)
        self.params = np.zeros(
            sum((fi + 1) * fo for fi, fo in zip(self.sizes, self.sizes[1:]))
        )
        self._layers: list[tuple[np.ndarray, np.ndarray]] = []
        off = 0
        for fi, fo in zip(self.sizes, self.sizes[1:]):
            w = self.params[off: off + fi * fo].reshape(fi, fo)
            off += fi * fo
            b = self.params[off: off + fo]
            off += fo
            self._layers.append((w, b))
        if rng is not None:
            self.init_params(rng)

    @property
    def param_count(self) -> int:
        return len(self.params)

    def init_params(self, rng: np.random.Generator) -> None:
        """Uniform +-1/sqrt(fan_in) per layer, weights then biases."""
        for w, b in self._layers:
            bound = 1.0 / np.sqrt(w.shape[0])
            w[:] = rng.uniform(-bound, bound, w.shape)
            b[:] = rng.uniform(-bound, bound, b.shape)

    def _squash(self, z: np.ndarray) -> np.ndarray:
        if self.output == "identity":
            return z
        if self.linear_tail == 0:
            return _sigmoid(z)
        k = z.shape[-1] - self.linear_tail
        out = z.copy()
        out[..., :k] = _sigmoid(z[..., :k])
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Output plus the per-layer activations needed by backward."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.sizes[0]}")
        cache = [h]
        for i, (w, b) in enumerate(self._layers):
            z = h @ w + b
            h = np.maximum(z, 0.0) if i < len(self._layers) - 1 else self._squash(z)
            cache.append(h)
        return (h[0] if single else h), cache

    def backward(
        self, cache: list[np.ndarray], grad_out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of sum(<grad_out, output>) w.r.t. params and input."""
        g = np.asarray(grad_out, dtype=float)
        single = g.ndim == 1
        if single:
            g = g[None, :]
        y = cache[-1]
        if self.output == "identity":
            dz = g.copy()
        else:
            dsig = y * (1.0 - y)
            if self.linear_tail:
                dsig = dsig.copy()
                dsig[..., y.shape[-1] - self.linear_tail:] = 1.0
            dz = g * dsig
        grads = np.zeros_like(self.params)
        off = len(self.params)
        for i in range(len(self._layers) - 1, -1, -1):
            w, _ = self._layers[i]
            h_in = cache[i]
            fo = w.shape[1]
            off -= fo
            grads[off: off + fo] = dz.sum(axis=0)
            off -= w.size
            grads[off: off + w.size] = (h_in.T @ dz).ravel()
            dh = dz @ w.T
            if i > 0:
                dz = dh * (cache[i] > 0.0)
        grad_in = dh
        return grads, (grad_in[0] if single else grad_in)

    def copy(self) -> "Mlp":
        dup = Mlp(self.sizes, output=self.output, linear_tail=self.linear_tail)
        dup.params[:] = self.params
        return dup

    def state_dict(self) -> dict:
        return {
            "sizes": np.array(self.sizes, dtype=np.int64),
            "output": np.str_(self.output),
            "linear_tail": np.int64(self.linear_tail),
            "params": self.params.copy(),
        }

    @staticmethod
    def from_state(state: dict) -> "Mlp":
        net = Mlp(
            tuple(int(s) for s in state["sizes"]),
            output=str(state["output"]),
            linear_tail=int(state["linear_tail"]),
        )
        net.params[:] = state["params"]
        return net


@dataclass
class AdamState:
    """Bias-corrected Adam over one flat parameter vector."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @staticmethod
    def for_net(net: Mlp, lr: float) -> "AdamState":
        return AdamState(lr=lr, m=np.zeros(net.param_count), v=np.zeros(net.param_count))


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One in-place descent step along ``grads``; returns ``params``."""
    if state.m.shape != params.shape:
        raise ValueError("optimizer state does not match the parameter vector")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def soft_update(target: Mlp, local: Mlp, rate: float) -> None:
    """Move target params a fraction ``rate`` toward the local network."""
    if target.params.shape != local.params.shape:
        raise ValueError("networks differ in shape")
    target.params *= 1.0 - rate
    target.params += rate * local.params


CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, nets: dict[str, Mlp]) -> None:
    """Write named networks to one .npz file with a format version."""
    payload: dict[str, np.ndarray] = {"__version__": np.int64(CHECKPOINT_VERSION)}
    for name, net in nets.items():
        for key, value in net.state_dict().items():
            payload[f"{name}::{key}"] = value
    np.savez(path, **payload)


def load_checkpoint(path: str) -> dict[str, Mlp]:
    """Inverse of save_checkpoint."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        names = sorted({k.split("::")[0] for k in data.files if "::" in k})
        nets: dict[str, Mlp] = {}
        for name in names:
            state = {
                k.split("::", 1)[1]: data[k]
                for k in data.files
                if k.startswith(name + "::")
            }
            nets[name] = Mlp.from_state(state)
        return nets
