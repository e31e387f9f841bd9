"""Small fully connected value networks with exact input and parameter gradients.

The forward pass carries, next to every hidden activation, its tangent with
respect to each input coordinate. Values and tangents share one matrix per
layer (``units x batch*(1 + n_in)``), so a layer is a single GEMM. The backward
pass differentiates that extended computation, which gives exact parameter
gradients of losses built from both the value and its input gradient.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu", "sin")
SIREN_OMEGA = 30.0


def _activate(name: str, z: np.ndarray, omega: float):
    """Activation and its first two derivatives."""
    if name == "tanh":
        a = np.tanh(z)
        d1 = 1.0 - a * a
        return a, d1, -2.0 * a * d1
    if name == "relu":
        # subgradient 0 at the kink; second derivative 0 everywhere
        return np.maximum(z, 0.0), (z > 0).astype(z.dtype), np.zeros_like(z)
    if name == "sin":
        wz = omega * z
        a = np.sin(wz)
        return a, omega * np.cos(wz), -omega * omega * a
    raise ValueError(f"unknown activation {name!r}")


def init_bound(activation: str, layer: int, n_in: int, n_out: int) -> float:
    """Uniform init bound: Glorot for tanh, He for relu, sinusoidal-network scheme for sin."""
    if activation == "sin":
        return 1.0 / n_in if layer == 0 else np.sqrt(6.0 / n_in) / SIREN_OMEGA
    if activation == "relu":
        return np.sqrt(6.0 / n_in)
    return np.sqrt(6.0 / (n_in + n_out))


@dataclass
class ValueNet:
    """MLP ``n_in -> hidden... -> 1`` on inputs normalized to ``[-1, 1]``.

    ``lo`` and ``hi`` are the physical ranges of each input coordinate; they
    come from a declared sampling domain, never from data. The last layer's
    output is multiplied by the fixed ``out_scale``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str
    lo: np.ndarray
    hi: np.ndarray
    omega: float = SIREN_OMEGA
    meta: dict = field(default_factory=dict)
    out_scale: float = 1.0

    @classmethod
    def create(cls, lo, hi, activation: str = "tanh", hidden=(64, 64, 64), seed=0, meta=None,
               out_scale: float = 1.0) -> "ValueNet":
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        sizes = [len(lo), *hidden, 1]
        weights, biases = [], []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            weights.append(rng.uniform(-1.0, 1.0, size=(n_out, n_in)) * init_bound(activation, k, n_in, n_out))
            if activation == "sin":
                biases.append(rng.uniform(-1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_in), size=n_out))
            else:
                biases.append(np.zeros(n_out))
        return cls(weights, biases, activation, lo, hi, meta=dict(meta or {}), out_scale=float(out_scale))

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def input_scale(self) -> np.ndarray:
        """d(normalized)/d(physical) per input coordinate."""
        return 2.0 / (self.hi - self.lo)

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lo) * self.input_scale - 1.0

    # parameter plumbing -------------------------------------------------

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def set_params(self, params) -> None:
        params = list(params)
        self.weights = [np.array(p, dtype=float) for p in params[0::2]]
        self.biases = [np.array(p, dtype=float) for p in params[1::2]]

    def copy(self) -> "ValueNet":
        return ValueNet([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                        self.activation, self.lo.copy(), self.hi.copy(), self.omega, dict(self.meta), self.out_scale)

    # forward / backward -------------------------------------------------

    def forward(self, x, with_grad: bool = True, keep: bool = False):
        """Values ``(B,)`` and physical input gradients ``(B, n_in)``.

        With ``keep`` the intermediate activations are returned as a third
        element for :meth:`backward`.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        B, n = x.shape
        nt = n if with_grad else 0
        h = self.normalize(x).T  # (n, B)
        if nt:
            tangent = np.broadcast_to(np.eye(n)[:, None, :], (n, B, n)).reshape(n, B * n)
            h = np.concatenate([h, tangent], axis=1)
        layers = []
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            zz = W @ h
            zz[:, :B] += b[:, None]
            if k == last:
                break
            a, d1, d2 = _activate(self.activation, zz[:, :B], self.omega)
            if nt:
                tz = zz[:, B:].reshape(-1, B, nt)
                ta = (d1[:, :, None] * tz).reshape(-1, B * nt)
                h_next = np.concatenate([a, ta], axis=1)
            else:
                h_next = a
            layers.append((h, d1, d2, zz[:, B:]))
            h = h_next
        value = self.out_scale * zz[0, :B]
        grad = self.out_scale * zz[0, B:].reshape(B, nt) * self.input_scale if nt else None
        if keep:
            return value, grad, (layers, h, B, nt)
        return value, grad

    def backward(self, cache, dvalue, dgrad=None) -> list[np.ndarray]:
        """Parameter gradients for a loss with ``dL/dvalue`` and ``dL/dgrad`` (physical)."""
        layers, h_last, B, nt = cache
        dvalue = self.out_scale * np.asarray(dvalue, dtype=float).reshape(B)
        if nt:
            if dgrad is None:
                dgrad = np.zeros((B, nt))
            dgrad_n = self.out_scale * np.asarray(dgrad, dtype=float) * self.input_scale
            top = np.concatenate([dvalue, dgrad_n.reshape(B * nt)])[None, :]
        else:
            top = dvalue[None, :]
        grads_W = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        k = len(self.weights) - 1
        grads_W[k] = top @ h_last.T
        grads_b[k] = top[:, :B].sum(axis=1)
        dh = self.weights[k].T @ top
        for k in range(len(layers) - 1, -1, -1):
            h_prev, d1, d2, tz = layers[k]
            da = dh[:, :B]
            dz = da * d1
            if nt:
                dta = dh[:, B:].reshape(-1, B, nt)
                tzr = tz.reshape(-1, B, nt)
                dz = dz + d2 * np.einsum("jbn,jbn->jb", dta, tzr)
                dtz = (d1[:, :, None] * dta).reshape(-1, B * nt)
                dzz = np.concatenate([dz, dtz], axis=1)
            else:
                dzz = dz
            grads_W[k] = dzz @ h_prev.T
            grads_b[k] = dz.sum(axis=1)
            if k:
                dh = self.weights[k].T @ dzz
        out = []
        for gW, gb in zip(grads_W, grads_b):
            out.extend((gW, gb))
        return out

    def __call__(self, x, with_grad: bool = True):
        return self.forward(x, with_grad=with_grad)

    # persistence --------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "format": "nashvalue-mlp-1",
            "activation": self.activation,
            "omega": self.omega,
            "out_scale": self.out_scale,
            "layer_shapes": [list(W.shape) for W in self.weights],
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "meta": self.meta,
        }
        arrays = {f"W{k}": W for k, W in enumerate(self.weights)}
        arrays.update({f"b{k}": b for k, b in enumerate(self.biases)})
        tmp = path.with_name(path.name + ".tmp.npz")
        np.savez(tmp, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "ValueNet":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            n = len(header["layer_shapes"])
            weights = [data[f"W{k}"].copy() for k in range(n)]
            biases = [data[f"b{k}"].copy() for k in range(n)]
        for W, shape in zip(weights, header["layer_shapes"]):
            if list(W.shape) != shape:
                raise ValueError(f"corrupt checkpoint {path}: layer shape {W.shape} != {shape}")
        return cls(weights, biases, header["activation"], np.array(header["lo"]), np.array(header["hi"]),
                   header["omega"], header["meta"], header.get("out_scale", 1.0))


def param_gradient(net: ValueNet, x, loss_fn, with_grad: bool = True):
    """Scalar loss and its parameter gradient.

    ``loss_fn(value, grad)`` returns ``(loss, dloss/dvalue, dloss/dgrad)``; the
    last may be ``None`` when the loss ignores the input gradient.
    """
    value, grad, cache = net.forward(x, with_grad=with_grad, keep=True)
    loss, dv, dg = loss_fn(value, grad)
    return float(loss), net.backward(cache, dv, dg)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected Adam update; returns new params and advances ``state`` in place."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    out = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        out.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
    return out, state
