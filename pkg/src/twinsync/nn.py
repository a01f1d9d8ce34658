"""Small dense networks in numpy: forward, backprop, Adam, Polyak averaging.

Parameters of a :class:`DenseNet` live in one flat float64 buffer; per-layer
weights and biases are views into it, so optimizers and target averaging act
on a single array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray | None:
    """Derivative of the activation evaluated at pre-activation z (output y); None means 1."""
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - y * y
    if name == "sigmoid":
        return y * (1.0 - y)
    return None


class DenseNet:
    """Stack of affine layers ``y = act(x @ W + b)``.

    ``activations`` holds one entry per layer. An entry may also be a tuple
    with one activation per output unit (used for the actor's mixed
    tanh/sigmoid head).
    """

    def __init__(self, dims, activations, params=None, _share=False):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or len(activations) != len(dims) - 1:
            raise ValueError("need len(activations) == len(dims) - 1")
        acts = []
        for d_out, a in zip(dims[1:], activations):
            if isinstance(a, (list, tuple)):
                a = tuple(a)
                if len(a) != d_out or any(x not in ACTIVATIONS for x in a):
                    raise ValueError(f"bad per-unit activations {a}")
            elif a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
            acts.append(a)
        self.dims = dims
        self.activations = acts
        size = sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))
        if params is None:
            self.params = np.zeros(size)
        else:
            params = np.asarray(params, dtype=float)
            if params.shape != (size,):
                raise ValueError(f"expected {size} parameters, got {params.shape}")
            self.params = params if _share else params.copy()
        self._bind()

    def _bind(self) -> None:
        self.weights, self.biases = [], []
        off = 0
        for i, o in zip(self.dims[:-1], self.dims[1:]):
            self.weights.append(self.params[off:off + i * o].reshape(i, o))
            off += i * o
            self.biases.append(self.params[off:off + o])
            off += o

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    @property
    def n_params(self) -> int:
        return self.params.size

    @classmethod
    def init(cls, dims, activations, rng: np.random.Generator) -> "DenseNet":
        """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        net = cls(dims, activations)
        for w, b in zip(net.weights, net.biases):
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, w.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)
        return net

    def copy(self) -> "DenseNet":
        return DenseNet(self.dims, self.activations, self.params)

    def same_architecture(self, other: "DenseNet") -> bool:
        return self.dims == other.dims and self.activations == other.activations

    def _apply(self, k: int, z: np.ndarray) -> np.ndarray:
        a = self.activations[k]
        if isinstance(a, tuple):
            out = np.empty_like(z)
            for j, name in enumerate(a):
                out[..., j] = _act(name, z[..., j])
            return out
        return _act(a, z)

    def _grad(self, k: int, z: np.ndarray, y: np.ndarray):
        a = self.activations[k]
        if isinstance(a, tuple):
            g = np.ones_like(z)
            for j, name in enumerate(a):
                gj = _act_grad(name, z[..., j], y[..., j])
                if gj is not None:
                    g[..., j] = gj
            return g
        return _act_grad(a, z, y)

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input width {x.shape[-1]} != in_dim {self.in_dim}")
        return x

    def forward(self, x) -> np.ndarray:
        h = self._check_input(x)
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = self._apply(k, h @ w + b)
        return h

    __call__ = forward

    def forward_cached(self, x):
        h = self._check_input(x)
        cache = [h]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = self._apply(k, z)
            cache.append((z, h))
        return h, cache

    def backward_cached(self, cache, upstream, need_params: bool = True):
        """Backprop ``upstream`` (dL/d output) through a cached forward pass.

        Returns ``(grad_params, grad_input)``; grad_params is a flat array
        aligned with ``self.params`` (or None when ``need_params`` is false).
        """
        g = np.asarray(upstream, dtype=float)
        x = cache[0]
        if g.shape[:-1] != x.shape[:-1] or g.shape[-1] != self.out_dim:
            raise ValueError(f"upstream shape {g.shape} does not match output")
        grads = np.empty_like(self.params) if need_params else None
        gw_views, gb_views = [], []
        if need_params:
            off = 0
            for i, o in zip(self.dims[:-1], self.dims[1:]):
                gw_views.append(grads[off:off + i * o].reshape(i, o))
                off += i * o
                gb_views.append(grads[off:off + o])
                off += o
        for k in range(len(self.weights) - 1, -1, -1):
            z, y = cache[k + 1]
            d = self._grad(k, z, y)
            if d is not None:
                g = g * d
            h_prev = cache[0] if k == 0 else cache[k][1]
            if need_params:
                if g.ndim == 1:
                    np.outer(h_prev, g, out=gw_views[k])
                    gb_views[k][...] = g
                else:
                    np.matmul(h_prev.reshape(-1, h_prev.shape[-1]).T, g.reshape(-1, g.shape[-1]), out=gw_views[k])
                    gb_views[k][...] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.weights[k].T
        return grads, g

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "dims": self.dims,
            "activations": [list(a) if isinstance(a, tuple) else a for a in self.activations],
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNet":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        return cls(d["dims"], d["activations"], d["params"])


class Ensemble:
    """``k`` same-shaped networks evaluated together with batched matmuls.

    Member ``i`` owns the slice ``params[i * P:(i + 1) * P]`` laid out exactly
    like a :class:`DenseNet`, and :meth:`member` returns a DenseNet view on
    it. Per-unit activation tuples are not supported here.
    """

    def __init__(self, k: int, dims, activations, params=None):
        if any(isinstance(a, (list, tuple)) for a in activations):
            raise ValueError("ensembles need one activation per layer")
        proto = DenseNet(dims, activations)
        self.k = int(k)
        self.dims = proto.dims
        self.activations = proto.activations
        self.member_size = proto.n_params
        if params is None:
            self.params = np.zeros(self.k * self.member_size)
        else:
            params = np.asarray(params, dtype=float)
            if params.shape != (self.k * self.member_size,):
                raise ValueError("ensemble parameter count mismatch")
            self.params = params.copy()
        self.weights, self.biases = self._stacked(self.params)
        self.members = [DenseNet(self.dims, self.activations, self.params[i * self.member_size:(i + 1) * self.member_size], _share=True)
                        for i in range(self.k)]

    def _stacked(self, flat: np.ndarray):
        item = flat.itemsize
        ws, bs = [], []
        off = 0
        for i, o in zip(self.dims[:-1], self.dims[1:]):
            ws.append(np.lib.stride_tricks.as_strided(
                flat[off:], (self.k, i, o), (self.member_size * item, o * item, item)))
            off += i * o
            bs.append(np.lib.stride_tricks.as_strided(
                flat[off:], (self.k, 1, o), (self.member_size * item, 0, item)))
            off += o
        return ws, bs

    @classmethod
    def init(cls, k: int, dims, activations, rng: np.random.Generator) -> "Ensemble":
        ens = cls(k, dims, activations)
        for m in ens.members:
            m.params[...] = DenseNet.init(dims, activations, rng).params
        return ens

    def member(self, i: int) -> DenseNet:
        return self.members[i]

    def copy(self) -> "Ensemble":
        return Ensemble(self.k, self.dims, self.activations, self.params)

    def same_architecture(self, other) -> bool:
        return (isinstance(other, Ensemble) and self.k == other.k and self.dims == other.dims
                and self.activations == other.activations)

    def forward_cached(self, x):
        """``x`` of shape (B, in) is shared by all members; output is (k, B, out)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dims[0]:
            raise ValueError(f"input width {x.shape[-1]} != in_dim {self.dims[0]}")
        h = x
        cache = [x]
        for name, w, b in zip(self.activations, self.weights, self.biases):
            z = np.matmul(h, w) + b
            h = _act(name, z)
            cache.append((z, h))
        return h, cache

    def forward(self, x) -> np.ndarray:
        return self.forward_cached(x)[0]

    def backward_cached(self, cache, upstream, need_params: bool = True):
        """Returns (flat grads aligned with ``params`` or None, input grad summed over members)."""
        g = np.asarray(upstream, dtype=float)
        grads = np.empty_like(self.params) if need_params else None
        if need_params:
            gws, gbs = self._stacked(grads)
        for l in range(len(self.weights) - 1, -1, -1):
            z, y = cache[l + 1]
            d = _act_grad(self.activations[l], z, y)
            if d is not None:
                g = g * d
            h_prev = cache[0] if l == 0 else cache[l][1]
            if need_params:
                hT = h_prev.T if h_prev.ndim == 2 else np.swapaxes(h_prev, 1, 2)
                gws[l][...] = np.matmul(hT, g)
                gbs[l][...] = g.sum(axis=1, keepdims=True)
            g = np.matmul(g, np.swapaxes(self.weights[l], 1, 2))
        gx = g.sum(axis=0) if cache[0].ndim == 2 else g
        return grads, gx

    def to_dict(self) -> dict:
        return {"k": self.k, "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        members = [DenseNet.from_dict(m) for m in d["members"]]
        ens = cls(len(members), members[0].dims, members[0].activations)
        for dst, src in zip(ens.members, members):
            dst.params[...] = src.params
        return ens


def forward(net: DenseNet, x) -> np.ndarray:
    return net.forward(x)


def backward(net: DenseNet, x, upstream):
    """Gradients of ``sum(upstream * net(x))`` w.r.t. parameters and input."""
    _, cache = net.forward_cached(x)
    return net.backward_cached(cache, upstream)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, net: DenseNet, grads: np.ndarray) -> None:
        if grads.shape != net.params.shape:
            raise ValueError("gradient shape does not match parameters")
        if not np.all(np.isfinite(grads)):
            raise FloatingPointError("non-finite gradient")
        if self.m is None:
            self.m = np.zeros_like(net.params)
            self.v = np.zeros_like(net.params)
        self.step_count += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        net.params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def opt_step(net: DenseNet, grads: np.ndarray, opt: Adam):
    opt.step(net, grads)
    return net, opt


def polyak(target: DenseNet, online: DenseNet, rho: float) -> DenseNet:
    """In-place ``target <- rho * target + (1 - rho) * online``."""
    if type(target) is not type(online) or not target.same_architecture(online):
        raise ValueError("target and online networks differ in architecture")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    target.params *= rho
    target.params += (1.0 - rho) * online.params
    return target


def gradient_check(net: DenseNet, x, upstream, h: float = 1e-5, n_probe: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Relative error between analytic and central-difference gradients.

    Checks the input gradient and ``n_probe`` randomly chosen parameters
    (all parameters when ``n_probe`` is None). Returns
    ``||a - f|| / max(||a|| + ||f||, 1e-30)``.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    gp, gx = backward(net, x, upstream)

    def loss(p=None, xx=None):
        if p is None:
            return float(np.sum(upstream * net.forward(x if xx is None else xx)))
        saved = net.params.copy()
        net.params[...] = p
        try:
            return float(np.sum(upstream * net.forward(x)))
        finally:
            net.params[...] = saved

    if n_probe is None or n_probe >= net.n_params:
        idx = np.arange(net.n_params)
    else:
        idx = (rng or np.random.default_rng(0)).choice(net.n_params, n_probe, replace=False)
    analytic, numeric = [], []
    base = net.params.copy()
    for i in idx:
        p = base.copy()
        p[i] += h
        up = loss(p)
        p[i] -= 2 * h
        down = loss(p)
        numeric.append((up - down) / (2 * h))
        analytic.append(gp[i])
    flat_x = x.reshape(-1)
    for i in range(flat_x.size):
        xp = flat_x.copy()
        xp[i] += h
        up = loss(xx=xp.reshape(x.shape))
        xp[i] -= 2 * h
        down = loss(xx=xp.reshape(x.shape))
        numeric.append((up - down) / (2 * h))
        analytic.append(gx.reshape(-1)[i])
    a, f = np.array(analytic), np.array(numeric)
    return float(np.linalg.norm(a - f) / max(np.linalg.norm(a) + np.linalg.norm(f), 1e-30))


def save_net(net: DenseNet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(net.to_dict()))


def load_net(path: str | Path) -> DenseNet:
    return DenseNet.from_dict(json.loads(Path(path).read_text()))
