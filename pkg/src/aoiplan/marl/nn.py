"""Dense feed-forward networks with hand-written reverse-mode gradients.

A network may be *stacked*: weights then carry leading axes (for example
one slice per agent) and inputs are shaped ``(*stack, batch, features)``.
The same matmul code serves both cases, so twenty independent actors can
be evaluated in a single call.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "linear", "tanh", "sigmoid")


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "linear":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(kind, z, y):
    """Derivative of the activation given pre-activation z and output y."""
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "linear":
        return None
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "sigmoid":
        return y * (1.0 - y)
    raise ValueError(f"unknown activation {kind!r}")


class DenseNetwork:
    """Stack of affine layers, each followed by an elementwise activation.

    ``sizes`` lists layer widths from input to output; ``activations`` has
    one entry per affine layer (defaults: ReLU hidden, linear output).
    """

    def __init__(self, sizes, activations=None, stack=(), rng=None, dtype=np.float32,
                 final_scale=3e-3, weights=None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        n_layers = len(self.sizes) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["linear"]
        if len(activations) != n_layers:
            raise ValueError("one activation per layer required")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.activations = list(activations)
        self.stack = tuple(int(s) for s in (stack if isinstance(stack, (tuple, list)) else (stack,)))
        self.dtype = np.dtype(dtype)
        if weights is not None:
            self.set_params(weights)
        else:
            rng = rng if rng is not None else np.random.default_rng()
            self.W, self.b = [], []
            for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
                if i == n_layers - 1 and final_scale is not None:
                    lim = final_scale
                else:
                    lim = np.sqrt(6.0 / fan_in) if self.activations[i] == "relu" else np.sqrt(3.0 / fan_in)
                self.W.append(rng.uniform(-lim, lim, self.stack + (fan_in, fan_out)).astype(self.dtype))
                self.b.append(np.zeros(self.stack + (1, fan_out), dtype=self.dtype))
        self._cache = None

    # -- parameters -------------------------------------------------------

    def params(self):
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def set_params(self, arrays):
        arrays = list(arrays)
        if len(arrays) != 2 * (len(self.sizes) - 1):
            raise ValueError("parameter count mismatch")
        W, b = [], []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            w_i = np.asarray(arrays[2 * i], dtype=self.dtype)
            b_i = np.asarray(arrays[2 * i + 1], dtype=self.dtype)
            if w_i.shape != self.stack + (fan_in, fan_out) or b_i.shape != self.stack + (1, fan_out):
                raise ValueError(f"layer {i}: shape mismatch {w_i.shape}, {b_i.shape}")
            W.append(w_i.copy())
            b.append(b_i.copy())
        self.W, self.b = W, b

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(self.sizes, self.activations, self.stack, dtype=self.dtype,
                            weights=self.params())

    @property
    def num_params(self) -> int:
        return int(sum(p.size for p in self.params()))

    # -- evaluation -------------------------------------------------------

    def forward(self, x, record=True):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected {self.sizes[0]} input features, got {x.shape[-1]}")
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        inputs, pre, outs = [], [], []
        h = x
        for W, b, kind in zip(self.W, self.b, self.activations):
            inputs.append(h)
            z = h @ W + b
            h = _act(kind, z)
            pre.append(z)
            outs.append(h)
        if record:
            self._cache = (inputs, pre, outs, squeeze)
        return h[0] if squeeze else h

    __call__ = forward

    def backward(self, grad_out, param_grads=True):
        """Back-propagate d(loss)/d(output) through the last recorded forward pass.

        Returns ``(grads, grad_input)`` with ``grads`` ordered like
        :meth:`params` (``None`` when ``param_grads`` is false).
        """
        if self._cache is None:
            raise RuntimeError("backward() called before forward()")
        inputs, pre, outs, squeeze = self._cache
        g = np.asarray(grad_out, dtype=self.dtype)
        if squeeze:
            g = g[None, :]
        n = len(self.W)
        grads = [None] * (2 * n)
        for i in reversed(range(n)):
            d = _act_grad(self.activations[i], pre[i], outs[i])
            if d is not None:
                g = g * d
            if param_grads:
                grads[2 * i] = np.swapaxes(inputs[i], -1, -2) @ g
                grads[2 * i + 1] = g.sum(axis=-2, keepdims=True)
                # broadcasting an unstacked net over a leading batch axis
                extra = grads[2 * i].ndim - self.W[i].ndim
                if extra > 0:
                    axes = tuple(range(extra))
                    grads[2 * i] = grads[2 * i].sum(axis=axes)
                    grads[2 * i + 1] = grads[2 * i + 1].sum(axis=axes)
            g = g @ np.swapaxes(self.W[i], -1, -2)
        grad_in = g[0] if squeeze else g
        return (grads if param_grads else None), grad_in

    gradient = backward


def soft_update(main_params, target_params, tau):
    """In-place convex blend target <- tau * main + (1 - tau) * target."""
    if len(main_params) != len(target_params):
        raise ValueError("parameter lists differ in length")
    for m, t in zip(main_params, target_params):
        if m.shape != t.shape:
            raise ValueError(f"shape mismatch {m.shape} vs {t.shape}")
        t *= (1.0 - tau)
        t += tau * m
    return target_params


class Adam:
    """Adaptive-moment optimizer updating parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= lr_t * m / (np.sqrt(v) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}


class SGD:
    """Plain gradient descent fallback with the same interface as :class:`Adam`."""

    def __init__(self, params, lr=1e-3):
        self.params = params
        self.lr = lr
        self.t = 0

    def step(self, grads):
        self.t += 1
        for p, g in zip(self.params, grads):
            p -= self.lr * g


def make_optimizer(kind, params, lr):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")
