"""Minimal dense network with hand-written backprop, plus Adam.

The architectures here are tiny (two tanh hidden layers of 32 units, a
sigmoid or identity head; ~1.7k parameters), so the closed-form backward
pass is simpler and more testable than a general autodiff, and everything
stays in float64.  Non-finite parameters or gradients are hard errors: the
training loop relies on failing loudly instead of silently producing NaNs.
"""

from __future__ import annotations

import numpy as np

from .policies import stable_sigmoid


class NonFiniteError(RuntimeError):
    """A parameter, gradient, or loss stopped being finite."""


class Mlp:
    """Fully-connected network: affine + tanh per hidden layer, then an
    affine head with sigmoid (policy) or identity (value) activation.

    weights[l] has shape (fan_in, fan_out); biases[l] has shape (fan_out,).
    """

    def __init__(self, weights, biases, hidden_act="tanh", out_act="sigmoid"):
        if hidden_act != "tanh":
            raise ValueError(f"unsupported hidden activation {hidden_act!r}")
        if out_act not in ("sigmoid", "identity"):
            raise ValueError(f"unsupported output activation {out_act!r}")
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be non-empty and parallel")
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {l}: weight {w.shape} vs bias {b.shape}")
            if l > 0 and weights[l - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {l}: dimension mismatch with layer {l-1}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.hidden_act = hidden_act
        self.out_act = out_act

    # -- construction ------------------------------------------------------

    @classmethod
    def init(cls, dims, seed, scale=1.0, out_act="sigmoid"):
        """Fresh network with weights uniform in +-scale/sqrt(fan_in) and
        zero biases; deterministic per seed."""
        dims = list(dims)
        if len(dims) < 2 or any(int(d) < 1 for d in dims):
            raise ValueError(f"invalid layer dims {dims}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = scale / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, out_act=out_act)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...]; the arrays themselves (mutable)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def assert_finite(self) -> None:
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise NonFiniteError("network parameters contain NaN/Inf")

    # -- forward / backward ------------------------------------------------

    def forward_batch(self, X):
        """Forward pass over a batch.  Returns (output (B, out_dim), cache);
        the cache holds per-layer activations for ``backward_batch``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights[0].shape[0]:
            raise ValueError(f"input dim {X.shape[1]} != {self.weights[0].shape[0]}")
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if l < last:
                h = np.tanh(z)
            elif self.out_act == "sigmoid":
                h = stable_sigmoid(z)
            else:
                h = z
            acts.append(h)
        return h, acts

    def forward(self, x):
        """Single-sample forward: x (in_dim,) -> (out (out_dim,), cache)."""
        out, acts = self.forward_batch(np.asarray(x, dtype=np.float64)[None, :])
        return out[0], acts

    def backward_batch(self, cache, grad, wrt="output"):
        """Exact parameter gradients for a loss with the given gradient at
        the head.

        wrt="output": ``grad`` is dL/d(output), the output activation is
        differentiated here.  wrt="preact": ``grad`` is already dL/dz of the
        final affine layer (the natural form for Bernoulli log-likelihoods,
        where dlogp/dz = a - p).  Returns ([dW...], [db...], dX).
        """
        acts = cache
        out = acts[-1]
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != out.shape:
            raise ValueError(f"grad shape {grad.shape} != output shape {out.shape}")
        if wrt == "output":
            if self.out_act == "sigmoid":
                dz = grad * out * (1.0 - out)
            else:
                dz = grad
        elif wrt == "preact":
            dz = grad
        else:
            raise ValueError(f"unknown wrt {wrt!r}")
        dWs = [None] * len(self.weights)
        dbs = [None] * len(self.biases)
        for l in range(len(self.weights) - 1, -1, -1):
            h_in = acts[l]
            dWs[l] = h_in.T @ dz
            dbs[l] = dz.sum(axis=0)
            dh = dz @ self.weights[l].T
            if l > 0:
                dz = dh * (1.0 - acts[l] * acts[l])  # tanh'
        return dWs, dbs, dh

    def gradients_flat(self, dWs, dbs) -> list[np.ndarray]:
        """Interleave to match ``parameters()`` order."""
        out = []
        for dw, db in zip(dWs, dbs):
            out.append(dw)
            out.append(db)
        return out

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        d = self.dims
        return {
            "input": d[0],
            "hidden": d[1:-1],
            "output": d[-1],
            "hidden_act": self.hidden_act,
            "out_act": self.out_act,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, arch: dict, weights, biases) -> "Mlp":
        net = cls(
            [np.asarray(w, dtype=np.float64) for w in weights],
            [np.asarray(b, dtype=np.float64) for b in biases],
            hidden_act=arch.get("hidden_act", "tanh"),
            out_act=arch.get("out_act", "sigmoid"),
        )
        expect = [arch["input"]] + list(arch["hidden"]) + [arch["output"]]
        if net.dims != expect:
            raise ValueError(f"checkpoint dims {net.dims} != declared {expect}")
        return net


class Adam:
    """Adam with bias correction; epsilon sits outside the square root, so
    the first step moves by -lr * g / (|g| + eps) elementwise."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def update(self, params, grads, lr, maximize=False):
        """One Adam step in place.  Non-finite gradients are a hard error
        (the caller persists a checkpoint before dying)."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient count mismatch with optimizer state")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient in Adam update")
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        sign = 1.0 if maximize else -1.0
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / b1c
            vhat = v / b2c
            p += sign * lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
            "step": self.step_count,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_state_dict(cls, state: dict, params) -> "Adam":
        opt = cls(params, beta1=state["beta1"], beta2=state["beta2"], eps=state["eps"])
        opt.m = [np.asarray(a, dtype=np.float64) for a in state["m"]]
        opt.v = [np.asarray(a, dtype=np.float64) for a in state["v"]]
        opt.step_count = int(state["step"])
        for p, m in zip(params, opt.m):
            if p.shape != m.shape:
                raise ValueError("optimizer state shape mismatch")
        return opt
