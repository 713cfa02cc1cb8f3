"""Dense layers, the gated attention head, and its FC ablation."""

from __future__ import annotations

import numpy as np

from .core import Module, Param, sigmoid, uniform_init


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((out_dim, in_dim))
        else:
            rng = rng or np.random.default_rng(0)
            w = uniform_init(rng, (out_dim, in_dim), in_dim)
        self.weight = Param(w)
        self.bias = Param(np.zeros(out_dim))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_out = np.atleast_2d(grad_out)
        self.weight.grad += grad_out.T @ self._x
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.value


class AttentionHead(Module):
    """Gated feature re-weighting: out = o * tanh(i * g).

    i and o are sigmoid gates, g is a tanh candidate, all affine in the
    input; products are element-wise.
    """

    def __init__(self, dim: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.gate_i = Linear(dim, dim, rng)
        self.cand_g = Linear(dim, dim, rng)
        self.gate_o = Linear(dim, dim, rng)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        i = sigmoid(self.gate_i(x))
        g = np.tanh(self.cand_g(x))
        o = sigmoid(self.gate_o(x))
        th = np.tanh(i * g)
        self._cache = (i, g, o, th)
        return o * th

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        i, g, o, th = self._cache
        grad_out = np.atleast_2d(grad_out)
        d_o = grad_out * th
        d_ig = grad_out * o * (1.0 - th * th)
        d_i = d_ig * g
        d_g = d_ig * i
        gx = self.gate_o.backward(d_o * o * (1.0 - o))
        gx += self.cand_g.backward(d_g * (1.0 - g * g))
        gx += self.gate_i.backward(d_i * i * (1.0 - i))
        return gx


class FcActivationHead(Module):
    """Ablation head: out = tanh(W2 tanh(W1 x + b1) + b2)."""

    def __init__(self, dim: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.fc1 = Linear(dim, dim, rng)
        self.fc2 = Linear(dim, dim, rng)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.tanh(self.fc1(x))
        y = np.tanh(self.fc2(h))
        self._cache = (h, y)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        h, y = self._cache
        gh = self.fc2.backward(np.atleast_2d(grad_out) * (1.0 - y * y))
        return self.fc1.backward(gh * (1.0 - h * h))


class LSTM(Module):
    """Single-layer LSTM over (B, S, F) sequences; gate order i, f, g, o."""

    def __init__(self, input_size: int, hidden_size: int,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        h = hidden_size
        self.w_ih = Param(uniform_init(rng, (4 * h, input_size), input_size))
        self.w_hh = Param(uniform_init(rng, (4 * h, h), h))
        self.bias = Param(np.zeros(4 * h))
        self.hidden_size = h
        self._cache = None

    def forward(self, x: np.ndarray, h0: np.ndarray | None = None,
                c0: np.ndarray | None = None):
        """Returns (hidden sequence (B, S, H), final hidden (B, H))."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None]
        B, S, _ = x.shape
        H = self.hidden_size
        h = np.zeros((B, H)) if h0 is None else np.array(h0, dtype=float)
        c = np.zeros((B, H)) if c0 is None else np.array(c0, dtype=float)
        steps = []
        hs = np.empty((B, S, H))
        for s in range(S):
            z = x[:, s] @ self.w_ih.value.T + h @ self.w_hh.value.T + self.bias.value
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, s] = h
            steps.append((x[:, s], i, f, g, o, c_prev, tc, None))
        # each step also needs the previous hidden state for w_hh grads
        h_prevs = np.concatenate([np.zeros((B, 1, H)) if h0 is None else np.array(h0)[:, None],
                                  hs[:, :-1]], axis=1)
        self._cache = (steps, h_prevs)
        return hs, h

    def backward(self, grad_hs: np.ndarray | None = None,
                 grad_h_final: np.ndarray | None = None) -> np.ndarray:
        """Backprop through time; returns gradient w.r.t. the input sequence."""
        steps, h_prevs = self._cache
        B = steps[0][0].shape[0]
        S = len(steps)
        H = self.hidden_size
        if grad_hs is None:
            grad_hs = np.zeros((B, S, H))
        grad_hs = np.array(grad_hs, dtype=float)
        if grad_hs.ndim == 2:
            grad_hs = grad_hs[None]
        if grad_h_final is not None:
            grad_hs = grad_hs.copy()
            grad_hs[:, -1] += np.atleast_2d(grad_h_final)
        gx = np.zeros((B, S, self.w_ih.value.shape[1]))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for s in reversed(range(S)):
            xt, i, f, g, o, c_prev, tc, _ = steps[s]
            dh = grad_hs[:, s] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate(
                [di * i * (1.0 - i), df * f * (1.0 - f),
                 dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1)
            self.w_ih.grad += dz.T @ xt
            self.w_hh.grad += dz.T @ h_prevs[:, s]
            self.bias.grad += dz.sum(axis=0)
            gx[:, s] = dz @ self.w_ih.value
            dh_next = dz @ self.w_hh.value
            dc_next = dc * f
        return gx
