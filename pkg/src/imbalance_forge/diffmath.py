"""Minimal reverse-mode autodiff over dense float64 arrays.

Just enough machinery for the per-pixel classifier and the loss gradient
checks: affine maps, tanh, softmax, reductions, recorded on an explicit
tape. No broadcasting beyond the bias add, so shape mistakes fail loudly.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class Tensor:
    """A float64 array plus a slot for its accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape


class Tape:
    """Records primitive ops; backward replays them in reverse order."""

    def __init__(self):
        self._ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def _record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> Tensor:
        self._ops.append((out, backward))
        return out

    @staticmethod
    def _accumulate(t: Tensor, g: np.ndarray) -> None:
        if t.grad is None:
            t.grad = g.copy()
        else:
            t.grad += g

    def backward(self, out: Tensor, seed_grad: np.ndarray | float = 1.0) -> None:
        """Propagate `seed_grad` at `out` back to every recorded input."""
        seed = np.broadcast_to(np.asarray(seed_grad, dtype=np.float64), out.data.shape)
        self._accumulate(out, np.array(seed))
        for node, backward in reversed(self._ops):
            if node.grad is not None:
                backward(node.grad)

    # ---- primitives -------------------------------------------------

    def linear(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
            raise ValueError("linear expects x[N,F], w[F,C], b[C]")
        if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
            raise ValueError(
                f"shape mismatch: x{x.data.shape} w{w.data.shape} b{b.data.shape}"
            )
        out = Tensor(x.data @ w.data + b.data)

        def backward(g):
            self._accumulate(x, g @ w.data.T)
            self._accumulate(w, x.data.T @ g)
            self._accumulate(b, g.sum(axis=0))

        return self._record(out, backward)

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.data)
        out = Tensor(y)

        def backward(g):
            self._accumulate(x, g * (1.0 - y * y))

        return self._record(out, backward)

    def relu(self, x: Tensor) -> Tensor:
        y = np.maximum(x.data, 0.0)
        out = Tensor(y)

        def backward(g):
            self._accumulate(x, g * (x.data > 0.0))

        return self._record(out, backward)

    def softmax(self, x: Tensor) -> Tensor:
        """Softmax along the last axis, max-subtracted for stability."""
        z = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        out = Tensor(p)

        def backward(g):
            # J^T g = p * (g - <g, p>)
            dot = (g * p).sum(axis=-1, keepdims=True)
            self._accumulate(x, p * (g - dot))

        return self._record(out, backward)

    def sum(self, x: Tensor) -> Tensor:
        out = Tensor(x.data.sum())

        def backward(g):
            self._accumulate(x, np.full(x.data.shape, float(g)))

        return self._record(out, backward)

    def mean(self, x: Tensor) -> Tensor:
        n = x.data.size
        out = Tensor(x.data.mean())

        def backward(g):
            self._accumulate(x, np.full(x.data.shape, float(g) / n))

        return self._record(out, backward)

    def mul(self, x: Tensor, y: Tensor) -> Tensor:
        if x.data.shape != y.data.shape:
            raise ValueError(f"shape mismatch: {x.data.shape} vs {y.data.shape}")
        out = Tensor(x.data * y.data)

        def backward(g):
            self._accumulate(x, g * y.data)
            self._accumulate(y, g * x.data)

        return self._record(out, backward)


def grad_check(f, x: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between f's analytic gradient and central differences.

    `f` maps an array to `(value, grad)`; only the value part is used for
    the numeric side, so the two estimates stay independent.
    """
    x = np.asarray(x, dtype=np.float64)
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError("analytic gradient shape does not match input")
    max_err = 0.0
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp, _ = f(x)
        flat[i] = orig - eps
        fm, _ = f(x)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * eps)
        a = analytic.ravel()[i]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        max_err = max(max_err, err)
    return max_err
