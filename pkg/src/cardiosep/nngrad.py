"""Minimal dense-network core: tape-based reverse-mode gradients and Adam.

Desk-scale by design: double precision, MLP chains only, every op checks
its output for non-finite values.  One seedable generator is owned by the
training driver; this module only consumes draws handed to it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM_LR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite values in {what}")


class Var:
    """A value in the computation graph with an accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


class Tape:
    """Records backward closures; replays them in exact reverse order."""

    def __init__(self):
        self._ops = []
        self._spent = False

    def record(self, backward_fn):
        self._ops.append(backward_fn)

    def backward(self, loss: Var):
        if self._spent:
            raise RuntimeError("backward() called twice without a new forward pass")
        if loss.value.size != 1:
            raise ValueError("loss must be scalar")
        loss.grad = np.ones_like(loss.value)
        for fn in reversed(self._ops):
            fn()
        self._spent = True


def _out_grad(out):
    # unreached outputs contribute no gradient
    return out.grad


def affine(tape: Tape, x: Var, weight: Var, bias: Var) -> Var:
    """x @ W + b with x of shape (batch, in)."""
    if x.value.ndim != 2 or weight.value.ndim != 2 \
            or x.value.shape[1] != weight.value.shape[0] \
            or bias.value.shape != (weight.value.shape[1],):
        raise ValueError(
            f"affine shape mismatch: x {x.value.shape}, W {weight.value.shape}, "
            f"b {bias.value.shape}")
    out = Var(x.value @ weight.value + bias.value)
    _check_finite(out.value, "affine output")

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        x.accumulate(g @ weight.value.T)
        weight.accumulate(x.value.T @ g)
        bias.accumulate(g.sum(axis=0))

    tape.record(backward)
    return out


def activation(tape: Tape, x: Var, kind: str) -> Var:
    """relu / tanh / identity; relu gradient at 0 is 0."""
    if kind == "relu":
        out = Var(np.maximum(x.value, 0.0))
        local = (x.value > 0).astype(np.float64)
    elif kind == "tanh":
        out = Var(np.tanh(x.value))
        local = 1.0 - out.value ** 2
    elif kind == "identity":
        out = Var(x.value.copy())
        local = None
    else:
        raise ValueError(f"unknown activation {kind!r}")
    _check_finite(out.value, f"{kind} output")

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        x.accumulate(g if local is None else g * local)

    tape.record(backward)
    return out


def slice_cols(tape: Tape, x: Var, start: int, stop: int) -> Var:
    out = Var(x.value[:, start:stop].copy())

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        x.accumulate(full)

    tape.record(backward)
    return out


def clamp(tape: Tape, x: Var, lo: float, hi: float) -> Var:
    out = Var(np.clip(x.value, lo, hi))
    inside = (x.value >= lo) & (x.value <= hi)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        x.accumulate(g * inside)

    tape.record(backward)
    return out


def reparam_sample(tape: Tape, mu: Var, logvar: Var, eps: np.ndarray) -> Var:
    """z = mu + exp(logvar/2) * eps with fixed noise eps."""
    if eps.shape != mu.value.shape:
        raise ValueError(f"eps shape {eps.shape} != mu shape {mu.value.shape}")
    std = np.exp(0.5 * logvar.value)
    out = Var(mu.value + std * eps)
    _check_finite(out.value, "reparameterized sample")

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        mu.accumulate(g)
        logvar.accumulate(g * 0.5 * std * eps)

    tape.record(backward)
    return out


def gaussian_kl(tape: Tape, mu: Var, logvar: Var) -> Var:
    """Batch-mean KL(N(mu, exp(logvar)) || N(0, I)), closed form."""
    batch = mu.value.shape[0]
    var = np.exp(logvar.value)
    out = Var(0.5 * np.sum(mu.value ** 2 + var - 1.0 - logvar.value) / batch)
    _check_finite(out.value, "KL term")

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        mu.accumulate(g * mu.value / batch)
        logvar.accumulate(g * 0.5 * (var - 1.0) / batch)

    tape.record(backward)
    return out


def half_sse(tape: Tape, pred: Var, target: np.ndarray, scale: float = 1.0) -> Var:
    """scale * 0.5 * sum((pred - target)^2), a scalar."""
    diff = pred.value - target
    out = Var(scale * 0.5 * np.sum(diff ** 2))
    _check_finite(out.value, "reconstruction term")

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        pred.accumulate(g * scale * diff)

    tape.record(backward)
    return out


def add_weighted(tape: Tape, a: Var, b: Var, weight: float) -> Var:
    """a + weight * b for scalar terms."""
    out = Var(a.value + weight * b.value)
    _check_finite(out.value, "weighted sum")

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        a.accumulate(g)
        b.accumulate(weight * g)

    tape.record(backward)
    return out


def reduce_sum(tape: Tape, x: Var) -> Var:
    out = Var(np.sum(x.value))

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        x.accumulate(np.full_like(x.value, float(g)))

    tape.record(backward)
    return out


class ParamSet:
    """Named parameters plus their Adam moment buffers."""

    def __init__(self, name: str = ""):
        self.name = name
        self._params: dict[str, Var] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Var:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        var = Var(value)
        self._params[name] = var
        self._m[name] = np.zeros_like(var.value)
        self._v[name] = np.zeros_like(var.value)
        return var

    def __getitem__(self, name: str) -> Var:
        return self._params[name]

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for var in self._params.values():
            var.grad = None

    def n_params(self):
        return sum(v.value.size for v in self._params.values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.value.ravel() for v in self._params.values()])

    def set_flat(self, theta: np.ndarray):
        offset = 0
        for var in self._params.values():
            size = var.value.size
            var.value[...] = theta[offset:offset + size].reshape(var.value.shape)
            offset += size

    def grad_flat(self) -> np.ndarray:
        parts = []
        for var in self._params.values():
            g = var.grad if var.grad is not None else np.zeros_like(var.value)
            parts.append(g.ravel())
        return np.concatenate(parts)


def adam_step(params: ParamSet, lr: float = ADAM_LR, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPS, t: int = 1):
    """Bias-corrected adaptive-moment update, in place."""
    if t < 1:
        raise ValueError(f"step index t must be >= 1, got {t}")
    for name, var in params.items():
        g = var.grad
        if g is None:
            g = np.zeros_like(var.value)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g ** 2
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        var.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        _check_finite(var.value, f"parameter {name!r} after Adam step")


class MLP:
    """Dense chain with a shared hidden activation and an output activation."""

    def __init__(self, sizes, hidden_activation="tanh", output_activation="identity",
                 rng=None, name="mlp"):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = list(sizes)
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.params = ParamSet(name)
        self._layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if rng is None:
                w0 = np.zeros((fan_in, fan_out))
            else:
                w0 = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out))
            w = self.params.add(f"{name}.w{i}", w0)
            b = self.params.add(f"{name}.b{i}", np.zeros(fan_out))
            self._layers.append((w, b))

    def forward(self, tape: Tape, x: Var) -> Var:
        h = x
        last = len(self._layers) - 1
        for i, (w, b) in enumerate(self._layers):
            h = affine(tape, h, w, b)
            kind = self.output_activation if i == last else self.hidden_activation
            h = activation(tape, h, kind)
        return h


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    tolerance: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance


def grad_check(forward_fn, params: ParamSet, h: float = 1e-4,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``forward_fn(tape)`` must rebuild the forward pass (deterministically)
    and return the scalar loss Var.
    """
    params.zero_grad()
    tape = Tape()
    loss = forward_fn(tape)
    tape.backward(loss)
    analytic = params.grad_flat()

    theta = params.flatten()
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        params.set_flat(theta)
        f_plus = float(forward_fn(Tape()).value)
        theta[i] = orig - h
        params.set_flat(theta)
        f_minus = float(forward_fn(Tape()).value)
        theta[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * h)
    params.set_flat(theta)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    per_param = {}
    offset = 0
    worst_name, worst = "", -1.0
    for name, var in params.items():
        size = var.value.size
        err = float(rel[offset:offset + size].max())
        per_param[name] = err
        if err > worst:
            worst, worst_name = err, name
        offset += size
    return GradCheckReport(float(rel.max()), worst_name, tolerance, per_param)
