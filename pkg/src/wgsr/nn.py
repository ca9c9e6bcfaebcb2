"""Dense-then-convolutional plateau predictor with explicit forward/backward passes.

Data layout: images are ``(batch, n_x, n_y, channels)``; conv kernels are
``(k, k, c_in, c_out)`` and use zero "same" padding. Parameters live in an
insertion-ordered dict, which is also the checkpoint order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "PROB_CLAMP",
    "AdamState",
    "DivergenceError",
    "NetworkConfig",
    "adam_step",
    "backward",
    "conv2d_same",
    "forward",
    "init_params",
    "param_shapes",
]

PROB_CLAMP = 1e-7


class DivergenceError(FloatingPointError):
    """Non-finite activations or losses."""


@dataclass(frozen=True)
class NetworkConfig:
    input_dims: tuple
    output_dims: tuple
    n_channels: int = 8
    n_conv_layers: int = 3
    kernel_size: int = 3
    input_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        object.__setattr__(self, "output_dims", tuple(int(v) for v in self.output_dims))
        if len(self.input_dims) != 2 or len(self.output_dims) != 2:
            raise ValueError("input_dims and output_dims are (rows, cols) pairs")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.n_conv_layers < 1 or self.n_channels < 1:
            raise ValueError("need at least one conv layer and one channel")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be positive")

    @property
    def n_inputs(self) -> int:
        return 2 * self.input_dims[0] * self.input_dims[1]

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: NetworkConfig) -> dict:
    nx, ny = cfg.output_dims
    c, k = cfg.n_channels, cfg.kernel_size
    shapes = {"dense_w": (cfg.n_inputs, nx * ny * c), "dense_b": (nx * ny * c,)}
    for i in range(cfg.n_conv_layers):
        shapes[f"conv{i}_w"] = (k, k, c, c)
        shapes[f"conv{i}_b"] = (c,)
    shapes["out_w"] = (k, k, c, 1)
    shapes["out_b"] = (1,)
    return shapes


def init_params(cfg: NetworkConfig, seed=0) -> dict:
    """Weights ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[0] if len(shape) == 2 else shape[0] * shape[1] * shape[2]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, shape)
    return params


def _patches(x: np.ndarray, k: int) -> np.ndarray:
    """``(B, nx, ny, C)`` -> ``(B * nx * ny, k * k * C)`` zero-padded windows."""
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (B, nx, ny, C, k, k)
    win = win.transpose(0, 1, 2, 4, 5, 3)
    return win.reshape(-1, k * k * x.shape[-1])


def conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Cross-correlation with zero padding; output has the input's spatial size."""
    k, _, _, c_out = w.shape
    out = _patches(x, k) @ w.reshape(-1, c_out)
    out = out.reshape(x.shape[:3] + (c_out,))
    return out if b is None else out + b


def _conv_backward(x, w, grad_out):
    k, _, c_in, c_out = w.shape
    gw = _patches(x, k).T @ grad_out.reshape(-1, c_out)
    gb = grad_out.sum(axis=(0, 1, 2))
    gx = conv2d_same(grad_out, w[::-1, ::-1].transpose(0, 1, 3, 2))
    return gx, gw.reshape(w.shape), gb


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _flatten_input(d: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    d = np.asarray(d)
    if d.shape[-2:] != cfg.input_dims or d.ndim not in (2, 3):
        raise ValueError(f"input shape {d.shape} does not match configured {cfg.input_dims}")
    d = d.reshape((-1,) + cfg.input_dims)
    flat = np.concatenate([d.real.reshape(len(d), -1), d.imag.reshape(len(d), -1)], axis=1)
    return flat / cfg.input_scale


def forward(params: dict, d, cfg: NetworkConfig):
    """Probability image(s) for response tensor(s) ``d``.

    ``d`` is ``(N_r, N_f)`` or a batch ``(B, N_r, N_f)``; the output matches,
    ``(n_x, n_y)`` or ``(B, n_x, n_y)``. The second return value is the cache
    consumed by :func:`backward`.
    """
    single = np.ndim(d) == 2
    x = _flatten_input(d, cfg)
    nx, ny = cfg.output_dims
    a = x @ params["dense_w"] + params["dense_b"]
    h = np.maximum(a, 0.0).reshape(len(x), nx, ny, cfg.n_channels)
    hidden = [h]
    pre = [a]
    for i in range(cfg.n_conv_layers):
        a = conv2d_same(h, params[f"conv{i}_w"], params[f"conv{i}_b"])
        h = np.maximum(a, 0.0)
        pre.append(a)
        hidden.append(h)
    z = conv2d_same(h, params["out_w"], params["out_b"])[..., 0]
    if not np.all(np.isfinite(z)):
        raise DivergenceError("non-finite network output")
    s = _sigmoid(z)
    prob = np.clip(s, PROB_CLAMP, 1.0 - PROB_CLAMP)
    cache = {"x": x, "pre": pre, "hidden": hidden, "sigmoid": s, "single": single}
    return (prob[0] if single else prob), cache


def backward(params: dict, cache: dict, grad_output, cfg: NetworkConfig) -> dict:
    """Parameter gradients of ``sum(grad_output * forward(params, d))``."""
    g = np.asarray(grad_output, dtype=float)
    s = cache["sigmoid"]
    if cache["single"]:
        g = g[None]
    if g.shape != s.shape:
        raise ValueError(f"grad_output shape {g.shape} does not match the forward output {s.shape}")
    grads = {}
    clamped = (s < PROB_CLAMP) | (s > 1.0 - PROB_CLAMP)
    gz = np.where(clamped, 0.0, g * s * (1.0 - s))[..., None]
    gh, grads["out_w"], grads["out_b"] = _conv_backward(cache["hidden"][-1], params["out_w"], gz)
    for i in reversed(range(cfg.n_conv_layers)):
        ga = gh * (cache["pre"][i + 1] > 0)
        gh, grads[f"conv{i}_w"], grads[f"conv{i}_b"] = _conv_backward(
            cache["hidden"][i], params[f"conv{i}_w"], ga)
    ga = gh.reshape(len(gh), -1) * (cache["pre"][0] > 0)
    grads["dense_w"] = cache["x"].T @ ga
    grads["dense_b"] = ga.sum(axis=0)
    return {name: grads[name] for name in params}


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, inplace: bool = False) -> tuple:
    """One bias-corrected ADAM update; returns ``(params, state)``.

    By default the inputs are left untouched. ``inplace=True`` overwrites the
    parameter, moment and gradient arrays instead (the same update up to
    rounding, without large temporaries); the training loop uses this.
    """
    if params.keys() != grads.keys():
        raise ValueError("params and grads have different keys")
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    if inplace:
        for name, p in params.items():
            g = grads[name]
            m = state.m.setdefault(name, np.zeros_like(p))
            v = state.v.setdefault(name, np.zeros_like(p))
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            np.multiply(g, g, out=g)
            g *= 1 - state.beta2
            v += g
            # g is scratch from here on
            np.divide(v, c2, out=g)
            np.sqrt(g, out=g)
            g += state.eps
            np.divide(m, g, out=g)
            g *= state.lr / c1
            p -= g
        state.step = t
        return params, state
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.beta1 * state.m.get(name, 0.0) + (1 - state.beta1) * g
        v = state.beta2 * state.v.get(name, 0.0) + (1 - state.beta2) * g * g
        m_new[name], v_new[name] = m, v
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new_params, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m_new, v_new)
