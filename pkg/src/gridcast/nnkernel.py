"""Minimal dense/convolutional network kernel with exact backpropagation.

Everything runs in 64-bit floats on the CPU: the models here are small
enough that precision is cheaper than debugging 32-bit gradient noise.
Layers are plain functions over parameter arrays; composition and
training loops live in the models module.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

DENSE = "dense"
CONV = "conv"
RELU = "relu"
LINEAR = "linear"

_KIND_CODES = {DENSE: 0, CONV: 1}
_ACT_CODES = {LINEAR: 0, RELU: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

CHECKPOINT_MAGIC = b"GCNN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """Shape and activation of one layer.

    Dense layers use fan_in/fan_out; conv layers use ksize/cin/cout with
    same-padding (ksize 1 or 3 only).
    """

    kind: str
    activation: str
    fan_in: int = 0
    fan_out: int = 0
    ksize: int = 0
    cin: int = 0
    cout: int = 0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == DENSE and (self.fan_in <= 0 or self.fan_out <= 0):
            raise ValueError("dense layers need positive fan_in and fan_out")
        if self.kind == CONV:
            if self.ksize not in (1, 3):
                raise ValueError(f"conv kernel must be 1 or 3, got {self.ksize}")
            if self.cin <= 0 or self.cout <= 0:
                raise ValueError("conv layers need positive channel counts")

    def param_shapes(self):
        if self.kind == DENSE:
            return (self.fan_out, self.fan_in), (self.fan_out,)
        return (self.cout, self.cin, self.ksize, self.ksize), (self.cout,)

    def param_count(self) -> int:
        w, b = self.param_shapes()
        return int(np.prod(w) + np.prod(b))


def init_parameters(specs, rng: np.random.Generator):
    """He-uniform weights for ReLU layers, Glorot-uniform for linear ones."""
    params = []
    for spec in specs:
        w_shape, b_shape = spec.param_shapes()
        if spec.kind == DENSE:
            fan_in, fan_out = spec.fan_in, spec.fan_out
        else:
            fan_in = spec.cin * spec.ksize * spec.ksize
            fan_out = spec.cout * spec.ksize * spec.ksize
        if spec.activation == RELU:
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=w_shape)
        b = np.zeros(b_shape)
        params.append((w, b))
    return params


def clone_parameters(params):
    return [(w.copy(), b.copy()) for w, b in params]


def parameter_count(params) -> int:
    return sum(w.size + b.size for w, b in params)


# ---------------------------------------------------------------------------
# layer forward / backward


def dense_forward(w, b, x):
    """Pre-activation y = x W^T + b for x of shape (N, fan_in)."""
    return x @ w.T + b


def dense_backward(w, x, dy):
    """Gradients of a dense layer: returns (dx, dw, db)."""
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dy):
    # subgradient at exactly 0 is 0
    return dy * (x > 0)


def _im2col(xp, ksize, h, w):
    """(k*k*Cin, N*H*W) patch matrix; rows grouped offset-major, channel-minor."""
    n, cin = xp.shape[0], xp.shape[1]
    cols = np.empty((ksize * ksize * cin, n * h * w))
    idx = 0
    for di in range(ksize):
        for dj in range(ksize):
            patch = xp[:, :, di : di + h, dj : dj + w]
            cols[idx * cin : (idx + 1) * cin, :] = patch.transpose(1, 0, 2, 3).reshape(
                cin, n * h * w
            )
            idx += 1
    return cols


def _weight_matrix(w):
    cout, cin, ksize, _ = w.shape
    return w.transpose(0, 2, 3, 1).reshape(cout, ksize * ksize * cin)


def conv2d_same(w, b, x, want_cols: bool = False):
    """Same-padded cross-correlation; x is (N, Cin, H, W), w is (Cout, Cin, k, k).

    With want_cols the patch matrix is returned too so a following
    backward pass can skip rebuilding it.
    """
    cout, cin, ksize, _ = w.shape
    n, xc, h, wd = x.shape
    if xc != cin:
        raise ValueError(f"conv expects {cin} input channels, got {xc}")
    if ksize == 1:
        x2 = x.transpose(1, 0, 2, 3).reshape(cin, -1)
        y = (w[:, :, 0, 0] @ x2).reshape(cout, n, h, wd).transpose(1, 0, 2, 3)
        y = y + b[None, :, None, None]
        return (y, None) if want_cols else y
    pad = (ksize - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, ksize, h, wd)
    y = (_weight_matrix(w) @ cols).reshape(cout, n, h, wd).transpose(1, 0, 2, 3)
    y = y + b[None, :, None, None]
    return (y, cols) if want_cols else y


def conv2d_backward(w, x, dy, cols=None):
    """Gradients of conv2d_same: returns (dx, dw, db)."""
    cout, cin, ksize, _ = w.shape
    n, _, h, wd = x.shape
    db = dy.sum(axis=(0, 2, 3))
    dy2 = dy.transpose(1, 0, 2, 3).reshape(cout, n * h * wd)
    if ksize == 1:
        x2 = x.transpose(1, 0, 2, 3).reshape(cin, -1)
        dw = (dy2 @ x2.T).reshape(w.shape)
        dx = (w[:, :, 0, 0].T @ dy2).reshape(cin, n, h, wd).transpose(1, 0, 2, 3)
        return dx, dw, db
    pad = (ksize - 1) // 2
    if cols is None:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols = _im2col(xp, ksize, h, wd)
    dwm = dy2 @ cols.T  # (Cout, k*k*Cin)
    dw = dwm.reshape(cout, ksize, ksize, cin).transpose(0, 3, 1, 2)
    dcols = _weight_matrix(w).T @ dy2  # (k*k*Cin, N*H*W)
    dxp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    idx = 0
    for di in range(ksize):
        for dj in range(ksize):
            dxp[:, :, di : di + h, dj : dj + wd] += (
                dcols[idx * cin : (idx + 1) * cin, :]
                .reshape(cin, n, h, wd)
                .transpose(1, 0, 2, 3)
            )
            idx += 1
    dx = dxp[:, :, pad : pad + h, pad : pad + wd]
    return dx, dw, db


def softmax2d(logits):
    """Stable softmax over the last two axes (one grid per leading index)."""
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax input must be finite")
    flat = logits.reshape(*logits.shape[:-2], -1)
    shifted = flat - flat.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=-1, keepdims=True)
    return probs.reshape(logits.shape)


def softmax_grid(grid, logits):
    """Per-channel softmax of (T, h, h) logits as grid distributions."""
    from .grid import GridDistribution  # grid has no dependency back on this module

    probs = softmax2d(np.asarray(logits, dtype=np.float64))
    if probs.ndim != 3 or probs.shape[1:] != (grid.h, grid.h):
        raise ValueError(f"expected (T, {grid.h}, {grid.h}) logits, got {probs.shape}")
    return [GridDistribution(grid, probs[k]) for k in range(probs.shape[0])]


def cross_entropy_grids(phat, p):
    """Mean cross entropy between forecast and target grids.

    Shapes are (..., T, h, h) with identical leading axes; the loss is
    averaged over every grid (all leading axes and horizons).
    """
    if phat.shape != p.shape:
        raise ValueError(f"shape mismatch: {phat.shape} vs {p.shape}")
    n_grids = int(np.prod(phat.shape[:-2])) or 1
    logq = np.log(np.maximum(phat, 1e-300))
    return float(-(p * logq).sum() / n_grids)


def softmax_ce_grad(phat, p):
    """Gradient of cross_entropy_grids w.r.t. the softmax logits."""
    n_grids = int(np.prod(phat.shape[:-2])) or 1
    return (phat - p) / n_grids


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for w, b in params:
        state.m.append((np.zeros_like(w), np.zeros_like(b)))
        state.v.append((np.zeros_like(w), np.zeros_like(b)))
    return state


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update; mutates params in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
        for arr, g, m, v in (
            (w, gw, state.m[i][0], state.v[i][0]),
            (b, gb, state.m[i][1], state.v[i][1]),
        ):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            arr -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# gradient verification


def gradient_check(loss_fn, params, analytic_grads, step=1e-5, floor=1e-6):
    """Max relative error between analytic gradients and central differences.

    loss_fn is re-evaluated after in-place perturbation of params, so it
    must read the same arrays. Intended for small models only.
    """
    worst = 0.0
    for (w, b), (gw, gb) in zip(params, analytic_grads):
        for arr, g in ((w, gw), (b, gb)):
            flat = arr.reshape(-1)
            gflat = np.asarray(g).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = loss_fn()
                flat[i] = orig - step
                down = loss_fn()
                flat[i] = orig
                fd = (up - down) / (2.0 * step)
                denom = max(abs(gflat[i]), abs(fd), floor)
                worst = max(worst, abs(gflat[i] - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_params(fh, specs, params) -> None:
    """Write layer specs and parameters as a versioned little-endian blob."""
    own = isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__")
    out = open(fh, "wb") if own else fh
    try:
        out.write(CHECKPOINT_MAGIC)
        out.write(struct.pack("<II", CHECKPOINT_VERSION, len(specs)))
        for spec, (w, b) in zip(specs, params):
            out.write(
                struct.pack(
                    "<BBIIIII",
                    _KIND_CODES[spec.kind],
                    _ACT_CODES[spec.activation],
                    spec.fan_in,
                    spec.fan_out,
                    spec.ksize,
                    spec.cin,
                    spec.cout,
                )
            )
            out.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            out.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    finally:
        if own:
            out.close()


def load_params(fh):
    """Inverse of save_params; returns (specs, params)."""
    own = isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__")
    inp = open(fh, "rb") if own else fh
    try:
        magic = inp.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, n_layers = struct.unpack("<II", inp.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        specs, params = [], []
        for _ in range(n_layers):
            kind, act, fan_in, fan_out, ksize, cin, cout = struct.unpack(
                "<BBIIIII", inp.read(22)
            )
            spec = LayerSpec(
                _KIND_NAMES[kind],
                _ACT_NAMES[act],
                fan_in=fan_in,
                fan_out=fan_out,
                ksize=ksize,
                cin=cin,
                cout=cout,
            )
            w_shape, b_shape = spec.param_shapes()
            w = np.frombuffer(
                inp.read(8 * int(np.prod(w_shape))), dtype="<f8"
            ).reshape(w_shape)
            b = np.frombuffer(inp.read(8 * int(np.prod(b_shape))), dtype="<f8").reshape(
                b_shape
            )
            specs.append(spec)
            params.append((w.astype(np.float64), b.astype(np.float64)))
        return specs, params
    finally:
        if own:
            inp.close()


def params_to_bytes(specs, params) -> bytes:
    buf = io.BytesIO()
    save_params(buf, specs, params)
    return buf.getvalue()
