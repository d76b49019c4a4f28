"""Residual convolutional scorer with a hand-written backward pass.

Layers, for a K x 11 image flattened row-major to ``x`` and a normalized
mention count ``m``::

    conv1  = tanh(conv1d(x; W_conv1, kernel 10, stride 5) + b_conv1)   (F, L)
    fc1    = tanh(W_fc1 x + b_fc1)
    fc2    = tanh(W_fc2 fc1 + b_fc2)
    fc3    = tanh(W_fc3 fc2 + b_fc3)
    fc4    = tanh(W_fc4 [m, fc3] + b_fc4)
    fc5    = tanh(W_fc5 [vec(conv1), fc4] + b_fc5)
    fc6    = sigmoid(W_fc6 fc5 + b_fc6)
    score  = sigmoid(W_o fc6 + b_o)

Weight matrices are stored (out, in). The loss is ``(score - target) ** 2``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numba import njit
from scipy.special import expit

from . import binio
from .errors import ShapeError

MAGIC = b"CRNET\x00\x00\x00"
FORMAT_VERSION = 1

CONV_KERNEL = 10
CONV_STRIDE = 5

PARAM_NAMES = ("W_conv1", "b_conv1", "W_fc1", "b_fc1", "W_fc2", "b_fc2", "W_fc3", "b_fc3",
               "W_fc4", "b_fc4", "W_fc5", "b_fc5", "W_fc6", "b_fc6", "W_o", "b_o")


@dataclass(frozen=True)
class NetworkHyper:
    image_rows: int = 15
    image_cols: int = 11
    conv_filters: int = 4
    widths: tuple = (64, 32, 16, 16, 16, 8)
    seed: int = 0
    conv_kernel: int = CONV_KERNEL
    conv_stride: int = CONV_STRIDE

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.conv_kernel != CONV_KERNEL or self.conv_stride != CONV_STRIDE:
            raise ValueError("conv1 uses kernel 10 and stride 5")
        if len(self.widths) != 6 or min(self.widths) < 1:
            raise ValueError("widths must give six layer sizes, each at least 1")
        if self.conv_filters < 1:
            raise ValueError("conv_filters must be at least 1")
        if self.input_size < self.conv_kernel:
            raise ValueError("image too small for the convolution kernel")

    @property
    def input_size(self):
        return self.image_rows * self.image_cols

    @property
    def conv_length(self):
        return (self.input_size - self.conv_kernel) // self.conv_stride + 1

    def shapes(self) -> dict:
        w1, w2, w3, w4, w5, w6 = self.widths
        F, L = self.conv_filters, self.conv_length
        return {
            "W_conv1": (F, self.conv_kernel), "b_conv1": (F,),
            "W_fc1": (w1, self.input_size), "b_fc1": (w1,),
            "W_fc2": (w2, w1), "b_fc2": (w2,),
            "W_fc3": (w3, w2), "b_fc3": (w3,),
            "W_fc4": (w4, w3 + 1), "b_fc4": (w4,),
            "W_fc5": (w5, F * L + w4), "b_fc5": (w5,),
            "W_fc6": (w6, w5), "b_fc6": (w6,),
            "W_o": (1, w6), "b_o": (1,),
        }

    def as_dict(self):
        return {"image_rows": self.image_rows, "image_cols": self.image_cols,
                "conv_filters": self.conv_filters, "widths": list(self.widths), "seed": self.seed}


@dataclass
class NetworkParams:
    hyper: NetworkHyper
    tensors: dict

    def __post_init__(self):
        shapes = self.hyper.shapes()
        if list(self.tensors) != list(PARAM_NAMES):
            raise ShapeError(f"parameter names must be {PARAM_NAMES}")
        for name, shape in shapes.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.hyper, {k: v.copy() for k, v in self.tensors.items()})

    @classmethod
    def zeros(cls, hyper: NetworkHyper) -> "NetworkParams":
        return cls(hyper, {k: np.zeros(s) for k, s in hyper.shapes().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in PARAM_NAMES])

    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())


@dataclass
class ForwardTrace:
    x: np.ndarray
    windows: np.ndarray  # (L, kernel) view of x
    data1: float
    conv1: np.ndarray  # (F, L)
    fc1: np.ndarray
    fc2: np.ndarray
    fc3: np.ndarray
    fc4: np.ndarray
    fc5: np.ndarray
    fc6: np.ndarray
    score: float
    fc4_in: np.ndarray = field(repr=False, default=None)
    fc5_in: np.ndarray = field(repr=False, default=None)


def sigmoid(v):
    return expit(v)


def init_params(hyper: NetworkHyper) -> NetworkParams:
    """Glorot-uniform weights from ``hyper.seed``; biases zero.

    The conv kernel counts kernel length as fan-in and filter count as fan-out.
    """
    rng = np.random.default_rng(hyper.seed)
    tensors = {}
    for name, shape in hyper.shapes().items():
        if name.startswith("b_"):
            tensors[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
    return NetworkParams(hyper, tensors)


def _check_input(hyper, image, data1_norm):
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (hyper.image_rows, hyper.image_cols):
        raise ShapeError(f"image shape {image.shape} does not match "
                         f"({hyper.image_rows}, {hyper.image_cols})")
    if not np.isfinite(data1_norm):
        raise ValueError("data1_norm must be finite")
    return image


def forward(params: NetworkParams, image, data1_norm: float):
    """Return ``(score, trace)`` for one image."""
    hyper = params.hyper
    image = _check_input(hyper, image, data1_norm)
    p = params.tensors
    x = image.reshape(-1)
    windows = sliding_window_view(x, hyper.conv_kernel)[::hyper.conv_stride]
    conv1 = np.tanh(p["W_conv1"] @ windows.T + p["b_conv1"][:, None])
    fc1 = np.tanh(p["W_fc1"] @ x + p["b_fc1"])
    fc2 = np.tanh(p["W_fc2"] @ fc1 + p["b_fc2"])
    fc3 = np.tanh(p["W_fc3"] @ fc2 + p["b_fc3"])
    fc4_in = np.concatenate(([data1_norm], fc3))
    fc4 = np.tanh(p["W_fc4"] @ fc4_in + p["b_fc4"])
    fc5_in = np.concatenate((conv1.ravel(), fc4))
    fc5 = np.tanh(p["W_fc5"] @ fc5_in + p["b_fc5"])
    fc6 = sigmoid(p["W_fc6"] @ fc5 + p["b_fc6"])
    score = float(sigmoid(p["W_o"] @ fc6 + p["b_o"])[0])
    trace = ForwardTrace(x, windows, float(data1_norm), conv1, fc1, fc2, fc3, fc4, fc5, fc6, score,
                         fc4_in, fc5_in)
    return score, trace


def loss(score: float, rating: float) -> float:
    return (score - rating) ** 2


def backward(params: NetworkParams, trace: ForwardTrace, image, data1_norm: float,
             target: float, with_input_grad: bool = False):
    """Gradient of ``(score - target) ** 2`` for every parameter.

    Returns a dict keyed like ``params.tensors``. With ``with_input_grad`` the
    derivative with respect to ``data1_norm`` is returned as a second value.
    """
    hyper = params.hyper
    image = _check_input(hyper, image, data1_norm)
    if trace.x.shape != (hyper.input_size,) or trace.conv1.shape != (hyper.conv_filters, hyper.conv_length):
        raise ShapeError("trace was produced by a network of a different shape")
    if not np.array_equal(trace.x, image.reshape(-1)) or trace.data1 != float(data1_norm):
        raise ValueError("trace does not belong to this input")
    p = params.tensors
    g = {}
    s = trace.score

    d = 2.0 * (s - target) * s * (1.0 - s)  # d loss / d output pre-activation
    g["W_o"] = d * trace.fc6[None, :]
    g["b_o"] = np.array([d])

    d6 = (p["W_o"][0] * d) * trace.fc6 * (1.0 - trace.fc6)
    g["W_fc6"] = np.outer(d6, trace.fc5)
    g["b_fc6"] = d6

    d5 = (p["W_fc6"].T @ d6) * (1.0 - trace.fc5 ** 2)
    g["W_fc5"] = np.outer(d5, trace.fc5_in)
    g["b_fc5"] = d5
    up5 = p["W_fc5"].T @ d5
    n_conv = trace.conv1.size
    d_conv = up5[:n_conv].reshape(trace.conv1.shape) * (1.0 - trace.conv1 ** 2)

    d4 = up5[n_conv:] * (1.0 - trace.fc4 ** 2)
    g["W_fc4"] = np.outer(d4, trace.fc4_in)
    g["b_fc4"] = d4
    up4 = p["W_fc4"].T @ d4

    d3 = up4[1:] * (1.0 - trace.fc3 ** 2)
    g["W_fc3"] = np.outer(d3, trace.fc2)
    g["b_fc3"] = d3
    d2 = (p["W_fc3"].T @ d3) * (1.0 - trace.fc2 ** 2)
    g["W_fc2"] = np.outer(d2, trace.fc1)
    g["b_fc2"] = d2
    d1 = (p["W_fc2"].T @ d2) * (1.0 - trace.fc1 ** 2)
    g["W_fc1"] = np.outer(d1, trace.x)
    g["b_fc1"] = d1

    g["W_conv1"] = d_conv @ trace.windows
    g["b_conv1"] = d_conv.sum(axis=1)

    grads = {name: g[name] for name in PARAM_NAMES}
    if with_input_grad:
        return grads, float(up4[0])
    return grads


def sum_first_layer_weights(params: NetworkParams) -> np.ndarray:
    """Column sums of W_fc1 (one per pixel) laid out as the K x 11 image."""
    h = params.hyper
    return params["W_fc1"].sum(axis=0).reshape(h.image_rows, h.image_cols)


def save_checkpoint(params: NetworkParams, path: str | os.PathLike, extra: dict | None = None) -> None:
    header = {"hyper": params.hyper.as_dict(), "extra": extra or {}}
    binio.write(path, MAGIC, FORMAT_VERSION, header, params.tensors)


def load_checkpoint(path: str | os.PathLike) -> tuple[NetworkParams, dict]:
    header, arrays = binio.read(path, MAGIC, FORMAT_VERSION)
    h = header["hyper"]
    hyper = NetworkHyper(h["image_rows"], h["image_cols"], h["conv_filters"], tuple(h["widths"]), h["seed"])
    tensors = {name: arrays[name] for name in PARAM_NAMES}
    return NetworkParams(hyper, tensors), header["extra"]


GRADCHECK_FLOOR = 1e-6


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = GRADCHECK_FLOOR) -> np.ndarray:
    """Elementwise |a - b| / max(|a|, |b|, floor).

    Central differences at eps=1e-5 carry round-off of about 1e-11 (worst
    case near 1e-9), so an entry with a true gradient below about 1e-7 cannot
    show a relative error under 1e-4 however correct the backward pass is.
    Below the floor the comparison becomes an absolute one at floor * error.
    """
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(params: NetworkParams, image, data1_norm, target, eps=1e-5) -> dict:
    """Central finite differences of the loss for every parameter entry."""
    work = params.copy()
    grads = {}
    for name in PARAM_NAMES:
        tensor = work.tensors[name]
        out = np.empty_like(tensor)
        flat, gflat = tensor.reshape(-1), out.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss(forward(work, image, data1_norm)[0], target)
            flat[i] = orig - eps
            down = loss(forward(work, image, data1_norm)[0], target)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
        grads[name] = out
    return grads


def gradient_check(params: NetworkParams, image, data1_norm, target, eps=1e-5,
                   floor=GRADCHECK_FLOOR) -> float:
    """Max relative error between :func:`backward` and finite differences."""
    _, trace = forward(params, image, data1_norm)
    analytic = backward(params, trace, image, data1_norm, target)
    numeric = numerical_gradient(params, image, data1_norm, target, eps)
    return max(float(relative_error(analytic[n], numeric[n], floor).max()) for n in PARAM_NAMES)


# Flat-buffer fast path used by training. Same arithmetic as forward/backward
# above, written as explicit loops so numba can compile it.

def flat_layout(hyper: NetworkHyper):
    """``(offsets, dims)`` describing where each tensor sits in the flat buffer."""
    shapes = hyper.shapes()
    offsets = [0]
    for name in PARAM_NAMES:
        offsets.append(offsets[-1] + int(np.prod(shapes[name])))
    dims = [hyper.input_size, hyper.conv_filters, hyper.conv_kernel, hyper.conv_stride,
            hyper.conv_length, *hyper.widths]
    return np.asarray(offsets, dtype=np.int64), np.asarray(dims, dtype=np.int64)


def params_from_flat(hyper: NetworkHyper, theta: np.ndarray) -> NetworkParams:
    offsets, _ = flat_layout(hyper)
    shapes = hyper.shapes()
    tensors = {}
    for i, name in enumerate(PARAM_NAMES):
        tensors[name] = np.array(theta[offsets[i]:offsets[i + 1]]).reshape(shapes[name])
    return NetworkParams(hyper, tensors)


@njit(cache=True)
def _dense(W, b, v, out, act):
    # act 0: tanh, 1: sigmoid
    for i in range(W.shape[0]):
        acc = b[i]
        for j in range(W.shape[1]):
            acc += W[i, j] * v[j]
        if act == 0:
            out[i] = np.tanh(acc)
        else:
            out[i] = 1.0 / (1.0 + np.exp(-acc)) if acc >= 0 else np.exp(acc) / (1.0 + np.exp(acc))


@njit(cache=True)
def _dense_back(W, dz, v, gW, gb, up):
    # gW = outer(dz, v), gb = dz, up = W.T @ dz
    for j in range(W.shape[1]):
        up[j] = 0.0
    for i in range(W.shape[0]):
        gb[i] = dz[i]
        for j in range(W.shape[1]):
            gW[i, j] = dz[i] * v[j]
            up[j] += W[i, j] * dz[i]


@njit(cache=True)
def loss_and_grad_flat(theta, grad, offs, dims, x, m, target):
    """Forward and backward pass over the flat buffer; fills ``grad``, returns (score, loss)."""
    n_in, F, ker, stride, L = dims[0], dims[1], dims[2], dims[3], dims[4]
    w1, w2, w3, w4, w5, w6 = dims[5], dims[6], dims[7], dims[8], dims[9], dims[10]
    Wc = theta[offs[0]:offs[1]].reshape((F, ker))
    bc = theta[offs[1]:offs[2]]
    W1 = theta[offs[2]:offs[3]].reshape((w1, n_in))
    b1 = theta[offs[3]:offs[4]]
    W2 = theta[offs[4]:offs[5]].reshape((w2, w1))
    b2 = theta[offs[5]:offs[6]]
    W3 = theta[offs[6]:offs[7]].reshape((w3, w2))
    b3 = theta[offs[7]:offs[8]]
    W4 = theta[offs[8]:offs[9]].reshape((w4, w3 + 1))
    b4 = theta[offs[9]:offs[10]]
    W5 = theta[offs[10]:offs[11]].reshape((w5, F * L + w4))
    b5 = theta[offs[11]:offs[12]]
    W6 = theta[offs[12]:offs[13]].reshape((w6, w5))
    b6 = theta[offs[13]:offs[14]]
    Wo = theta[offs[14]:offs[15]].reshape((1, w6))
    bo = theta[offs[15]:offs[16]]

    conv = np.empty(F * L)
    for f in range(F):
        for l in range(L):
            acc = bc[f]
            for t in range(ker):
                acc += Wc[f, t] * x[l * stride + t]
            conv[f * L + l] = np.tanh(acc)
    h1 = np.empty(w1)
    _dense(W1, b1, x, h1, 0)
    h2 = np.empty(w2)
    _dense(W2, b2, h1, h2, 0)
    h3 = np.empty(w3)
    _dense(W3, b3, h2, h3, 0)
    in4 = np.empty(w3 + 1)
    in4[0] = m
    in4[1:] = h3
    h4 = np.empty(w4)
    _dense(W4, b4, in4, h4, 0)
    in5 = np.empty(F * L + w4)
    in5[:F * L] = conv
    in5[F * L:] = h4
    h5 = np.empty(w5)
    _dense(W5, b5, in5, h5, 0)
    h6 = np.empty(w6)
    _dense(W6, b6, h5, h6, 1)
    out = np.empty(1)
    _dense(Wo, bo, h6, out, 1)
    s = out[0]

    gWc = grad[offs[0]:offs[1]].reshape((F, ker))
    gbc = grad[offs[1]:offs[2]]
    gW1 = grad[offs[2]:offs[3]].reshape((w1, n_in))
    gb1 = grad[offs[3]:offs[4]]
    gW2 = grad[offs[4]:offs[5]].reshape((w2, w1))
    gb2 = grad[offs[5]:offs[6]]
    gW3 = grad[offs[6]:offs[7]].reshape((w3, w2))
    gb3 = grad[offs[7]:offs[8]]
    gW4 = grad[offs[8]:offs[9]].reshape((w4, w3 + 1))
    gb4 = grad[offs[9]:offs[10]]
    gW5 = grad[offs[10]:offs[11]].reshape((w5, F * L + w4))
    gb5 = grad[offs[11]:offs[12]]
    gW6 = grad[offs[12]:offs[13]].reshape((w6, w5))
    gb6 = grad[offs[13]:offs[14]]
    gWo = grad[offs[14]:offs[15]].reshape((1, w6))
    gbo = grad[offs[15]:offs[16]]

    dz = np.empty(1)
    dz[0] = 2.0 * (s - target) * s * (1.0 - s)
    up6 = np.empty(w6)
    _dense_back(Wo, dz, h6, gWo, gbo, up6)
    for i in range(w6):
        up6[i] *= h6[i] * (1.0 - h6[i])
    up5 = np.empty(w5)
    _dense_back(W6, up6, h5, gW6, gb6, up5)
    for i in range(w5):
        up5[i] *= 1.0 - h5[i] * h5[i]
    up_in5 = np.empty(F * L + w4)
    _dense_back(W5, up5, in5, gW5, gb5, up_in5)
    d4 = np.empty(w4)
    for i in range(w4):
        d4[i] = up_in5[F * L + i] * (1.0 - h4[i] * h4[i])
    up_in4 = np.empty(w3 + 1)
    _dense_back(W4, d4, in4, gW4, gb4, up_in4)
    d3 = np.empty(w3)
    for i in range(w3):
        d3[i] = up_in4[1 + i] * (1.0 - h3[i] * h3[i])
    up2 = np.empty(w2)
    _dense_back(W3, d3, h2, gW3, gb3, up2)
    for i in range(w2):
        up2[i] *= 1.0 - h2[i] * h2[i]
    up1 = np.empty(w1)
    _dense_back(W2, up2, h1, gW2, gb2, up1)
    for i in range(w1):
        up1[i] *= 1.0 - h1[i] * h1[i]
    up0 = np.empty(n_in)
    _dense_back(W1, up1, x, gW1, gb1, up0)

    for f in range(F):
        gbc[f] = 0.0
        for t in range(ker):
            gWc[f, t] = 0.0
        for l in range(L):
            dc = up_in5[f * L + l] * (1.0 - conv[f * L + l] * conv[f * L + l])
            gbc[f] += dc
            for t in range(ker):
                gWc[f, t] += dc * x[l * stride + t]
    return s, (s - target) * (s - target)


@njit(cache=True)
def score_flat(theta, offs, dims, x, m):
    grad = np.empty_like(theta)
    s, _ = loss_and_grad_flat(theta, grad, offs, dims, x, m, 0.0)
    return s
