"""Forward evaluation and reverse-mode differentiation over ModelGraphs.

Gradients are produced with respect to both the input and every layer's
parameters in one backward sweep. finite_diff_gradient is the independent
oracle: it never touches the backward code path and evaluates losses in
float64 through the numpy kernels so that central differences at h=1e-3
resolve well below the 1e-3 relative tolerance the backward pass is held
to.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import backend, _kernels_numpy
from .errors import LabelError, NumericError, ShapeError
from .graph import AvgPool2D, Conv2D, Dense, Flatten, MaxPool2D, ModelGraph

LOSS_KINDS = ("cross_entropy", "logit", "neg_logit", "constant")


@dataclass
class LayerTrace:
    pre: np.ndarray
    post: np.ndarray
    aux: Optional[np.ndarray] = None  # max-pool winner indices


@dataclass
class ActivationTrace:
    layers: List[LayerTrace]


@dataclass
class GradientBundle:
    input_grad: np.ndarray
    weight_grads: List[np.ndarray]
    bias_grads: List[np.ndarray]


def _activate(kind, pre):
    if kind == "identity":
        return pre
    if kind == "relu":
        return np.maximum(pre, 0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pre))
    if kind == "square":
        return pre * pre
    raise ShapeError(f"unknown activation {kind!r}")


def _activate_grad(kind, pre, post, g):
    if kind == "identity":
        return g
    if kind == "relu":
        return g * (pre > 0)
    if kind == "sigmoid":
        return g * post * (1.0 - post)
    if kind == "square":
        return g * 2.0 * pre
    raise ShapeError(f"unknown activation {kind!r}")


def _batchify(model, x):
    x = np.asarray(x)
    if x.shape == model.input_shape:
        return x[None, ...], True
    if x.shape[1:] == model.input_shape:
        return x, False
    raise ShapeError(f"input shape {x.shape} does not match {model.input_shape}")


def _run_layers(model, xb, kernels):
    traces = []
    cur = xb
    for layer in model.layers:
        if isinstance(layer, Dense):
            pre = cur @ layer.w.T + layer.b
            post = _activate(layer.activation, pre)
            traces.append(LayerTrace(pre, post))
        elif isinstance(layer, Conv2D):
            pre = kernels.conv2d_forward(cur, layer.w, layer.b, layer.stride, layer.padding)
            post = _activate(layer.activation, pre)
            traces.append(LayerTrace(pre, post))
        elif isinstance(layer, MaxPool2D):
            post, idx = kernels.maxpool_forward(cur, layer.size, layer.stride)
            traces.append(LayerTrace(post, post, idx))
        elif isinstance(layer, AvgPool2D):
            post = kernels.avgpool_forward(cur, layer.size, layer.stride)
            traces.append(LayerTrace(post, post))
        elif isinstance(layer, Flatten):
            post = cur.reshape(cur.shape[0], -1)
            traces.append(LayerTrace(post, post))
        else:
            raise ShapeError(f"unknown layer type {type(layer).__name__}")
        cur = post
    return cur, traces


def forward(model: ModelGraph, x):
    """Evaluate the graph; returns (logits, ActivationTrace).

    Accepts a single input of model.input_shape or a batch with a leading
    axis. Pure: no state survives the call.
    """
    xb, single = _batchify(model, x)
    if not np.isfinite(xb).all():
        raise NumericError("input contains non-finite values")
    logits, traces = _run_layers(model, xb, backend)
    if not np.isfinite(logits).all():
        raise NumericError("forward produced non-finite logits")
    if single:
        squeezed = [
            LayerTrace(t.pre[0], t.post[0], None if t.aux is None else t.aux[0])
            for t in traces
        ]
        return logits[0], ActivationTrace(squeezed)
    return logits, ActivationTrace(traces)


def predict(model: ModelGraph, x):
    logits, _ = forward(model, x)
    return int(np.argmax(logits)) if logits.ndim == 1 else np.argmax(logits, axis=1)


def _check_loss(model, loss_kind, label):
    if loss_kind not in LOSS_KINDS:
        raise LabelError(f"unknown loss kind {loss_kind!r}")
    if loss_kind != "constant" and not (0 <= int(label) < model.num_classes):
        raise LabelError(f"label {label} outside [0, {model.num_classes})")


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_dlogits(logits, loss_kind, label):
    """Scalar loss plus its gradient at the logits, single sample."""
    if loss_kind == "cross_entropy":
        z = logits - logits.max()
        lse = np.log(np.exp(z).sum())
        loss = float(lse - z[label])
        d = softmax(logits)
        d[label] -= 1.0
        return loss, d.astype(logits.dtype)
    if loss_kind == "logit":
        d = np.zeros_like(logits)
        d[label] = 1.0
        return float(logits[label]), d
    if loss_kind == "neg_logit":
        d = np.zeros_like(logits)
        d[label] = -1.0
        return float(-logits[label]), d
    if loss_kind == "constant":
        return 0.0, np.zeros_like(logits)
    raise LabelError(f"unknown loss kind {loss_kind!r}")


def _backprop(model, xb, traces, dlogits, kernels):
    """Reverse sweep; returns (input grad, per-ordinal weight/bias grads)."""
    n_params = model.num_param_layers
    w_grads: List[Optional[np.ndarray]] = [None] * n_params
    b_grads: List[Optional[np.ndarray]] = [None] * n_params
    ordinal = {idx: k for k, idx in enumerate(model.param_indices)}

    grad = dlogits
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        tr = traces[i]
        x_in = xb if i == 0 else traces[i - 1].post
        if isinstance(layer, Dense):
            g_pre = _activate_grad(layer.activation, tr.pre, tr.post, grad)
            w_grads[ordinal[i]] = g_pre.T @ x_in
            b_grads[ordinal[i]] = g_pre.sum(axis=0)
            grad = g_pre @ layer.w
        elif isinstance(layer, Conv2D):
            g_pre = _activate_grad(layer.activation, tr.pre, tr.post, grad)
            g_pre = np.ascontiguousarray(g_pre)
            grad, gw, gb = kernels.conv2d_backward(
                x_in, layer.w, g_pre, layer.stride, layer.padding
            )
            w_grads[ordinal[i]] = gw
            b_grads[ordinal[i]] = gb
        elif isinstance(layer, MaxPool2D):
            h, w = x_in.shape[2], x_in.shape[3]
            grad = kernels.maxpool_backward(
                tr.aux, np.ascontiguousarray(grad), h, w, layer.stride < layer.size
            )
        elif isinstance(layer, AvgPool2D):
            h, w = x_in.shape[2], x_in.shape[3]
            grad = kernels.avgpool_backward(
                np.ascontiguousarray(grad), layer.size, layer.stride, h, w
            )
        elif isinstance(layer, Flatten):
            grad = grad.reshape(x_in.shape)
    return grad, w_grads, b_grads


def backward(model: ModelGraph, x, loss_kind: str, label: int) -> GradientBundle:
    """Gradients of the scalar loss w.r.t. the input and all parameters."""
    _check_loss(model, loss_kind, label)
    xb, single = _batchify(model, x)
    if not single:
        raise ShapeError("backward expects a single example, not a batch")
    logits, traces = _run_layers(model, xb, backend)
    if not np.isfinite(logits).all():
        raise NumericError("forward produced non-finite logits")
    _, d = loss_and_dlogits(logits[0], loss_kind, int(label))
    gx, gws, gbs = _backprop(model, xb, traces, d[None, :], backend)
    return GradientBundle(gx[0], gws, gbs)


def loss_logits_backward(model: ModelGraph, x, loss_kind: str, label: int):
    """(loss, logits, GradientBundle) in one pass; attack inner loops use this."""
    _check_loss(model, loss_kind, label)
    xb, single = _batchify(model, x)
    if not single:
        raise ShapeError("loss_logits_backward expects a single example")
    logits, traces = _run_layers(model, xb, backend)
    if not np.isfinite(logits).all():
        raise NumericError("forward produced non-finite logits")
    loss, d = loss_and_dlogits(logits[0], loss_kind, int(label))
    gx, gws, gbs = _backprop(model, xb, traces, d[None, :], backend)
    return loss, logits[0], GradientBundle(gx[0], gws, gbs)


def loss_value(model: ModelGraph, x, loss_kind: str, label: int) -> float:
    _check_loss(model, loss_kind, label)
    logits, _ = forward(model, x)
    loss, _ = loss_and_dlogits(logits, loss_kind, int(label))
    return loss


def _loss64(model, x64, w64, b64, loss_kind, label):
    """Straight float64 loss evaluation used by the finite-difference oracle."""
    cur = x64[None, ...]
    ordinal = 0
    for layer in model.layers:
        if isinstance(layer, Dense):
            cur = _activate(layer.activation, cur @ w64[ordinal].T + b64[ordinal])
            ordinal += 1
        elif isinstance(layer, Conv2D):
            pre = _kernels_numpy.conv2d_forward(
                cur, w64[ordinal], b64[ordinal], layer.stride, layer.padding
            )
            cur = _activate(layer.activation, pre)
            ordinal += 1
        elif isinstance(layer, MaxPool2D):
            cur, _ = _kernels_numpy.maxpool_forward(cur, layer.size, layer.stride)
        elif isinstance(layer, AvgPool2D):
            cur = _kernels_numpy.avgpool_forward(cur, layer.size, layer.stride)
        elif isinstance(layer, Flatten):
            cur = cur.reshape(cur.shape[0], -1)
    loss, _ = loss_and_dlogits(cur[0], loss_kind, int(label))
    return loss


def finite_diff_gradient(
    model: ModelGraph, x, loss_kind: str, label: int, h: float = 1e-3
) -> GradientBundle:
    """Central-difference estimate of backward()'s outputs."""
    if h <= 0:
        raise ValueError("h must be positive")
    _check_loss(model, loss_kind, label)
    x64 = np.asarray(x, dtype=np.float64)
    if x64.shape != model.input_shape:
        raise ShapeError(f"input shape {x64.shape} does not match {model.input_shape}")
    w64 = [w.astype(np.float64) for w in model.weights()]
    b64 = [b.astype(np.float64) for b in model.biases()]

    def central(arr, flat_idx):
        orig = arr.flat[flat_idx]
        arr.flat[flat_idx] = orig + h
        lp = _loss64(model, x64, w64, b64, loss_kind, label)
        arr.flat[flat_idx] = orig - h
        lm = _loss64(model, x64, w64, b64, loss_kind, label)
        arr.flat[flat_idx] = orig
        return (lp - lm) / (2.0 * h)

    gx = np.empty_like(x64)
    for i in range(x64.size):
        gx.flat[i] = central(x64, i)
    gws, gbs = [], []
    for k in range(model.num_param_layers):
        gw = np.empty_like(w64[k])
        for i in range(gw.size):
            gw.flat[i] = central(w64[k], i)
        gb = np.empty_like(b64[k])
        for i in range(gb.size):
            gb.flat[i] = central(b64[k], i)
        gws.append(gw)
        gbs.append(gb)
    return GradientBundle(gx, gws, gbs)


def batch_cross_entropy(model: ModelGraph, xb, yb):
    """Mean cross-entropy and logits over a batch."""
    logits, _ = _run_layers(model, np.asarray(xb), backend)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    losses = lse - z[np.arange(len(yb)), yb]
    return float(losses.mean()), logits


def batch_cross_entropy_backward(model: ModelGraph, xb, yb):
    """(mean loss, logits, input grads, weight grads, bias grads) for a batch.

    Gradients are of the mean loss, so weight grads are already averaged.
    """
    xb = np.asarray(xb)
    logits, traces = _run_layers(model, xb, backend)
    n = xb.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    lse = np.log(e.sum(axis=1))
    loss = float((lse - z[np.arange(n), yb]).mean())
    d = p.astype(logits.dtype)
    d[np.arange(n), yb] -= 1.0
    d /= n
    gx, gws, gbs = _backprop(model, xb, traces, d, backend)
    return loss, logits, gx, gws, gbs
