"""Layers with hand-written forward/backward passes and the model builder.

Gradients are layer-local: each layer caches what its backward pass needs
during a training-mode forward and accumulates parameter gradients into
buffers that mirror its parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np

from . import rng as rngmod
from .errors import BuildError, ContractError, DimensionError, DomainError
from .tensor import Tensor, matmul

DEFAULT_SLOPE = 0.3

# Upper bound on elements in one im2col buffer; conv runs in batch chunks.
_COLS_BUDGET = 1 << 23


# ---------------------------------------------------------------------------
# Specs


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    units: int = 0
    slope: float = DEFAULT_SLOPE
    rate: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise BuildError(f"unknown layer kind {self.kind!r}")
        if self.kind == "Conv2D" and self.filters < 1:
            raise BuildError("Conv2D needs filters >= 1")
        if self.kind == "Dense" and self.units < 1:
            raise BuildError("Dense needs units >= 1")
        if self.kind == "LeakyReLU" and not self.slope > 0:
            raise BuildError("LeakyReLU slope must be positive")
        if self.kind == "Dropout" and not 0 <= self.rate < 1:
            raise BuildError("dropout rate must lie in [0, 1)")


LAYER_KINDS = ("Conv2D", "MaxPool2D", "LeakyReLU", "Flatten", "Dense", "Dropout", "SoftmaxOutput")


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    classes: int

    def __post_init__(self):
        if not self.layers or self.layers[-1].kind != "SoftmaxOutput":
            raise BuildError("last layer must be SoftmaxOutput")
        trace = self.shape_trace()
        if trace[-1] != (self.classes,):
            raise BuildError(f"output shape {trace[-1]} does not match {self.classes} classes")

    def shape_trace(self) -> list[tuple[int, ...]]:
        """Output shape (without batch axis) after every layer, input first."""
        shapes = [tuple(self.input_shape)]
        if len(shapes[0]) != 3 or min(shapes[0]) < 1:
            raise BuildError(f"input shape must be (H, W, C) with positive extents, got {self.input_shape}")
        for spec in self.layers:
            shapes.append(_output_shape(spec, shapes[-1]))
        return shapes

    def layer_params(self) -> list[tuple[str, int]]:
        """(layer name, trainable parameter count) for every parameterised layer."""
        out = []
        shapes = self.shape_trace()
        for spec, shape_in in zip(self.layers, shapes):
            if spec.kind == "Conv2D":
                out.append((spec.name, (3 * 3 * shape_in[2] + 1) * spec.filters))
            elif spec.kind == "Dense":
                out.append((spec.name, (shape_in[0] + 1) * spec.units))
        return out


def _output_shape(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    kind = spec.kind
    if kind == "Conv2D":
        if len(shape) != 3:
            raise BuildError(f"{spec.name}: Conv2D needs an (H, W, C) input, got {shape}")
        return (shape[0], shape[1], spec.filters)
    if kind == "MaxPool2D":
        if len(shape) != 3 or shape[0] < 2 or shape[1] < 2:
            raise BuildError(f"{spec.name or 'pool'}: input {shape} too small for 2x2 pooling")
        return (shape[0] // 2, shape[1] // 2, shape[2])
    if kind == "Flatten":
        return (int(np.prod(shape)),)
    if kind == "Dense":
        if len(shape) != 1:
            raise BuildError(f"{spec.name}: Dense needs a flat input, got {shape}")
        return (spec.units,)
    return shape


def build_proposed_cnn(
    input_shape: tuple[int, int, int] = (168, 168, 3),
    classes: int = 4,
    slope: float = DEFAULT_SLOPE,
    dropout: float = 0.5,
    hidden: int = 1024,
) -> ModelSpec:
    """Four conv blocks (64, 64, 128, 128 filters) and a dense head."""
    if classes < 2:
        raise BuildError(f"need at least 2 classes, got {classes}")
    layers: list[LayerSpec] = []
    for i, filters in enumerate((64, 64, 128, 128), start=1):
        layers += [
            LayerSpec("Conv2D", filters=filters, name=f"conv{i}"),
            LayerSpec("LeakyReLU", slope=slope),
            LayerSpec("MaxPool2D"),
        ]
    layers += [
        LayerSpec("Flatten"),
        LayerSpec("Dense", units=hidden, name="dense1"),
        LayerSpec("LeakyReLU", slope=slope),
        LayerSpec("Dropout", rate=dropout),
        LayerSpec("Dense", units=classes, name="dense2"),
        LayerSpec("SoftmaxOutput"),
    ]
    return ModelSpec(tuple(input_shape), tuple(layers), classes)


def trainable_param_count(spec: ModelSpec) -> int:
    return sum(n for _, n in spec.layer_params())


# ---------------------------------------------------------------------------
# Kernels


def _check_conv(x: Tensor, w: Tensor, b: Tensor) -> None:
    if x.ndim != 4:
        raise DimensionError(f"conv input must be NHWC, got shape {x.shape}")
    if w.ndim != 4 or w.shape[:2] != (3, 3):
        raise DimensionError(f"conv kernel must be (3, 3, Cin, Cout), got {w.shape}")
    if w.shape[2] != x.shape[3]:
        raise DimensionError(f"channel mismatch: input {x.shape} vs kernel {w.shape}")
    if b.shape != (w.shape[3],):
        raise DimensionError(f"bias shape {b.shape} does not match kernel {w.shape}")


def _chunks(n: int, per_sample: int) -> Iterator[slice]:
    step = max(1, _COLS_BUDGET // max(per_sample, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _im2col(x: Tensor) -> Tensor:
    """Patches of a 3x3 same-padded conv as rows ordered (ky, kx, cin)."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, h, w, 3, 3, c), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, :, ky, kx, :] = xp[:, ky:ky + h, kx:kx + w, :]
    return cols.reshape(n * h * w, 9 * c)


def _col2im(cols: Tensor, shape: tuple[int, int, int, int]) -> Tensor:
    n, h, w, c = shape
    cols = cols.reshape(n, h, w, 3, 3, c)
    gp = np.zeros((n, h + 2, w + 2, c), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            gp[:, ky:ky + h, kx:kx + w, :] += cols[:, :, :, ky, kx, :]
    return gp[:, 1:-1, 1:-1, :]


def conv2d_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero 'same' padding, via im2col."""
    _check_conv(x, w, b)
    n, h, wd, _ = x.shape
    cout = w.shape[3]
    wmat = w.reshape(-1, cout)
    out = np.empty((n, h, wd, cout), dtype=np.result_type(x, w))
    for sl in _chunks(n, h * wd * wmat.shape[0]):
        cols = _im2col(x[sl])
        out[sl] = (matmul(cols, wmat) + b).reshape(-1, h, wd, cout)
    return out


def conv2d_backward(x: Tensor, w: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    _check_conv(x, w, np.zeros(w.shape[3], dtype=w.dtype))
    n, h, wd, _ = x.shape
    cout = w.shape[3]
    if grad_out.shape != (n, h, wd, cout):
        raise DimensionError(f"grad_out shape {grad_out.shape} does not match forward output {(n, h, wd, cout)}")
    wmat = w.reshape(-1, cout)
    grad_x = np.empty_like(x, dtype=np.result_type(x, w))
    grad_w = np.zeros_like(wmat)
    for sl in _chunks(n, h * wd * wmat.shape[0]):
        cols = _im2col(x[sl])
        g = grad_out[sl].reshape(-1, cout)
        grad_w += matmul(cols.T, g)
        grad_x[sl] = _col2im(matmul(g, wmat.T), x[sl].shape)
    grad_b = grad_out.sum(axis=(0, 1, 2))
    return grad_x, grad_w.reshape(w.shape), grad_b


class PoolIndex(NamedTuple):
    """Winning cell (0..3, row-major in the 2x2 window) for every output element."""

    input_shape: tuple[int, ...]
    argmax: np.ndarray


def maxpool2x2_forward(x: Tensor) -> tuple[Tensor, PoolIndex]:
    if x.ndim != 4:
        raise DimensionError(f"pool input must be NHWC, got shape {x.shape}")
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise DimensionError(f"pool input {x.shape} smaller than the 2x2 window")
    ho, wo = h // 2, w // 2
    win = (
        x[:, : 2 * ho, : 2 * wo, :]
        .reshape(n, ho, 2, wo, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, ho, wo, c, 4)
    )
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, PoolIndex(x.shape, idx.astype(np.uint8))


def maxpool2x2_backward(index: PoolIndex, grad_out: Tensor) -> Tensor:
    n, h, w, c = index.input_shape
    ho, wo = h // 2, w // 2
    if grad_out.shape != (n, ho, wo, c) or index.argmax.shape != (n, ho, wo, c):
        raise ContractError(
            f"stale pool index: grad_out {grad_out.shape} vs recorded output {(n, ho, wo, c)}"
        )
    win = np.zeros((n, ho, wo, c, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, index.argmax[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    grad = np.zeros((n, h, w, c), dtype=grad_out.dtype)
    grad[:, : 2 * ho, : 2 * wo, :] = (
        win.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
    )
    return grad


def leaky_relu(x: Tensor, slope: float = DEFAULT_SLOPE) -> Tensor:
    if not slope > 0:
        raise DomainError("LeakyReLU slope must be positive")
    return np.where(x > 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(x: Tensor, grad_out: Tensor, slope: float = DEFAULT_SLOPE) -> Tensor:
    # subgradient at 0 is the slope
    return np.where(x > 0, grad_out, grad_out * grad_out.dtype.type(slope))


def dense_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or b.shape != (w.shape[1],):
        raise DimensionError(f"dense shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    return matmul(x, w) + b


def dense_backward(x: Tensor, w: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    if grad_out.shape != (x.shape[0], w.shape[1]):
        raise DimensionError(f"dense grad shape {grad_out.shape} does not match {(x.shape[0], w.shape[1])}")
    return matmul(grad_out, w.T), matmul(x.T, grad_out), grad_out.sum(axis=0)


def dropout_mask(shape, rate: float, gen: np.random.Generator, dtype=np.float32) -> Tensor:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    keep = gen.random(shape) >= rate
    return keep.astype(dtype) * dtype(1.0 / (1.0 - rate))


def dropout(x: Tensor, rate: float, train: bool, gen: Optional[np.random.Generator] = None) -> tuple[Tensor, Optional[Tensor]]:
    """Returns the output and the mask to reuse in backward (``None`` when identity)."""
    if not 0 <= rate < 1:
        raise DomainError("dropout rate must lie in [0, 1)")
    if not train or rate == 0:
        return x, None
    if gen is None:
        raise ContractError("training-mode dropout needs a random generator")
    mask = dropout_mask(x.shape, rate, gen, x.dtype.type)
    return x * mask, mask


def softmax(logits: Tensor) -> Tensor:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: Tensor, labels: Tensor) -> tuple[float, Tensor, Tensor]:
    """Mean categorical cross-entropy, probabilities and d(loss)/d(logits)."""
    if logits.shape != labels.shape or logits.ndim != 2:
        raise DimensionError(f"logits {logits.shape} vs labels {labels.shape}")
    if not (np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=1) == 1)):
        raise ContractError("labels must be one-hot rows")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    loss = float(-(logp * labels).sum() / n)
    grad = (probs - labels) / logits.dtype.type(n)
    return loss, probs, grad


# ---------------------------------------------------------------------------
# Model


def he_truncated_normal(shape, fan_in: int, gen: np.random.Generator, dtype) -> Tensor:
    """Normal truncated at two standard deviations, rescaled to variance 2/fan_in."""
    # 0.8796... is the std of a unit normal truncated to [-2, 2]
    std = np.sqrt(2.0 / fan_in) / 0.87962566103423978
    z = gen.standard_normal(shape)
    bad = np.abs(z) > 2
    while bad.any():
        z[bad] = gen.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2
    return (z * std).astype(dtype)


@dataclass
class _Cache:
    x: Optional[Tensor] = None
    aux: object = None


@dataclass
class Model:
    """Instantiated ModelSpec: named parameters, gradient buffers, caches."""

    spec: ModelSpec
    dtype: np.dtype = np.dtype(np.float32)
    params: dict[str, Tensor] = field(default_factory=dict)
    grads: dict[str, Tensor] = field(default_factory=dict)
    training: bool = False

    def __post_init__(self):
        self.dtype = np.dtype(self.dtype)
        shapes = self.spec.shape_trace()
        for spec, shape_in in zip(self.spec.layers, shapes):
            if spec.kind == "Conv2D":
                self._add(spec.name, (3, 3, shape_in[2], spec.filters))
            elif spec.kind == "Dense":
                self._add(spec.name, (shape_in[0], spec.units))
        self._caches: list[_Cache] = []
        self._probs: Optional[Tensor] = None

    def _add(self, name: str, wshape: tuple[int, ...]) -> None:
        if not name:
            raise BuildError("parameterised layers need a name")
        for key, shape in ((f"{name}.w", wshape), (f"{name}.b", (wshape[-1],))):
            if key in self.params:
                raise BuildError(f"duplicate parameter name {key}")
            self.params[key] = np.zeros(shape, dtype=self.dtype)
            self.grads[key] = np.zeros(shape, dtype=self.dtype)

    # -- parameters ---------------------------------------------------------

    def init(self, seed: int) -> "Model":
        """He-style truncated-normal weights, zero biases, keyed by ``seed``."""
        for i, (key, p) in enumerate(self.params.items()):
            if key.endswith(".w"):
                fan_in = int(np.prod(p.shape[:-1]))
                p[...] = he_truncated_normal(p.shape, fan_in, rngmod.stream(rngmod.INIT, seed, i), self.dtype)
            else:
                p[...] = 0
        return self

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0

    # -- passes -------------------------------------------------------------

    def forward(self, x: Tensor, train: bool = False, gen: Optional[np.random.Generator] = None) -> Tensor:
        """Class probabilities for a batch. Training mode caches activations."""
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise DimensionError(f"batch shape {x.shape} does not match model input {self.spec.input_shape}")
        self.training = train
        h = np.asarray(x, dtype=self.dtype)
        caches = []
        for spec in self.spec.layers:
            c = _Cache(x=h if train else None)
            kind = spec.kind
            if kind == "Conv2D":
                h = conv2d_forward(h, self.params[f"{spec.name}.w"], self.params[f"{spec.name}.b"])
            elif kind == "LeakyReLU":
                h = leaky_relu(h, spec.slope)
            elif kind == "MaxPool2D":
                h, c.aux = maxpool2x2_forward(h)
                c.x = None
            elif kind == "Flatten":
                c.aux = h.shape
                c.x = None
                h = h.reshape(h.shape[0], -1)
            elif kind == "Dense":
                h = dense_forward(h, self.params[f"{spec.name}.w"], self.params[f"{spec.name}.b"])
            elif kind == "Dropout":
                h, c.aux = dropout(h, spec.rate, train, gen)
                c.x = None
            elif kind == "SoftmaxOutput":
                c.x = h if train else None
                h = softmax(h)
            caches.append(c)
        self._caches = caches if train else []
        self._probs = h if train else None
        return h

    def backward(self, labels: Tensor) -> float:
        """Accumulate gradients of the mean cross-entropy; returns the loss."""
        if not self._caches:
            raise ContractError("backward requires a preceding training-mode forward")
        logits = self._caches[-1].x
        loss, _, grad = softmax_xent(logits, np.asarray(labels, dtype=self.dtype))
        for spec, c in zip(reversed(self.spec.layers[:-1]), reversed(self._caches[:-1])):
            kind = spec.kind
            if kind == "Conv2D":
                w = self.params[f"{spec.name}.w"]
                grad, gw, gb = conv2d_backward(c.x, w, grad)
                self.grads[f"{spec.name}.w"] += gw
                self.grads[f"{spec.name}.b"] += gb
            elif kind == "LeakyReLU":
                grad = leaky_relu_backward(c.x, grad, spec.slope)
            elif kind == "MaxPool2D":
                grad = maxpool2x2_backward(c.aux, grad)
            elif kind == "Flatten":
                grad = grad.reshape(c.aux)
            elif kind == "Dense":
                w = self.params[f"{spec.name}.w"]
                grad, gw, gb = dense_backward(c.x, w, grad)
                self.grads[f"{spec.name}.w"] += gw
                self.grads[f"{spec.name}.b"] += gb
            elif kind == "Dropout":
                if c.aux is not None:
                    grad = grad * c.aux
        self._caches = []
        self._probs = None
        return loss

    def predict(self, x: Tensor, batch_size: int = 32) -> Tensor:
        """Eval-mode probabilities, processed in batches."""
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)


def architecture_table(spec: ModelSpec) -> list[tuple[str, tuple[int, ...], int]]:
    """(layer label, output shape, parameter count) for every layer."""
    counts = dict(spec.layer_params())
    rows = [("input", tuple(spec.input_shape), 0)]
    for i, (layer, shape) in enumerate(zip(spec.layers, spec.shape_trace()[1:])):
        label = layer.name or f"{layer.kind.lower()}_{i}"
        rows.append((f"{label} ({layer.kind})", shape, counts.get(layer.name, 0)))
    return rows
