"""Small deterministic neural-network engine on flat float64 parameter vectors.

A network is a :class:`NetworkSpec` (input shape plus an ordered tuple of layer
descriptors). Parameters always live in one flat ``np.ndarray`` of length ``D``;
:class:`Layout` maps (layer, role) blocks onto offsets in that vector, so linear
combinations of whole networks are plain vector arithmetic.

Images are NCHW. A dense layer that receives a feature map flattens it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Input or layer shapes do not line up."""


class NonFiniteLossError(FloatingPointError):
    """Loss evaluated to inf/nan (typically a diverging run)."""


# ---------------------------------------------------------------------------
# layer descriptors


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int
    kind = "dense"


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    pad: int = 0
    kind = "conv2d"


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int | None = None
    kind = "maxpool"

    @property
    def step(self) -> int:
        return self.stride or self.kernel


@dataclass(frozen=True)
class ReLU:
    kind = "relu"


@dataclass(frozen=True)
class SoftmaxOutput:
    kind = "softmax"


Layer = Dense | Conv2d | MaxPool | ReLU | SoftmaxOutput

_LAYER_TYPES = {cls.kind: cls for cls in (Dense, Conv2d, MaxPool, ReLU, SoftmaxOutput)}


def layer_to_dict(layer: Layer) -> dict:
    d = {"kind": layer.kind}
    d.update(layer.__dict__)
    return d


def layer_from_dict(d: Mapping) -> Layer:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _LAYER_TYPES:
        raise ValueError(f"unknown layer kind {kind!r}")
    return _LAYER_TYPES[kind](**d)


@dataclass(frozen=True)
class Block:
    layer: int
    role: str  # "weight" | "bias"
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


@dataclass(frozen=True)
class Layout:
    blocks: tuple[Block, ...]

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    def block(self, layer: int, role: str) -> Block:
        for b in self.blocks:
            if b.layer == layer and b.role == role:
                return b
        raise KeyError((layer, role))

    def to_list(self) -> list[dict]:
        return [
            {"layer": b.layer, "role": b.role, "shape": list(b.shape), "offset": b.offset}
            for b in self.blocks
        ]

    @classmethod
    def from_list(cls, items: Iterable[Mapping]) -> "Layout":
        return cls(tuple(Block(int(i["layer"]), str(i["role"]), tuple(i["shape"]), int(i["offset"])) for i in items))


@dataclass(frozen=True)
class NetworkSpec:
    """Input shape (per sample, without batch axis) plus ordered layers.

    The last layer must be :class:`SoftmaxOutput`; it is the only one.
    """

    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()  # validates

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample output shape of every layer."""
        if not self.layers or not isinstance(self.layers[-1], SoftmaxOutput):
            raise ShapeError("network must end with exactly one softmax-output layer")
        if any(isinstance(l, SoftmaxOutput) for l in self.layers[:-1]):
            raise ShapeError("softmax-output may only appear as the last layer")
        shape = self.input_shape
        out = []
        for i, layer in enumerate(self.layers):
            shape = _out_shape(i, layer, shape)
            out.append(shape)
        if len(shape) != 1:
            raise ShapeError("softmax-output expects a flat (classes,) input")
        return out

    @property
    def n_classes(self) -> int:
        return self.shapes()[-1][0]

    def layout(self) -> Layout:
        blocks = []
        offset = 0
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                shapes = [("weight", (layer.n_out, layer.n_in)), ("bias", (layer.n_out,))]
            elif isinstance(layer, Conv2d):
                shapes = [
                    ("weight", (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)),
                    ("bias", (layer.out_ch,)),
                ]
            else:
                continue
            for role, shape in shapes:
                b = Block(i, role, shape, offset)
                blocks.append(b)
                offset += b.size
        return Layout(tuple(blocks))

    @property
    def n_params(self) -> int:
        return self.layout().size

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [layer_to_dict(l) for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(tuple(d["input_shape"]), tuple(layer_from_dict(l) for l in d["layers"]), d.get("name", ""))


def _out_shape(i: int, layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, Dense):
        n = math.prod(shape)
        if n != layer.n_in:
            raise ShapeError(f"layer {i} (dense): expects {layer.n_in} inputs, got shape {shape}")
        return (layer.n_out,)
    if isinstance(layer, Conv2d):
        if len(shape) != 3 or shape[0] != layer.in_ch:
            raise ShapeError(f"layer {i} (conv2d): expects ({layer.in_ch}, H, W), got {shape}")
        h = (shape[1] + 2 * layer.pad - layer.kernel) // layer.stride + 1
        w = (shape[2] + 2 * layer.pad - layer.kernel) // layer.stride + 1
        if h < 1 or w < 1:
            raise ShapeError(f"layer {i} (conv2d): kernel larger than padded input {shape}")
        return (layer.out_ch, h, w)
    if isinstance(layer, MaxPool):
        if len(shape) != 3:
            raise ShapeError(f"layer {i} (maxpool): expects (C, H, W), got {shape}")
        h = (shape[1] - layer.kernel) // layer.step + 1
        w = (shape[2] - layer.kernel) // layer.step + 1
        if h < 1 or w < 1:
            raise ShapeError(f"layer {i} (maxpool): window larger than input {shape}")
        return (shape[0], h, w)
    return shape


def mlp(sizes: Sequence[int], name: str = "") -> NetworkSpec:
    """Dense/ReLU stack, e.g. ``mlp([2, 16, 16, 2])``."""
    layers: list[Layer] = []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b))
        if k < len(sizes) - 2:
            layers.append(ReLU())
    layers.append(SoftmaxOutput())
    return NetworkSpec((sizes[0],), tuple(layers), name)


# ---------------------------------------------------------------------------
# flatten / unflatten


def unflatten(vector: np.ndarray, layout: Layout) -> dict[tuple[int, str], np.ndarray]:
    """Views into ``vector`` keyed by (layer index, role)."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (layout.size,):
        raise ShapeError(f"parameter vector has length {vector.size}, layout expects {layout.size}")
    return {(b.layer, b.role): vector[b.slice].reshape(b.shape) for b in layout.blocks}


def flatten(params: Mapping[tuple[int, str], np.ndarray], layout: Layout) -> np.ndarray:
    out = np.empty(layout.size, dtype=np.float64)
    for b in layout.blocks:
        arr = np.asarray(params[(b.layer, b.role)], dtype=np.float64)
        if arr.shape != b.shape:
            raise ShapeError(f"block {(b.layer, b.role)} has shape {arr.shape}, expected {b.shape}")
        out[b.slice] = arr.ravel()
    return out


# ---------------------------------------------------------------------------
# initialization


def init_params(net: NetworkSpec, seed: int, variance_scale: float = 1.0) -> np.ndarray:
    """He-normal weights with std ``variance_scale * sqrt(2 / fan_in)``; zero biases."""
    if not variance_scale > 0:
        raise ValueError(f"variance_scale must be > 0, got {variance_scale}")
    rng = np.random.default_rng(seed)
    layout = net.layout()
    w = np.zeros(layout.size)
    for b in layout.blocks:
        if b.role != "weight":
            continue
        fan_in = math.prod(b.shape[1:])
        std = variance_scale * math.sqrt(2.0 / fan_in)
        w[b.slice] = rng.normal(0.0, std, size=b.size)
    return w


# ---------------------------------------------------------------------------
# forward / backward


def _conv_cols(x: np.ndarray, layer: Conv2d) -> tuple[np.ndarray, tuple[int, int]]:
    if layer.pad:
        p = layer.pad
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    k, s = layer.kernel, layer.stride
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    return cols, (ho, wo)


def _conv_forward(x, w, bias, layer: Conv2d):
    cols, (ho, wo) = _conv_cols(x, layer)
    out = cols @ w.reshape(layer.out_ch, -1).T + bias
    out = out.reshape(x.shape[0], ho, wo, layer.out_ch).transpose(0, 3, 1, 2)
    return out, (cols, x.shape, ho, wo)


def _conv_backward(dout, w, layer: Conv2d, cache):
    cols, xshape, ho, wo = cache
    b = xshape[0]
    k, s, p = layer.kernel, layer.stride, layer.pad
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, layer.out_ch)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(layer.out_ch, -1)).reshape(b, ho, wo, layer.in_ch, k, k)
    dxp = np.zeros((b, layer.in_ch, xshape[2] + 2 * p, xshape[3] + 2 * p))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, p : p + xshape[2], p : p + xshape[3]] if p else dxp
    return dx, dw, db


def _pool_forward(x, layer: MaxPool):
    k, s = layer.kernel, layer.step
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    b, c, ho, wo = win.shape[:4]
    flat = win.reshape(b, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def _pool_backward(dout, layer: MaxPool, cache):
    xshape, arg = cache
    k, s = layer.kernel, layer.step
    ho, wo = dout.shape[2:]
    dx = np.zeros(xshape)
    for idx in range(k * k):
        i, j = divmod(idx, k)
        dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.where(arg == idx, dout, 0.0)
    return dx


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _check_batch(net: NetworkSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1:] != net.input_shape:
        raise ShapeError(
            f"layer 0 ({net.layers[0].kind}): batch shape {batch.shape[1:]} does not match "
            f"network input {net.input_shape}"
        )
    return batch


def _run(net: NetworkSpec, params: np.ndarray, batch: np.ndarray, keep_cache: bool, capture: frozenset):
    blocks = unflatten(params, net.layout())
    x = _check_batch(net, batch)
    caches = []
    acts: dict[int, np.ndarray] = {}
    logits = None
    for i, layer in enumerate(net.layers):
        cache = None
        if isinstance(layer, Dense):
            xin = x.reshape(x.shape[0], -1)
            cache = (xin, x.shape)
            x = xin @ blocks[(i, "weight")].T + blocks[(i, "bias")]
        elif isinstance(layer, Conv2d):
            x, cache = _conv_forward(x, blocks[(i, "weight")], blocks[(i, "bias")], layer)
        elif isinstance(layer, MaxPool):
            x, cache = _pool_forward(x, layer)
        elif isinstance(layer, ReLU):
            cache = x > 0
            x = np.where(cache, x, 0.0)
        else:  # softmax output: logits pass through, probabilities only when captured
            logits = x
            if i in capture:
                acts[i] = softmax(x)
            break
        if keep_cache:
            caches.append(cache)
        if i in capture:
            acts[i] = x
    return logits, acts, caches, blocks


def forward(
    net: NetworkSpec, params: np.ndarray, batch: np.ndarray, capture: Iterable[int] = ()
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Return ``(logits, activations)``.

    ``activations[i]`` is the output of layer ``i`` (post-ReLU for ReLU layers,
    class probabilities for the softmax-output layer).
    """
    capture = frozenset(int(c) for c in capture)
    bad = [c for c in capture if not 0 <= c < len(net.layers)]
    if bad:
        raise IndexError(f"capture indices out of range: {sorted(bad)}")
    with np.errstate(over="ignore", invalid="ignore"):
        logits, acts, _, _ = _run(net, params, batch, False, capture)
    return logits, acts


@dataclass(frozen=True)
class SoftTarget:
    """Soft-target cross-entropy at temperature ``T``; labels are probability rows."""

    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


HARD = "cross-entropy-hard"


def _loss_and_dlogits(logits: np.ndarray, labels: np.ndarray, loss_kind) -> tuple[float, np.ndarray]:
    n = logits.shape[0]
    if isinstance(loss_kind, SoftTarget):
        t = loss_kind.temperature
        target = np.asarray(labels, dtype=np.float64)
        if target.shape != logits.shape:
            raise ShapeError(f"soft targets shape {target.shape} != logits shape {logits.shape}")
        logp = log_softmax(logits / t)
        loss = -(target * logp).sum() / n
        dlogits = (np.exp(logp) - target) / (t * n)
    elif loss_kind == HARD:
        labels = np.asarray(labels)
        if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
            raise ShapeError(f"hard labels must be {n} class indices, got {labels.dtype} {labels.shape}")
        logp = log_softmax(logits)
        loss = -logp[np.arange(n), labels].sum() / n
        dlogits = np.exp(logp)
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return float(loss), dlogits


def loss_and_grad(
    net: NetworkSpec, params: np.ndarray, batch: np.ndarray, labels: np.ndarray, loss_kind=HARD
) -> tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient with respect to the flat parameter vector."""
    with np.errstate(over="ignore", invalid="ignore"):
        logits, _, caches, blocks = _run(net, params, batch, True, frozenset())
        loss, d = _loss_and_dlogits(logits, labels, loss_kind)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"loss is {loss}")
    layout = net.layout()
    grad = np.zeros(layout.size)
    gblocks = unflatten(grad, layout)
    for i in range(len(caches) - 1, -1, -1):
        layer, cache = net.layers[i], caches[i]
        if isinstance(layer, Dense):
            xin, xshape = cache
            w = blocks[(i, "weight")]
            gblocks[(i, "weight")][...] = d.T @ xin
            gblocks[(i, "bias")][...] = d.sum(axis=0)
            if i == 0:
                break
            d = (d @ w).reshape(xshape)
        elif isinstance(layer, Conv2d):
            dx, dw, db = _conv_backward(d, blocks[(i, "weight")], layer, cache)
            gblocks[(i, "weight")][...] = dw
            gblocks[(i, "bias")][...] = db
            d = dx
        elif isinstance(layer, MaxPool):
            d = _pool_backward(d, layer, cache)
        elif isinstance(layer, ReLU):
            d = np.where(cache, d, 0.0)
    return loss, grad


def evaluate(
    net: NetworkSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray, batch_size: int = 1000
) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a full split. Non-finite loss is returned as inf."""
    total, correct = 0.0, 0
    n = len(x)
    with np.errstate(over="ignore", invalid="ignore"):
        for lo in range(0, n, batch_size):
            logits, _ = forward(net, params, x[lo : lo + batch_size])
            yb = y[lo : lo + batch_size]
            total += float(-log_softmax(logits)[np.arange(len(yb)), yb].sum())
            correct += int((logits.argmax(axis=1) == yb).sum())
    loss = total / n
    return (loss if math.isfinite(loss) else math.inf), correct / n


# ---------------------------------------------------------------------------
# optimizers


@dataclass(frozen=True)
class FreezeMask:
    """Set of frozen (layer, role) blocks; frozen entries never move."""

    blocks: frozenset = field(default_factory=frozenset)

    @classmethod
    def of_layers(cls, layout: Layout, layers: Iterable[int]) -> "FreezeMask":
        layers = set(layers)
        return cls(frozenset((b.layer, b.role) for b in layout.blocks if b.layer in layers))

    def vector(self, layout: Layout) -> np.ndarray:
        """Boolean array, True where the parameter is frozen."""
        m = np.zeros(layout.size, dtype=bool)
        for b in layout.blocks:
            if (b.layer, b.role) in self.blocks:
                m[b.slice] = True
        return m


def dense_stack_layers(net: NetworkSpec) -> list[int]:
    """Indices of the trailing run of dense layers (ReLUs between them allowed)."""
    out: list[int] = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if isinstance(layer, Dense):
            out.append(i)
        elif isinstance(layer, (Conv2d, MaxPool)):
            break
    return sorted(out)


@dataclass
class OptimizerState:
    kind: str  # "sgd-momentum" | "adam"
    size: int
    momentum: float = 0.9
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    buf1: np.ndarray = None  # velocity (sgd) / first moment (adam)
    buf2: np.ndarray = None  # second moment (adam only)

    def __post_init__(self):
        if self.kind not in ("sgd-momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("adam hyperparameters out of range")
        if self.buf1 is None:
            self.buf1 = np.zeros(self.size)
        if self.buf2 is None and self.kind == "adam":
            self.buf2 = np.zeros(self.size)


def optimizer_step(
    state: OptimizerState, params: np.ndarray, grad: np.ndarray, lr: float, mask: np.ndarray | None = None
) -> np.ndarray:
    """Apply one update and return new parameters; ``state`` buffers are updated in place.

    Weight decay is L2 added to the gradient. SGD is heavy-ball
    ``v <- mu*v + g; w <- w - lr*v``. ``mask`` is a boolean frozen-entry vector
    (see :meth:`FreezeMask.vector`); frozen entries keep params and buffers.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    if params.shape != (state.size,) or grad.shape != (state.size,) or state.buf1.shape != (state.size,):
        raise ShapeError(
            f"optimizer state size {state.size} does not match params {params.shape} / grad {grad.shape}"
        )
    live = slice(None) if mask is None else ~mask
    g = grad[live] + state.weight_decay * params[live]
    new = params.copy()
    state.step_count += 1
    if state.kind == "sgd-momentum":
        v = state.momentum * state.buf1[live] + g
        state.buf1[live] = v
        new[live] = params[live] - lr * v
    else:
        m = state.beta1 * state.buf1[live] + (1 - state.beta1) * g
        s = state.beta2 * state.buf2[live] + (1 - state.beta2) * g * g
        state.buf1[live] = m
        state.buf2[live] = s
        mhat = m / (1 - state.beta1**state.step_count)
        shat = s / (1 - state.beta2**state.step_count)
        new[live] = params[live] - lr * mhat / (np.sqrt(shat) + state.eps)
    return new


def representation_layers(net: NetworkSpec) -> list[int]:
    """Layers whose outputs count as representations for similarity analysis.

    Every ReLU output, plus dense layers whose output is not rectified (linear
    layers feeding another dense layer, and the logit layer).
    """
    out = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, ReLU):
            out.append(i)
        elif isinstance(layer, Dense) and not isinstance(net.layers[i + 1], ReLU):
            out.append(i)
    return out


def layer_label(net: NetworkSpec, i: int) -> str:
    layer = net.layers[i]
    if isinstance(layer, ReLU):
        j = i - 1
        while j >= 0 and isinstance(net.layers[j], (MaxPool, ReLU)):
            j -= 1
        base = net.layers[j].kind if j >= 0 else "input"
        return f"{i}:relu({'fc' if base == 'dense' else 'conv'})"
    return f"{i}:{'fc' if layer.kind == 'dense' else layer.kind}"
