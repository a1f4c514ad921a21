"""Minimal dense neural-network core on float64 numpy arrays.

A model is a :class:`LayerStack`, an ordered list of layers that can be
evaluated (and differentiated) over any consecutive sub-range.  That is the
property the rest of the simulator relies on: a stack can be cut at arbitrary
boundaries and the pieces still compose bit-exactly.

Batches are plain ``(rows, cols)`` float64 arrays.  Every operation checks its
outputs for NaN/Inf and raises instead of propagating garbage.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


def as_batch(x) -> np.ndarray:
    """Coerce to a 2-D float64 batch, validating shape and finiteness."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D batch, got shape {arr.shape}")
    _require_finite(arr, "input batch")
    return arr


class Dense:
    """Fully-connected layer: y = x @ w + b."""

    kind = "dense"

    def __init__(self, in_width: int, out_width: int, has_bias: bool = True):
        if in_width < 1 or out_width < 1:
            raise ValueError("dense widths must be positive")
        self.in_width = in_width
        self.out_width = out_width
        self.has_bias = has_bias
        self.w = np.zeros((in_width, out_width))
        self.b = np.zeros(out_width) if has_bias else None

    def init(self, rng: np.random.Generator) -> None:
        # Uniform scaled by fan-in; biases start at zero.
        bound = 1.0 / np.sqrt(self.in_width)
        self.w = rng.uniform(-bound, bound, size=(self.in_width, self.out_width))
        if self.has_bias:
            self.b = np.zeros(self.out_width)

    def params(self) -> list[np.ndarray]:
        return [self.w, self.b] if self.has_bias else [self.w]

    def set_params(self, params: list[np.ndarray]) -> None:
        w = params[0]
        if w.shape != self.w.shape:
            raise ValueError(f"weight shape {w.shape} != {self.w.shape}")
        self.w = np.asarray(w, dtype=np.float64)
        if self.has_bias:
            b = params[1]
            if b.shape != self.b.shape:
                raise ValueError(f"bias shape {b.shape} != {self.b.shape}")
            self.b = np.asarray(b, dtype=np.float64)

    @property
    def param_count(self) -> int:
        return self.w.size + (self.b.size if self.has_bias else 0)

    def forward(self, x: np.ndarray):
        if x.shape[1] != self.in_width:
            raise ValueError(f"input width {x.shape[1]} != dense in_width {self.in_width}")
        y = x @ self.w
        if self.has_bias:
            y = y + self.b
        return y, x

    def backward(self, grad: np.ndarray, cache):
        x = cache
        dw = x.T @ grad
        dx = grad @ self.w.T
        if self.has_bias:
            return [dw, grad.sum(axis=0)], dx
        return [dw], dx

    def copy(self) -> "Dense":
        out = Dense(self.in_width, self.out_width, self.has_bias)
        out.w = self.w.copy()
        out.b = self.b.copy() if self.has_bias else None
        return out


class Relu:
    kind = "relu"
    param_count = 0

    def init(self, rng):
        pass

    def params(self) -> list[np.ndarray]:
        return []

    def set_params(self, params) -> None:
        pass

    def forward(self, x: np.ndarray):
        return np.maximum(x, 0.0), x

    def backward(self, grad: np.ndarray, cache):
        x = cache
        return [], grad * (x > 0)

    def copy(self) -> "Relu":
        return Relu()


class SoftmaxCrossEntropy:
    """Classifier head: forward yields class probabilities.

    During training the engines stop just before this layer and feed the
    logits to :func:`loss_and_grad`; the head itself is only evaluated for
    inference (probabilities) or when differentiating a range that happens to
    include it, in which case the full softmax Jacobian is applied.
    """

    kind = "softmax_ce"
    param_count = 0

    def init(self, rng):
        pass

    def params(self) -> list[np.ndarray]:
        return []

    def set_params(self, params) -> None:
        pass

    def forward(self, x: np.ndarray):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return p, p

    def backward(self, grad: np.ndarray, cache):
        p = cache
        inner = (grad * p).sum(axis=1, keepdims=True)
        return [], p * (grad - inner)

    def copy(self) -> "SoftmaxCrossEntropy":
        return SoftmaxCrossEntropy()


LAYER_KINDS = {"dense": Dense, "relu": Relu, "softmax_ce": SoftmaxCrossEntropy}


class LayerStack:
    """Ordered list of layers; the unit that gets split into model parts."""

    def __init__(self, layers: list):
        self.layers = list(layers)
        self._validate_widths()

    def _validate_widths(self) -> None:
        width = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if width is not None and width != layer.in_width:
                    raise ValueError(
                        f"layer {i}: dense in_width {layer.in_width} incompatible with "
                        f"preceding width {width}"
                    )
                width = layer.out_width

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    def params(self, lo: int = 0, hi: int | None = None) -> list[np.ndarray]:
        """Live parameter arrays of layers [lo, hi), in layer order."""
        hi = self.layer_count if hi is None else hi
        out = []
        for layer in self.layers[lo:hi]:
            out.extend(layer.params())
        return out

    def param_copies(self, lo: int = 0, hi: int | None = None) -> list[np.ndarray]:
        return [p.copy() for p in self.params(lo, hi)]

    def set_params(self, params: list[np.ndarray], lo: int = 0, hi: int | None = None) -> None:
        hi = self.layer_count if hi is None else hi
        it = iter(params)
        for layer in self.layers[lo:hi]:
            n = len(layer.params())
            layer.set_params([next(it) for _ in range(n)])
        leftover = sum(1 for _ in it)
        if leftover:
            raise ValueError(f"{leftover} unused parameter arrays in set_params")

    def subrange(self, lo: int, hi: int | None = None) -> "LayerStack":
        """View over layers [lo, hi); layer objects are shared, not copied."""
        hi = self.layer_count if hi is None else hi
        return LayerStack(self.layers[lo:hi])

    def copy(self) -> "LayerStack":
        return LayerStack([layer.copy() for layer in self.layers])

    def init(self, rng: np.random.Generator) -> "LayerStack":
        for layer in self.layers:
            layer.init(rng)
        return self


def concat(*stacks: LayerStack) -> LayerStack:
    layers = []
    for s in stacks:
        layers.extend(s.layers)
    return LayerStack(layers)


def mlp(in_dim: int, hidden: tuple[int, ...], labels: int, rng=None) -> LayerStack:
    """Dense/ReLU classifier stack ending in a softmax head layer.

    Layout for hidden=(h1, h2): Dense(in,h1) ReLU Dense(h1,h2) ReLU
    Dense(h2,labels) SoftmaxCrossEntropy.
    """
    dims = [in_dim, *hidden]
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        layers.extend([Dense(a, b), Relu()])
    layers.append(Dense(dims[-1], labels))
    layers.append(SoftmaxCrossEntropy())
    stack = LayerStack(layers)
    if rng is not None:
        stack.init(rng)
    return stack


@dataclass(frozen=True)
class OptimizerConfig:
    """SGD with per-round multiplicative learning-rate decay."""

    learning_rate: float = 0.05
    decay: float = 0.993
    min_lr: float = 0.005
    batch_size: int = 64

    def __post_init__(self):
        if not (0 < self.min_lr <= self.learning_rate):
            raise ValueError("need 0 < min_lr <= learning_rate")
        if not (0 < self.decay <= 1):
            raise ValueError("need 0 < decay <= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lr_at(self, round_index: int) -> float:
        return max(self.min_lr, self.learning_rate * self.decay**round_index)


@dataclass
class Tape:
    """Cached intermediates from one forward pass over a layer range."""

    lo: int
    hi: int
    kinds: tuple[str, ...]
    caches: list = field(repr=False, default_factory=list)


def forward(stack: LayerStack, x: np.ndarray, lo: int = 0, hi: int | None = None):
    """Forward propagate through layers [lo, hi); returns (output, tape)."""
    hi = stack.layer_count if hi is None else hi
    if not (0 <= lo <= hi <= stack.layer_count):
        raise ValueError(f"invalid layer range [{lo}, {hi}) for {stack.layer_count} layers")
    out = as_batch(x)
    caches = []
    for layer in stack.layers[lo:hi]:
        out, cache = layer.forward(out)
        caches.append(cache)
    _require_finite(out, "forward output")
    return out, Tape(lo, hi, tuple(l.kind for l in stack.layers[lo:hi]), caches)


def backward(stack: LayerStack, tape: Tape, upstream: np.ndarray):
    """Backward propagate through the range recorded on the tape.

    Returns (param_grads, input_grad) where param_grads aligns with
    ``stack.params(tape.lo, tape.hi)``.
    """
    kinds = tuple(l.kind for l in stack.layers[tape.lo : tape.hi])
    if kinds != tape.kinds or len(tape.caches) != len(kinds):
        raise ValueError("tape does not match the given stack range")
    grad = np.asarray(upstream, dtype=np.float64)
    grads_rev = []
    for layer, cache in zip(reversed(stack.layers[tape.lo : tape.hi]), reversed(tape.caches)):
        layer_grads, grad = layer.backward(grad, cache)
        grads_rev.extend(reversed(layer_grads))
    _require_finite(grad, "input gradient")
    param_grads = list(reversed(grads_rev))
    for g in param_grads:
        _require_finite(g, "parameter gradient")
    return param_grads, grad


def loss_and_grad(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over softmax of the logits, and its logit gradient.

    The gradient is for the mean loss, so its rows sum to zero and SGD steps
    are invariant to how a batch is split.
    """
    logits = as_batch(logits)
    labels = np.asarray(labels)
    n, width = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= width:
        raise ValueError(f"label out of range [0, {width})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    _require_finite(grad, "logit gradient")
    return float(loss), grad


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float, l2_lambda: float = 0.0):
    """One SGD step: w' = w - lr * (g + l2_lambda * w). Pure; returns new arrays."""
    if lr <= 0:
        raise ValueError("lr must be > 0")
    if l2_lambda < 0:
        raise ValueError("l2_lambda must be >= 0")
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    out = []
    for w, g in zip(params, grads):
        if w.shape != g.shape:
            raise ValueError(f"shape mismatch {w.shape} vs {g.shape}")
        out.append(w - lr * (g + l2_lambda * w))
    return out


def state_hash(params: list[np.ndarray]) -> str:
    """sha256 over shapes and raw bytes of a parameter list."""
    h = hashlib.sha256()
    for p in params:
        h.update(str(p.shape).encode())
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


# Checkpoint format: versioned JSON holding one or more named stacks. json
# floats round-trip bit-exactly (repr-based), which the tests pin down.

CHECKPOINT_VERSION = 1


def _layer_to_dict(layer) -> dict:
    d = {"kind": layer.kind}
    if isinstance(layer, Dense):
        d["in_width"] = layer.in_width
        d["out_width"] = layer.out_width
        d["has_bias"] = layer.has_bias
        d["w"] = layer.w.tolist()
        if layer.has_bias:
            d["b"] = layer.b.tolist()
    return d


def _layer_from_dict(d: dict):
    kind = d["kind"]
    if kind == "dense":
        layer = Dense(d["in_width"], d["out_width"], d["has_bias"])
        layer.w = np.asarray(d["w"], dtype=np.float64).reshape(layer.w.shape)
        if layer.has_bias:
            layer.b = np.asarray(d["b"], dtype=np.float64).reshape(layer.b.shape)
        return layer
    if kind in LAYER_KINDS:
        return LAYER_KINDS[kind]()
    raise ValueError(f"unknown layer kind {kind!r}")


def stacks_to_json(parts: dict[str, LayerStack]) -> str:
    doc = {
        "format": "sflsim-checkpoint",
        "version": CHECKPOINT_VERSION,
        "stacks": {
            name: [_layer_to_dict(layer) for layer in stack.layers]
            for name, stack in parts.items()
        },
    }
    return json.dumps(doc, sort_keys=True)


def stacks_from_json(text: str) -> dict[str, LayerStack]:
    doc = json.loads(text)
    if doc.get("format") != "sflsim-checkpoint":
        raise ValueError("not a checkpoint document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    return {
        name: LayerStack([_layer_from_dict(d) for d in layers])
        for name, layers in doc["stacks"].items()
    }


def save_checkpoint(parts: dict[str, LayerStack], path) -> None:
    with open(path, "w") as f:
        f.write(stacks_to_json(parts))


def load_checkpoint(path) -> dict[str, LayerStack]:
    with open(path) as f:
        return stacks_from_json(f.read())
