"""Independent reference implementations used to check the fast paths.

Everything here deliberately avoids the main code paths: forward passes are
re-derived with explicit loops, gradients come from central finite
differences, and the metrics are evaluated by brute-force double loops.  The
command-line ``oracle`` subcommands wrap these checks.
"""

from __future__ import annotations

import math

import numpy as np

from . import nn


def naive_forward(stack: nn.LayerStack, x: np.ndarray, lo: int = 0, hi: int | None = None):
    """Looped re-implementation of the stack forward pass."""
    hi = stack.layer_count if hi is None else hi
    out = np.array(x, dtype=np.float64)
    for layer in stack.layers[lo:hi]:
        if isinstance(layer, nn.Dense):
            nxt = np.zeros((out.shape[0], layer.out_width))
            for i in range(out.shape[0]):
                for j in range(layer.out_width):
                    s = 0.0
                    for k in range(layer.in_width):
                        s += out[i, k] * layer.w[k, j]
                    if layer.has_bias:
                        s += layer.b[j]
                    nxt[i, j] = s
            out = nxt
        elif isinstance(layer, nn.Relu):
            out = np.array([[v if v > 0 else 0.0 for v in row] for row in out])
        elif isinstance(layer, nn.SoftmaxCrossEntropy):
            nxt = np.zeros_like(out)
            for i in range(out.shape[0]):
                m = max(out[i])
                exps = [math.exp(v - m) for v in out[i]]
                z = sum(exps)
                nxt[i] = [e / z for e in exps]
            out = nxt
        else:
            raise TypeError(f"unknown layer {layer!r}")
    return out


def scalar_cross_entropy(logits: np.ndarray, labels) -> float:
    """Per-sample softmax cross-entropy via plain floats, averaged."""
    total = 0.0
    for row, y in zip(np.asarray(logits, dtype=np.float64), labels):
        m = max(row)
        z = sum(math.exp(v - m) for v in row)
        total += -(row[y] - m - math.log(z))
    return total / len(labels)


def finite_difference_check(
    stack: nn.LayerStack,
    x: np.ndarray,
    labels: np.ndarray,
    epsilon: float = 1e-5,
):
    """Worst relative error of analytic parameter gradients vs central
    finite differences of the cross-entropy loss.

    The stack's trailing softmax head, if present, is excluded from the
    differentiated range since the loss is taken on logits.
    """
    hi = stack.layer_count
    if hi and isinstance(stack.layers[-1], nn.SoftmaxCrossEntropy):
        hi -= 1

    def loss_value() -> float:
        logits, _ = nn.forward(stack, x, 0, hi)
        loss, _ = nn.loss_and_grad(logits, labels)
        return loss

    logits, tape = nn.forward(stack, x, 0, hi)
    _, dlogits = nn.loss_and_grad(logits, labels)
    analytic, _ = nn.backward(stack, tape, dlogits)

    worst = 0.0
    params = stack.params(0, hi)
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + epsilon
            up = loss_value()
            flat[i] = keep - epsilon
            down = loss_value()
            flat[i] = keep
            fd = (up - down) / (2 * epsilon)
            scale = max(abs(fd), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(fd - gflat[i]) / scale)
    return worst


def brute_backward_transfer(acc: np.ndarray) -> float:
    """Double-loop evaluation of the backward-transfer formula."""
    rounds, labels = acc.shape
    total = 0.0
    for l in range(labels):
        peak = -math.inf
        for r in range(rounds - 1):
            if acc[r][l] > peak:
                peak = acc[r][l]
        total += peak - acc[rounds - 1][l]
    return total / labels


def brute_performance_gap(row) -> float:
    """Double-loop evaluation of the per-round performance gap."""
    labels = len(row)
    total = 0.0
    for l in range(labels):
        worst = 0.0
        for k in range(labels):
            d = abs(min(0.0, row[l] - row[k]))
            if d > worst:
                worst = d
        total += worst
    return total / labels
