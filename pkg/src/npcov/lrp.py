"""Relevance propagation: decompose one logit over every layer's neurons.

The predicted (or requested) class logit is pushed backward layer by
layer. Relu passes relevance through unchanged, maxpool routes it to
the winning cell (ties to the lowest input index), and the parametric
step redistributes proportionally to signed input contributions with a
sign-matched stabilizer in the denominator ("epsilon" rule), or to
positive contributions only ("zplus" rule, behind a flag).

Mass absorbed by bias terms and stabilizers is dropped from the flow
but reported per layer, so per-layer sums can be reconciled against the
origin logit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import ShapeError
from .model import Model, layer_contexts

EPS_DEFAULT = 1e-6


@dataclass
class RelevanceTrace:
    """Per-coverage-layer neuron relevances for one input."""
    relevances: list[np.ndarray]   # float64 vectors, one per coverage layer
    origin_logit: float            # the logit that was decomposed
    target_class: int
    absorbed_above: list[float]    # mass lost to bias/stabilizer above each layer
    rule: str

    def layer_sums(self) -> list[float]:
        return [float(r.sum()) for r in self.relevances]


def _neuron_sums(r: np.ndarray) -> np.ndarray:
    """Per-neuron relevance: channel spatial sums for maps."""
    if r.ndim == 3:
        return r.sum(axis=(1, 2))
    return r.copy()


def _epsilon_dense(r, a, w, z, eps):
    denom = z + eps * np.sign(z)
    s = np.divide(r, denom, out=np.zeros_like(r), where=denom != 0)
    return a * (w.T @ s)


def _epsilon_conv(r, a, layer, z, eps):
    denom = z + eps * np.sign(z)
    s = np.divide(r, denom, out=np.zeros_like(r), where=denom != 0)
    c = tensor.conv2d_input_grad(s, layer.weight, a.shape[1:],
                                 stride=layer.stride, padding=layer.padding)
    return a * c


def _zplus_dense(r, a, w, b):
    zp = np.maximum(w * a[None, :], 0.0)
    denom = zp.sum(axis=1) + np.maximum(b, 0.0)
    s = np.divide(r, denom, out=np.zeros_like(r), where=denom != 0)
    return zp.T @ s


def _zplus_conv(r, a, layer):
    k, cin, kh, kw = layer.weight.shape
    cols = tensor.im2col(a.astype(np.float32), kh, kw, layer.stride,
                         layer.padding).astype(np.float64)
    wmat = layer.weight.reshape(k, -1).astype(np.float64)
    zp = np.maximum(wmat[:, :, None] * cols[None, :, :], 0.0)  # (K, C*kh*kw, L)
    denom = zp.sum(axis=1) + np.maximum(layer.bias, 0.0).astype(np.float64)[:, None]
    rf = r.reshape(k, -1)
    s = np.divide(rf, denom, out=np.zeros_like(rf), where=denom != 0)
    dcols = (zp * s[:, None, :]).sum(axis=0)
    h, w_ = a.shape[1:]
    return tensor.col2im(dcols, cin, h, w_, kh, kw, layer.stride, layer.padding)


def relevance(m: Model, x, target: int | None = None, rule: str = "epsilon",
              eps: float = EPS_DEFAULT) -> RelevanceTrace:
    """Backward relevance sweep for one input. Runs on the unmasked network."""
    if rule not in ("epsilon", "zplus"):
        raise ValueError(f"unknown rule {rule!r}")
    trace, ctxs = layer_contexts(m, x)
    if target is None:
        target = trace.predicted_class
    if not 0 <= target < m.class_count:
        raise ShapeError(f"target class {target} out of range for {m.class_count} classes")
    origin = float(trace.logits[target])

    r = np.zeros(m.class_count, dtype=np.float64)
    r[target] = origin
    recorded: list[np.ndarray] = []
    absorbed: list[float] = []
    absorbed_so_far = 0.0
    n_layers = len(m.layers)

    for i in range(n_layers - 1, -1, -1):
        layer, ctx = m.layers[i], ctxs[i]
        r = r.reshape(ctx["map_shape"])
        if i < n_layers - 1:
            recorded.append(_neuron_sums(r).astype(np.float64))
            absorbed.append(absorbed_so_far)
        if "maxpool2d" in ctx["fused"]:
            r = tensor.maxpool2d_route(r, ctx["pool_idx"], ctx["pool_in_hw"])
        before = float(r.sum())
        a = ctx["input"].astype(np.float64)
        z = ctx["pre"].astype(np.float64)
        if rule == "epsilon":
            if layer.kind == "dense":
                r = _epsilon_dense(r, a, layer.weight.astype(np.float64), z, eps)
            else:
                r = _epsilon_conv(r, a, layer, z, eps)
        else:
            if layer.kind == "dense":
                r = _zplus_dense(r, a, layer.weight.astype(np.float64),
                                 layer.bias.astype(np.float64))
            else:
                r = _zplus_conv(r, a, layer)
        absorbed_so_far += before - float(r.sum())

    if m.include_input:
        recorded.append(_neuron_sums(r.reshape(tuple(m.input_shape))))
        absorbed.append(absorbed_so_far)

    recorded.reverse()
    absorbed.reverse()
    return RelevanceTrace(relevances=recorded, origin_logit=origin,
                          target_class=int(target), absorbed_above=absorbed, rule=rule)
