"""Critical paths: per-layer sets of the neurons that carried a decision.

A critical path keeps, per coverage layer, the smallest group of
positive-relevance neurons (taken in descending relevance order) whose
combined relevance exceeds a budget: alpha times the origin logit, or
alpha times the layer's positive mass when the logit is not positive
(the definition degenerates there; callers can surface the fallback).
The complement is the non-critical path. Masking one or the other and
counting changed predictions is the basic criticality measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import par_map
from .errors import ShapeError
from .lrp import RelevanceTrace, relevance
from .model import Model, coverage_layer_sizes, forward
from .trainkit import LabeledDataset


@dataclass
class CriticalPath:
    layers: list[np.ndarray]  # sorted unit indices per coverage layer
    alpha: float
    sample_ref: int | None = None

    def mask(self) -> set:
        """The path's neurons as a maskable (layer, unit) set."""
        return {(l, int(u)) for l, units in enumerate(self.layers) for u in units}

    def size(self) -> int:
        return sum(len(units) for units in self.layers)


def _select_layer(rel: np.ndarray, budget: float) -> np.ndarray:
    order = np.argsort(-rel, kind="stable")  # stable: ties keep the lower index first
    order = order[rel[order] > 0]
    if len(order) == 0:
        return np.empty(0, dtype=np.int64)
    csum = np.cumsum(rel[order])
    first_over = int(np.searchsorted(csum, budget, side="right"))
    take = len(order) if first_over == len(order) else first_over + 1
    return np.sort(order[:take]).astype(np.int64)


def extract_cdp(r: RelevanceTrace, alpha: float,
                sample_ref: int | None = None) -> CriticalPath:
    """Minimal relevance-ordered prefix per layer whose sum exceeds the budget."""
    if not 0 < alpha <= 1:
        raise ShapeError(f"alpha must be in (0, 1], got {alpha}")
    g = r.origin_logit
    layers = []
    for rel in r.relevances:
        rel = np.asarray(rel, dtype=np.float64)
        budget = alpha * g if g > 0 else alpha * float(rel[rel > 0].sum())
        layers.append(_select_layer(rel, budget))
    return CriticalPath(layers=layers, alpha=alpha, sample_ref=sample_ref)


def _check_geometry(p: CriticalPath, m: Model) -> list[int]:
    sizes = coverage_layer_sizes(m)
    if len(p.layers) != len(sizes):
        raise ShapeError(f"path has {len(p.layers)} layers, model has {len(sizes)}")
    return sizes


def width(p: CriticalPath, m: Model) -> float:
    """Mean fraction of neurons selected per layer."""
    sizes = _check_geometry(p, m)
    return float(np.mean([len(units) / size for units, size in zip(p.layers, sizes)]))


def ncdp(p: CriticalPath, m: Model) -> set:
    """Complement of the path over all coverage-layer neurons, as a mask."""
    sizes = _check_geometry(p, m)
    out = set()
    for l, (units, size) in enumerate(zip(p.layers, sizes)):
        selected = set(int(u) for u in units)
        out.update((l, u) for u in range(size) if u not in selected)
    return out


def layer_jaccard(a: np.ndarray, b: np.ndarray) -> float:
    """Jaccard of two unit-index sets; both empty counts as identical (1.0)."""
    sa, sb = set(map(int, a)), set(map(int, b))
    if not sa and not sb:
        return 1.0
    union = len(sa | sb)
    return len(sa & sb) / union


def path_similarity(p: CriticalPath, q: CriticalPath) -> float:
    """Mean per-layer Jaccard between two paths."""
    if len(p.layers) != len(q.layers):
        raise ShapeError(f"paths disagree on layer count: {len(p.layers)} vs {len(q.layers)}")
    return float(np.mean([layer_jaccard(a, b) for a, b in zip(p.layers, q.layers)]))


def _changed(m: Model, x, mask) -> bool:
    if not mask:
        return False
    base = forward(m, x).predicted_class
    return forward(m, x, mask=mask).predicted_class != base


def mask_eval(m: Model, data: LabeledDataset, alpha: float, target: str = "cdp",
              rule: str = "epsilon", workers: int | None = None) -> float:
    """Inconsistency rate when masking each sample's own path (or complement)."""
    if target not in ("cdp", "ncdp"):
        raise ShapeError(f"target must be 'cdp' or 'ncdp', got {target!r}")
    if len(data) == 0:
        raise ShapeError("mask_eval needs a nonempty dataset")

    def one(x):
        p = extract_cdp(relevance(m, x, rule=rule), alpha)
        return _changed(m, x, p.mask() if target == "cdp" else ncdp(p, m))

    flags = par_map(one, data.samples, workers)
    return sum(flags) / len(flags)


def quintile_mask_eval(m: Model, data: LabeledDataset, alpha: float,
                       rule: str = "epsilon", workers: int | None = None) -> list[float]:
    """Inconsistency per relevance band: each sample's CDP neurons are
    sorted by relevance (descending, ties to lower index), split into 5
    contiguous bands per layer (remainders land in earlier bands), and
    each band is masked alone. Returns the 5 rates in band order."""
    if len(data) == 0:
        raise ShapeError("quintile_mask_eval needs a nonempty dataset")

    def one(x):
        r = relevance(m, x, rule=rule)
        p = extract_cdp(r, alpha)
        bands = [set() for _ in range(5)]
        for l, units in enumerate(p.layers):
            rel = np.asarray(r.relevances[l])
            by_rel = units[np.argsort(-rel[units], kind="stable")]
            for b, chunk in enumerate(np.array_split(by_rel, 5)):
                bands[b].update((l, int(u)) for u in chunk)
        return [_changed(m, x, bands[b]) for b in range(5)]

    per_sample = np.asarray(par_map(one, data.samples, workers))
    return [float(r) for r in per_sample.mean(axis=0)]
