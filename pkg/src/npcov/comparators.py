"""Baseline coverage criteria: neuron coverage, k-multisection coverage
over training ranges, and boundary coverage of the range corners.

All three read the same neuron activation convention as the path
criteria (a convolutional neuron is a channel, its activation the
spatial mean), so comparisons against path coverage measure the
criterion, not a different view of the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import par_map
from .coverage import build_report
from .errors import ShapeError
from .model import Model, coverage_layer_sizes, forward

NC_THRESHOLDS = (0.0, 0.2, 0.5, 0.75)
KMNC_SECTIONS_DEFAULT = 1000
NBC_SECTIONS_DEFAULT = 1
NBC_SECTIONS_BANDED = 10


@dataclass
class ActivationRanges:
    low: list[np.ndarray]
    high: list[np.ndarray]

    def __post_init__(self):
        for lo, hi in zip(self.low, self.high):
            if np.any(lo > hi):
                raise ShapeError("activation range with low above high")

    def layer_sizes(self) -> list[int]:
        return [len(lo) for lo in self.low]

    def degenerate(self) -> list[np.ndarray]:
        """Per layer, boolean mask of zero-width ranges."""
        return [lo == hi for lo, hi in zip(self.low, self.high)]

    def degenerate_count(self) -> int:
        return int(sum(d.sum() for d in self.degenerate()))


def profile_ranges(m: Model, data) -> ActivationRanges:
    """Exact per-neuron activation min/max over a dataset."""
    samples = getattr(data, "samples", data)
    if len(samples) == 0:
        raise ShapeError("cannot profile activation ranges from an empty dataset")
    low = [np.full(s, np.inf, dtype=np.float64) for s in coverage_layer_sizes(m)]
    high = [np.full(s, -np.inf, dtype=np.float64) for s in coverage_layer_sizes(m)]
    for x in samples:
        for l, a in enumerate(forward(m, x).activations):
            np.minimum(low[l], a, out=low[l])
            np.maximum(high[l], a, out=high[l])
    return ActivationRanges(low=[lo.astype(np.float32) for lo in low],
                            high=[hi.astype(np.float32) for hi in high])


def _check_ranges(m: Model, ranges: ActivationRanges) -> None:
    if ranges.layer_sizes() != coverage_layer_sizes(m):
        raise ShapeError(
            f"ranges profiled for layers {ranges.layer_sizes()}, model has "
            f"{coverage_layer_sizes(m)}")


def nc_hits(m: Model, samples, threshold: float = 0.0,
            workers: int | None = None) -> set:
    """Neurons driven strictly above the threshold by any input."""

    def one(x):
        return {(l, int(u))
                for l, a in enumerate(forward(m, x).activations)
                for u in np.flatnonzero(a > threshold)}

    hits: set = set()
    for s in par_map(one, samples, workers):
        hits |= s
    return hits


def nc(m: Model, samples, threshold: float = 0.0,
       workers: int | None = None) -> float:
    total = sum(coverage_layer_sizes(m))
    return len(nc_hits(m, samples, threshold, workers)) / total


def _kmnc_one(m: Model, ranges: ActivationRanges, k: int, x) -> set:
    cells = set()
    degenerate = ranges.degenerate()
    for l, a in enumerate(forward(m, x).activations):
        lo, hi = ranges.low[l], ranges.high[l]
        width = hi - lo
        a64 = a.astype(np.float64)
        in_range = (a >= lo) & (a <= hi) & ~degenerate[l]
        for u in np.flatnonzero(in_range):
            s = int((a64[u] - lo[u]) / width[u] * k)
            cells.add((l, int(u), min(s, k - 1)))
        # A zero-width range has no interior sections to walk: hitting
        # the point value counts the neuron in full.
        for u in np.flatnonzero(degenerate[l] & (a == lo)):
            cells.update((l, int(u), s) for s in range(k))
    return cells


def kmnc_hits(m: Model, samples, ranges: ActivationRanges,
              k: int = KMNC_SECTIONS_DEFAULT,
              workers: int | None = None) -> set:
    _check_ranges(m, ranges)
    if k < 1:
        raise ShapeError(f"section count must be >= 1, got {k}")
    hits: set = set()
    for s in par_map(lambda x: _kmnc_one(m, ranges, k, x), samples, workers):
        hits |= s
    return hits


def kmnc(m: Model, samples, ranges: ActivationRanges,
         k: int = KMNC_SECTIONS_DEFAULT, workers: int | None = None) -> float:
    total = sum(coverage_layer_sizes(m)) * k
    return len(kmnc_hits(m, samples, ranges, k, workers)) / total


def _nbc_one(m: Model, ranges: ActivationRanges, sections: int,
             x) -> tuple[set, int]:
    cells = set()
    clamped = 0
    for l, a in enumerate(forward(m, x).activations):
        lo, hi = ranges.low[l], ranges.high[l]
        width = (hi.astype(np.float64) - lo.astype(np.float64)) / sections
        a64 = a.astype(np.float64)
        for corner, escaped, dist in (
                (0, a < lo, lo.astype(np.float64) - a64),
                (1, a > hi, a64 - hi.astype(np.float64))):
            for u in np.flatnonzero(escaped):
                if sections == 1:
                    band = 0
                elif width[u] == 0:
                    band = sections - 1
                    clamped += 1
                else:
                    band = int(np.ceil(dist[u] / width[u])) - 1
                    if band >= sections:
                        band = sections - 1
                        clamped += 1
                cells.add((l, int(u), corner, band))
    return cells, clamped


def nbc_hits(m: Model, samples, ranges: ActivationRanges,
             sections: int = NBC_SECTIONS_DEFAULT,
             workers: int | None = None) -> tuple[set, int]:
    """Corner cells hit plus the count of values clamped into the
    outermost band (only possible with the banded variant)."""
    _check_ranges(m, ranges)
    if sections < 1:
        raise ShapeError(f"section count must be >= 1, got {sections}")
    hits: set = set()
    clamped = 0
    for cells, c in par_map(lambda x: _nbc_one(m, ranges, sections, x),
                            samples, workers):
        hits |= cells
        clamped += c
    return hits, clamped


def nbc(m: Model, samples, ranges: ActivationRanges,
        sections: int = NBC_SECTIONS_DEFAULT,
        workers: int | None = None) -> float:
    total = sum(coverage_layer_sizes(m)) * 2 * sections
    hits, _ = nbc_hits(m, samples, ranges, sections, workers)
    return len(hits) / total


def baseline_report(kind: str, m: Model, samples,
                    ranges: ActivationRanges | None = None,
                    threshold: float = 0.0,
                    k: int = KMNC_SECTIONS_DEFAULT,
                    sections: int = NBC_SECTIONS_DEFAULT,
                    workers: int | None = None) -> dict:
    """One baseline evaluated into the shared coverage report shape."""
    neurons = sum(coverage_layer_sizes(m))
    if kind == "nc":
        hits = nc_hits(m, samples, threshold, workers)
        return build_report("nc", m=None, u=threshold, covered=len(hits),
                            total=neurons, clamped=0, per_class=[])
    if kind == "kmnc":
        if ranges is None:
            raise ShapeError("kmnc needs profiled activation ranges")
        hits = kmnc_hits(m, samples, ranges, k, workers)
        return build_report("kmnc", m=k, u=None, covered=len(hits),
                            total=neurons * k, clamped=0, per_class=[])
    if kind == "nbc":
        if ranges is None:
            raise ShapeError("nbc needs profiled activation ranges")
        hits, clamped = nbc_hits(m, samples, ranges, sections, workers)
        return build_report("nbc", m=sections, u=None, covered=len(hits),
                            total=neurons * 2 * sections, clamped=clamped,
                            per_class=[])
    raise ShapeError(f"unknown baseline {kind!r}")
