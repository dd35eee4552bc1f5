"""Evaluation statistics over paths, predictions, and suite families.

Covers the questions a coverage criterion gets asked: do critical paths
of one class (and one cluster) actually look more alike than paths
across classes, how evenly does a test suite exercise the output
classes, and how does coverage move when errors are injected into a
suite at controlled rates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .abstraction import DecisionGraph
from .errors import ShapeError
from .model import Model, forward
from .trainkit import LabeledDataset

SAMPLE_CAP_DEFAULT = 100


@dataclass
class SimilarityReport:
    intra_class: float | None
    inter_class: float | None
    intra_cluster: float | None
    inter_cluster: float | None
    sampled: int = 0
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("intra_class", "inter_class", "intra_cluster",
                     "inter_cluster"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ShapeError(f"{name} similarity out of range: {v}")

    def as_dict(self) -> dict:
        return {"intra_class": self.intra_class,
                "inter_class": self.inter_class,
                "intra_cluster": self.intra_cluster,
                "inter_cluster": self.inter_cluster,
                "sampled": self.sampled, "flags": list(self.flags)}


def _path_bits(p, sizes) -> np.ndarray:
    if len(p.layers) != len(sizes):
        raise ShapeError(f"path has {len(p.layers)} layers, expected {len(sizes)}")
    bits = np.zeros(sum(sizes), dtype=bool)
    off = 0
    for units, size in zip(p.layers, sizes):
        bits[off + np.asarray(units, dtype=np.int64)] = True
        off += size
    return bits


def _pairwise_similarity(bits: np.ndarray, sizes) -> np.ndarray:
    """Mean per-layer Jaccard between every pair of encoded paths."""
    n = len(bits)
    sims = np.zeros((n, n))
    off = 0
    for size in sizes:
        b = bits[:, off:off + size].astype(np.int64)
        inter = b @ b.T
        counts = b.sum(axis=1)
        union = counts[:, None] + counts[None, :] - inter
        sims += np.where(union == 0, 1.0, inter / np.maximum(union, 1))
        off += size
    return sims / len(sizes)


def similarity_stats(graph: DecisionGraph, paths,
                     sample_cap: int = SAMPLE_CAP_DEFAULT,
                     seed: int = 0) -> SimilarityReport:
    """Mean path similarity within/across classes and clusters.

    `paths` holds a CriticalPath per training-sample id (anything
    indexable by the graph's member ids). Classes larger than the cap
    are subsampled with the given seed. Categories left without a
    single pair are reported as None and flagged.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    chosen: list[int] = []
    cls: list[int] = []
    clu: list[int] = []
    for y, per_class in enumerate(graph.clusters):
        ids = np.concatenate([c.member_ids for c in per_class]) \
            if per_class else np.empty(0, dtype=np.int64)
        ids = np.sort(ids)
        if len(ids) > sample_cap:
            ids = np.sort(rng.choice(ids, size=sample_cap, replace=False))
        by_cluster = {int(i): c.cluster_id for c in per_class
                      for i in c.member_ids}
        for i in ids:
            chosen.append(int(i))
            cls.append(y)
            clu.append(by_cluster[int(i)])

    flags: list[str] = []
    if len(chosen) < 2:
        return SimilarityReport(None, None, None, None, sampled=len(chosen),
                                flags=["insufficient_samples"])

    bits = np.stack([_path_bits(paths[i], graph.layer_sizes) for i in chosen])
    sims = _pairwise_similarity(bits, graph.layer_sizes)
    cls_a = np.asarray(cls)
    clu_a = np.asarray(clu)
    upper = np.triu(np.ones_like(sims, dtype=bool), k=1)
    same_class = cls_a[:, None] == cls_a[None, :]
    same_cluster = same_class & (clu_a[:, None] == clu_a[None, :])

    def mean_over(mask, name):
        sel = mask & upper
        if not sel.any():
            flags.append(f"no_{name}_pairs")
            return None
        return float(sims[sel].mean())

    return SimilarityReport(
        intra_class=mean_over(same_class, "intra_class"),
        inter_class=mean_over(~same_class, "inter_class"),
        intra_cluster=mean_over(same_cluster, "intra_cluster"),
        inter_cluster=mean_over(same_class & ~same_cluster, "inter_cluster"),
        sampled=len(chosen), flags=flags)


def output_impartiality(predictions, class_count: int) -> float:
    """Normalized entropy of the empirical class distribution: 1 when
    predictions spread uniformly, 0 when they collapse to one class."""
    if class_count < 2:
        raise ShapeError(f"impartiality needs >= 2 classes, got {class_count}")
    preds = np.asarray(predictions, dtype=np.int64)
    if preds.size == 0:
        raise ShapeError("impartiality needs at least one prediction")
    if preds.min() < 0 or preds.max() >= class_count:
        raise ShapeError(f"prediction outside [0, {class_count})")
    counts = np.bincount(preds, minlength=class_count)
    n = int(counts.sum())
    # Group identical counts so the uniform case divides n by itself and
    # lands on 1.0 exactly instead of accumulating rounding dust.
    total = 0.0
    log_c = math.log(class_count)
    for c in sorted(set(counts.tolist()) - {0}):
        mult = int((counts == c).sum())
        total += (mult * c / n) * (math.log(n / c) / log_c)
    return total


@dataclass
class CoverageChange:
    deltas: list[float]
    normalized: list[float] | None
    degenerate: bool


def normalized_coverage_change(coverages, baseline: float) -> CoverageChange:
    """Coverage deltas against a baseline suite, rescaled so the extreme
    deltas sit exactly one unit apart. Negative values are meaningful
    (coverage can drop). All-equal deltas cannot be normalized and come
    back flagged degenerate."""
    covs = [float(c) for c in coverages]
    if len(covs) < 2:
        raise ShapeError(f"need >= 2 suites to normalize, got {len(covs)}")
    deltas = [c - baseline for c in covs]
    spread = max(deltas) - min(deltas)
    if spread == 0:
        return CoverageChange(deltas=deltas, normalized=None, degenerate=True)
    return CoverageChange(deltas=deltas,
                          normalized=[d / spread for d in deltas],
                          degenerate=False)


def natural_errors(m: Model, data: LabeledDataset) -> np.ndarray:
    """Inputs the model misclassifies, in dataset order."""
    if data.labels is None:
        raise ShapeError("finding misclassified inputs needs labels")
    wrong = [i for i, x in enumerate(data.samples)
             if forward(m, x).predicted_class != int(data.labels[i])]
    return data.samples[np.asarray(wrong, dtype=np.int64)] \
        if wrong else np.empty((0,) + data.sample_shape(), dtype=np.float32)


def error_sensitivity_suites(base: np.ndarray, errors: np.ndarray,
                             fractions, repeats: int = 5,
                             seed: int = 0) -> list[list[np.ndarray]]:
    """Families of equal-size suites with controlled error rates.

    Per repeat, a seeded shuffle fixes replacement positions and error
    order once; each fraction then replaces the first floor(f*N)
    positions. Suites within a repeat are therefore nested: everything
    injected at 1% is still present at 10%.
    """
    base = np.asarray(base)
    errors = np.asarray(errors)
    n = len(base)
    if n == 0:
        raise ShapeError("base suite is empty")
    fracs = [float(f) for f in fractions]
    if any(not 0 <= f <= 1 for f in fracs):
        raise ShapeError(f"fractions must lie in [0, 1], got {fracs}")
    if repeats < 1:
        raise ShapeError(f"repeats must be >= 1, got {repeats}")
    need = math.floor(max(fracs) * n) if fracs else 0
    if len(errors) < need:
        raise ShapeError(
            f"not enough error inputs: need {need} for the largest fraction, "
            f"have {len(errors)}")
    families: list[list[np.ndarray]] = []
    children = np.random.SeedSequence(seed).spawn(repeats)
    for child in children:
        rng = np.random.default_rng(child)
        positions = rng.permutation(n)
        error_order = rng.permutation(len(errors))
        suites = []
        for f in fracs:
            count = math.floor(f * n)
            suite = base.copy()
            suite[positions[:count]] = errors[error_order[:count]]
            suites.append(suite)
        families.append(suites)
    return families


def correlations(xs, ys) -> dict:
    """Pearson and Spearman correlation between two paired series."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"paired series disagree: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ShapeError("correlation needs >= 2 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return {"pearson": None, "spearman": None, "degenerate": True}
    return {"pearson": float(stats.pearsonr(x, y).statistic),
            "spearman": float(stats.spearmanr(x, y).statistic),
            "degenerate": False}


def write_suite_csv(path, rows) -> None:
    """Per-suite (coverage, impartiality) rows for external plotting."""
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["suite", "coverage",
                                               "impartiality"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in writer.fieldnames})
