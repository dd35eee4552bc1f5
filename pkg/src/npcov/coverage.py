"""Path coverage criteria over a decision graph.

Two criteria share the same cell grid (class, cluster, layer, bucket):
the structure criterion buckets the per-layer Jaccard similarity between
a test input's critical path and each abstract path of its predicted
class; the activation criterion buckets the per-layer L2 distance
between the input's activations and its nearest cluster member's, both
restricted to abstract-path neurons. Coverage is covered cells over the
full grid. States are plain sets, so merging partial results from
parallel workers is a union.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._util import par_map
from .abstraction import DecisionGraph, _check_graph_model, encode
from .cdp import extract_cdp, layer_jaccard
from .errors import ShapeError
from .lrp import relevance
from .model import Model, forward

CRITERIA = ("snpc", "anpc")

BUCKETS_DEFAULT = 200
UBOUND_DEFAULT = 2.0

Cell = tuple[int, int, int, int]  # class, cluster, layer, bucket (1-based)


@dataclass
class CoverageConfig:
    buckets: int = BUCKETS_DEFAULT
    ubound: float = UBOUND_DEFAULT

    def __post_init__(self):
        if self.buckets < 1:
            raise ShapeError(f"bucket count must be >= 1, got {self.buckets}")
        if not self.ubound > 0:
            raise ShapeError(f"distance bound must be > 0, got {self.ubound}")


@dataclass
class CoverageState:
    criterion: str
    graph: DecisionGraph
    config: CoverageConfig
    covered: set[Cell] = field(default_factory=set)
    clamped: int = 0
    skipped_empty: int = 0


def new_state(criterion: str, graph: DecisionGraph,
              config: CoverageConfig | None = None) -> CoverageState:
    tag = criterion.lower()
    if tag not in CRITERIA:
        raise ShapeError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    if config is None:
        config = CoverageConfig(
            buckets=graph.buckets if graph.buckets else BUCKETS_DEFAULT,
            ubound=graph.ubound if graph.ubound else UBOUND_DEFAULT)
    return CoverageState(criterion=tag, graph=graph, config=config)


def similarity_bucket(j: float, m: int) -> int:
    """Bucket i covers ((i-1)/m, i/m]; 0 joins the first bucket."""
    if not 0 <= j <= 1:
        raise ShapeError(f"similarity out of range: {j}")
    if j == 0:
        return 1
    return min(int(math.ceil(j * m)), m)


def distance_bucket(d: float, u: float, m: int) -> tuple[int, bool]:
    """Bucket i covers (u*(i-1)/m, u*i/m]; 0 joins the first bucket and
    anything beyond the bound clamps to the last, reported clamped."""
    if d < 0:
        raise ShapeError(f"distance must be nonnegative, got {d}")
    if d == 0:
        return 1, False
    if d > u:
        return m, True
    return min(int(math.ceil(d / u * m)), m), False


def nearest_member(graph: DecisionGraph, class_id: int, cluster_id: int,
                   bits: np.ndarray) -> int:
    """Training-sample id of the cluster member whose path is most
    similar to the query bitset; ties go to the lowest member id."""
    cluster = graph.clusters[class_id][cluster_id]
    if cluster.member_count() == 0:
        raise ShapeError(f"cluster ({class_id}, {cluster_id}) has no members")
    return int(cluster.member_ids[_nearest_pos(graph, cluster, bits)])


def _nearest_pos(graph: DecisionGraph, cluster, bits: np.ndarray) -> int:
    sims = np.zeros(cluster.member_count())
    off = 0
    for size in graph.layer_sizes:
        q = bits[off:off + size]
        mb = cluster.member_bits[:, off:off + size]
        inter = (mb & q).sum(axis=1)
        union = mb.sum(axis=1) + q.sum() - inter
        sims += np.where(union == 0, 1.0, inter / np.maximum(union, 1))
        off += size
    return int(np.argmax(sims))  # first max = lowest member id


def _cells_for(criterion: str, m: Model, graph: DecisionGraph,
               config: CoverageConfig, x,
               rule: str = "epsilon") -> tuple[set[Cell], int, int]:
    """Pure per-input cell computation: (cells, clamped, skipped)."""
    rel = relevance(m, x, rule=rule)
    y = rel.target_class
    path = extract_cdp(rel, graph.alpha)
    cells: set[Cell] = set()
    clamped = 0
    skipped = 0
    if criterion == "snpc":
        for cluster in graph.clusters[y]:
            for l in range(len(graph.layer_sizes)):
                j = layer_jaccard(path.layers[l], cluster.abstract.units[l])
                cells.add((y, cluster.cluster_id, l,
                           similarity_bucket(j, config.buckets)))
    else:
        bits = encode(path, m)
        trace = forward(m, x)
        for cluster in graph.clusters[y]:
            if cluster.member_count() == 0:
                skipped += 1
                continue
            pos = _nearest_pos(graph, cluster, bits)
            for l in range(len(graph.layer_sizes)):
                units = cluster.abstract.units[l]
                d = float(np.linalg.norm(
                    trace.activations[l][units].astype(np.float64)
                    - cluster.member_acts[l][pos].astype(np.float64)))
                b, over = distance_bucket(d, config.ubound, config.buckets)
                clamped += int(over)
                cells.add((y, cluster.cluster_id, l, b))
    return cells, clamped, skipped


def snpc_update(state: CoverageState, m: Model, x) -> list[Cell]:
    """Fold one input into a structure-coverage state; returns the cells
    it newly covered."""
    if state.criterion != "snpc":
        raise ShapeError(f"state tracks {state.criterion!r}, not snpc")
    _check_graph_model(state.graph, m)
    cells, _, _ = _cells_for("snpc", m, state.graph, state.config, x)
    new = sorted(cells - state.covered)
    state.covered |= cells
    return new


def anpc_update(state: CoverageState, m: Model, x) -> list[Cell]:
    """Fold one input into an activation-coverage state; returns the
    cells it newly covered."""
    if state.criterion != "anpc":
        raise ShapeError(f"state tracks {state.criterion!r}, not anpc")
    _check_graph_model(state.graph, m)
    cells, clamped, skipped = _cells_for("anpc", m, state.graph, state.config, x)
    state.clamped += clamped
    state.skipped_empty += skipped
    new = sorted(cells - state.covered)
    state.covered |= cells
    return new


def run_suite(state: CoverageState, m: Model, samples,
              rule: str = "epsilon", workers: int | None = None) -> CoverageState:
    """Fold a whole suite into the state (cell computation is pure, so
    inputs can be processed in parallel and merged)."""
    _check_graph_model(state.graph, m)

    def one(x):
        return _cells_for(state.criterion, m, state.graph, state.config, x, rule)

    for cells, clamped, skipped in par_map(one, samples, workers):
        state.covered |= cells
        state.clamped += clamped
        state.skipped_empty += skipped
    return state


def merge_states(a: CoverageState, b: CoverageState) -> CoverageState:
    """Union of two states over the same graph and criterion."""
    if a.criterion != b.criterion:
        raise ShapeError(f"cannot merge {a.criterion!r} with {b.criterion!r}")
    if a.graph.model_hash != b.graph.model_hash or a.config != b.config:
        raise ShapeError("states were built against different graphs or configs")
    return CoverageState(criterion=a.criterion, graph=a.graph, config=a.config,
                         covered=a.covered | b.covered,
                         clamped=a.clamped + b.clamped,
                         skipped_empty=a.skipped_empty + b.skipped_empty)


def cells_total(state: CoverageState) -> int:
    g = state.graph
    return g.class_count * g.k * len(g.layer_sizes) * state.config.buckets


def coverage(state: CoverageState) -> float:
    return len(state.covered) / cells_total(state)


def build_report(criterion: str, m, u, covered: int, total: int,
                 clamped: int, per_class: list[dict]) -> dict:
    """Common report shape shared by path coverage and the baselines."""
    return {
        "criterion": criterion,
        "m": m,
        "u": u,
        "cells_covered": covered,
        "cells_total": total,
        "ratio": covered / total if total else 0.0,
        "clamped_count": clamped,
        "per_class": per_class,
    }


def report(state: CoverageState) -> dict:
    g = state.graph
    class_total = g.k * len(g.layer_sizes) * state.config.buckets
    per_class = []
    for y in range(g.class_count):
        hit = sum(1 for cell in state.covered if cell[0] == y)
        per_class.append({"class": y, "cells_covered": hit,
                          "ratio": hit / class_total})
    return build_report(
        criterion=state.criterion, m=state.config.buckets,
        u=state.config.ubound if state.criterion == "anpc" else None,
        covered=len(state.covered), total=cells_total(state),
        clamped=state.clamped, per_class=per_class)
