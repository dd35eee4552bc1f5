"""Cluster per-class critical paths and merge them into a decision graph.

Paths are encoded as bitsets (layers ascending, units ascending), the
bitsets are clustered per predicted class with seeded k-means, and each
cluster's members are merged into a weighted abstract path: the weight
of a neuron is the fraction of members whose path contains it, and only
weights strictly above beta survive. The graph caches each member's
activations at exactly the abstract-path neurons so activation-based
coverage never re-runs the training set.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ._util import par_map
from .cdp import CriticalPath, extract_cdp
from .errors import GraphModelMismatch, LoadError, ShapeError
from .lrp import relevance
from .model import Model, _input_units, coverage_layer_sizes, forward
from .trainkit import LabeledDataset

GRAPH_MAGIC = b"NPCG"
GRAPH_VERSION = 1


def encode(p: CriticalPath, m: Model) -> np.ndarray:
    """Path as a flat 0/1 vector: layers ascending, units ascending."""
    sizes = coverage_layer_sizes(m)
    if len(p.layers) != len(sizes):
        raise ShapeError(f"path has {len(p.layers)} layers, model has {len(sizes)}")
    bits = np.zeros(sum(sizes), dtype=bool)
    off = 0
    for units, size in zip(p.layers, sizes):
        bits[off + np.asarray(units, dtype=np.int64)] = True
        off += size
    return bits


def decode_bits(bits: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    """Inverse of encode: per-layer sorted unit arrays."""
    out = []
    off = 0
    for size in sizes:
        out.append(np.flatnonzero(bits[off:off + size]).astype(np.int64))
        off += size
    return out


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    empty_clusters: list[int]
    iterations: int


def kmeans(vectors, k: int, seed=0, tol: float = 1e-6,
           max_iter: int = 100) -> KMeansResult:
    """Seeded k-means++ plus Lloyd iterations on 0/1 (or real) vectors.

    Empty clusters are reseeded with the point farthest from its own
    centroid. With fewer vectors than k the surplus clusters stay empty
    and are reported, not raised.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ShapeError(f"kmeans needs a nonempty 2-d vector array, got shape {x.shape}")
    if k < 1:
        raise ShapeError(f"k must be >= 1, got {k}")
    n, d = x.shape
    rng = np.random.default_rng(seed)
    active = min(k, n)

    centers = np.empty((active, d))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, active):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[j] = x[pick]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))

    labels = np.zeros(n, dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        # Reseed any drained cluster with the worst-fit point, taken from
        # a cluster that can spare one so no donor drains in turn.
        for c in range(active):
            if not np.any(labels == c):
                own = dist[np.arange(n), labels]
                spare = np.flatnonzero(np.bincount(labels, minlength=active)[labels] > 1)
                worst = int(spare[own[spare].argmax()])
                centers[c] = x[worst]
                labels[worst] = c
                dist[:, c] = ((x - centers[c]) ** 2).sum(axis=1)
        new_centers = np.stack([x[labels == c].mean(axis=0) for c in range(active)])
        movement = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if movement < tol:
            break

    full_centers = np.zeros((k, d))
    full_centers[:active] = centers
    empty = sorted(set(range(k)) - set(np.unique(labels).tolist()))
    return KMeansResult(labels=labels, centroids=full_centers,
                        empty_clusters=empty, iterations=iterations)


@dataclass
class AbstractPath:
    units: list[np.ndarray]    # per layer, sorted unit indices
    weights: list[np.ndarray]  # matching member-fraction weights
    beta: float | None = None  # None until filtered

    def mask(self) -> set:
        return {(l, int(u)) for l, units in enumerate(self.units) for u in units}

    def is_empty(self) -> bool:
        return all(len(u) == 0 for u in self.units)

    def layer_count(self) -> int:
        return len(self.units)


def merge(members: list[CriticalPath]) -> AbstractPath:
    """Union of member paths with per-neuron member-fraction weights."""
    if not members:
        raise ShapeError("merge needs at least one member path")
    n_layers = len(members[0].layers)
    if any(len(p.layers) != n_layers for p in members):
        raise ShapeError("member paths disagree on layer count")
    units, weights = [], []
    for l in range(n_layers):
        counts: dict[int, int] = {}
        for p in members:
            for u in p.layers[l]:
                counts[int(u)] = counts.get(int(u), 0) + 1
        us = np.asarray(sorted(counts), dtype=np.int64)
        ws = np.asarray([counts[int(u)] / len(members) for u in us])
        units.append(us)
        weights.append(ws)
    return AbstractPath(units=units, weights=weights, beta=None)


def filter_beta(raw: AbstractPath, beta: float) -> AbstractPath:
    """Keep neurons whose weight is strictly above beta."""
    if not 0 <= beta < 1:
        raise ShapeError(f"beta must be in [0, 1), got {beta}")
    units, weights = [], []
    for us, ws in zip(raw.units, raw.weights):
        keep = ws > beta
        units.append(us[keep])
        weights.append(ws[keep])
    return AbstractPath(units=units, weights=weights, beta=beta)


@dataclass
class Cluster:
    class_id: int
    cluster_id: int
    member_ids: np.ndarray          # indices into the originating training set
    member_bits: np.ndarray         # (members, total bits) bool
    member_acts: list[np.ndarray]   # per layer: (members, abstract units) float32
    abstract: AbstractPath

    def member_count(self) -> int:
        return len(self.member_ids)


@dataclass
class DecisionGraph:
    model_hash: str
    alpha: float
    k: int
    beta: float
    include_input: bool
    class_count: int
    layer_sizes: list[int]
    clusters: list[list[Cluster]]   # [class][cluster]
    buckets: int | None = None      # default bucket count for coverage, optional
    ubound: float | None = None     # default distance bound for coverage, optional
    flags: dict = field(default_factory=dict)

    def all_clusters(self):
        for per_class in self.clusters:
            yield from per_class


def build_decision_graph(m: Model, train: LabeledDataset, alpha: float, k: int,
                         beta: float, seed: int = 0, rule: str = "epsilon",
                         buckets: int | None = None, ubound: float | None = None,
                         workers: int | None = None) -> DecisionGraph:
    """Group training samples by predicted class, cluster their paths,
    and merge each cluster into a beta-filtered abstract path."""
    if len(train) == 0:
        raise ShapeError("cannot build a decision graph from an empty dataset")
    if k < 1:
        raise ShapeError(f"k must be >= 1, got {k}")
    sizes = coverage_layer_sizes(m)

    def analyze(x):
        trace = forward(m, x)
        path = extract_cdp(relevance(m, x, rule=rule), alpha)
        return trace, path

    analyzed = par_map(analyze, train.samples, workers)
    traces = [t for t, _ in analyzed]
    paths = [p for _, p in analyzed]
    bit_matrix = np.stack([encode(p, m) for p in paths])

    ss = np.random.SeedSequence(seed)
    class_seeds = ss.spawn(m.class_count)
    flags: dict = {"empty_classes": [], "empty_clusters": [], "empty_abstract": []}
    per_class: list[list[Cluster]] = []
    for y in range(m.class_count):
        ids = np.asarray([i for i, t in enumerate(traces) if t.predicted_class == y],
                         dtype=np.int64)
        if len(ids) == 0:
            flags["empty_classes"].append(y)
            clusters = [_empty_cluster(y, c, sizes) for c in range(k)]
            flags["empty_clusters"].extend((y, c) for c in range(k))
            per_class.append(clusters)
            continue
        km = kmeans(bit_matrix[ids], k, seed=class_seeds[y])
        clusters = []
        for c in range(k):
            member_ids = ids[km.labels == c]
            if len(member_ids) == 0:
                flags["empty_clusters"].append((y, c))
                clusters.append(_empty_cluster(y, c, sizes))
                continue
            raw = merge([paths[i] for i in member_ids])
            abstract = filter_beta(raw, beta)
            if abstract.is_empty():
                flags["empty_abstract"].append((y, c))
            acts = [np.stack([traces[i].activations[l][abstract.units[l]]
                              for i in member_ids]).astype(np.float32)
                    for l in range(len(sizes))]
            clusters.append(Cluster(
                class_id=y, cluster_id=c, member_ids=member_ids,
                member_bits=bit_matrix[member_ids], member_acts=acts,
                abstract=abstract))
        per_class.append(clusters)

    return DecisionGraph(
        model_hash=m.content_hash, alpha=alpha, k=k, beta=beta,
        include_input=m.include_input, class_count=m.class_count,
        layer_sizes=sizes, clusters=per_class, buckets=buckets, ubound=ubound,
        flags=flags)


def _empty_cluster(y: int, c: int, sizes: list[int]) -> Cluster:
    empty_path = AbstractPath(units=[np.empty(0, dtype=np.int64) for _ in sizes],
                              weights=[np.empty(0) for _ in sizes], beta=None)
    return Cluster(class_id=y, cluster_id=c,
                   member_ids=np.empty(0, dtype=np.int64),
                   member_bits=np.empty((0, sum(sizes)), dtype=bool),
                   member_acts=[np.empty((0, 0), dtype=np.float32) for _ in sizes],
                   abstract=empty_path)


def abstract_mask_eval(m: Model, graph: DecisionGraph, train: LabeledDataset,
                       target: str = "cdp") -> dict[tuple[int, int], float | None]:
    """Per-cluster inconsistency when masking the abstract path (or its
    complement) for every member. Member ids index into `train`, the
    dataset the graph was built from. Empty clusters report None."""
    if target not in ("cdp", "ncdp"):
        raise ShapeError(f"target must be 'cdp' or 'ncdp', got {target!r}")
    _check_graph_model(graph, m)
    rates: dict[tuple[int, int], float | None] = {}
    for cluster in graph.all_clusters():
        key = (cluster.class_id, cluster.cluster_id)
        if cluster.member_count() == 0:
            rates[key] = None
            continue
        if target == "cdp":
            mask = cluster.abstract.mask()
        else:
            mask = {(l, u) for l, size in enumerate(graph.layer_sizes)
                    for u in range(size)} - cluster.abstract.mask()
        changed = 0
        for i in cluster.member_ids:
            x = train.samples[i]
            base = forward(m, x).predicted_class
            if mask and forward(m, x, mask=mask).predicted_class != base:
                changed += 1
        rates[key] = changed / cluster.member_count()
    return rates


def abstract_width(graph: DecisionGraph) -> float:
    """Mean over nonempty clusters of their abstract path width."""
    widths = []
    for cluster in graph.all_clusters():
        if cluster.member_count() == 0:
            continue
        widths.append(np.mean([len(us) / size for us, size
                               in zip(cluster.abstract.units, graph.layer_sizes)]))
    return float(np.mean(widths)) if widths else 0.0


# --- graph container ---------------------------------------------------------
#
# Bytes, little-endian: magic "NPCG" | u32 version | u64 JSON length | JSON.
# Bitsets are packed little-endian (bit j of byte i is neuron 8*i+j) and
# base64-encoded; member activations are float32, member-major, then layer,
# then abstract-unit order.

_GHEADER = struct.Struct("<4sIQ")


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits, axis=1, bitorder="little").tobytes()


def _unpack_bits(data: bytes, members: int, total_bits: int) -> np.ndarray:
    if members == 0:
        return np.empty((0, total_bits), dtype=bool)
    row = (total_bits + 7) // 8
    raw = np.frombuffer(data, dtype=np.uint8).reshape(members, row)
    return np.unpackbits(raw, axis=1, bitorder="little")[:, :total_bits].astype(bool)


def save_graph(g: DecisionGraph) -> bytes:
    classes = []
    for per_class in g.clusters:
        entry_clusters = []
        for cluster in per_class:
            acts = b""
            if cluster.member_count():
                rows = np.concatenate(
                    [np.concatenate([layer[i] for layer in cluster.member_acts])
                     for i in range(cluster.member_count())])
                acts = rows.astype("<f4").tobytes()
            entry_clusters.append({
                "abstract": [{"layer": l, "units": us.tolist(),
                              "weights": ws.tolist()}
                             for l, (us, ws) in enumerate(zip(cluster.abstract.units,
                                                              cluster.abstract.weights))],
                "members": cluster.member_ids.tolist(),
                "member_bits": base64.b64encode(
                    _pack_bits(cluster.member_bits) if cluster.member_count() else b""
                ).decode(),
                "member_acts": base64.b64encode(acts).decode(),
            })
        classes.append({"class": per_class[0].class_id if per_class else 0,
                        "clusters": entry_clusters})
    params = {"alpha": g.alpha, "k": g.k, "beta": g.beta,
              "include_input": g.include_input}
    if g.buckets is not None:
        params["m"] = g.buckets
    if g.ubound is not None:
        params["u"] = g.ubound
    body = json.dumps({"model_hash": g.model_hash, "params": params,
                       "classes": classes},
                      separators=(",", ":")).encode()
    return _GHEADER.pack(GRAPH_MAGIC, GRAPH_VERSION, len(body)) + body


def save_graph_file(g: DecisionGraph, path) -> None:
    with open(path, "wb") as f:
        f.write(save_graph(g))


def _check_graph_model(g: DecisionGraph, m: Model) -> None:
    if g.model_hash != m.content_hash:
        raise GraphModelMismatch(
            f"graph was built for model {g.model_hash}, got {m.content_hash}")
    if g.include_input != m.include_input:
        raise GraphModelMismatch(
            f"graph counts the input layer ({g.include_input}) but the model "
            f"is set to {m.include_input}")


def graph_params(src) -> dict:
    """Read just the parameter block of a graph container (alpha, k,
    beta, include_input, optional m/u) without needing the model."""
    if isinstance(src, (bytes, bytearray)):
        data = bytes(src)
    else:
        with open(src, "rb") as f:
            data = f.read()
    if len(data) < _GHEADER.size:
        raise LoadError(f"file truncated at byte {len(data)}: header needs {_GHEADER.size}")
    magic, version, blen = _GHEADER.unpack_from(data)
    if magic != GRAPH_MAGIC:
        raise LoadError(f"bad magic {magic!r} at byte 0, expected {GRAPH_MAGIC!r}")
    if version != GRAPH_VERSION:
        raise LoadError(f"unsupported version {version} at byte 4")
    if len(data) < _GHEADER.size + blen:
        raise LoadError(f"file truncated at byte {len(data)}: body needs {blen} bytes")
    return dict(json.loads(data[_GHEADER.size:_GHEADER.size + blen].decode())["params"])


def load_graph(src, m: Model) -> DecisionGraph:
    """Parse a graph container and verify it matches the model."""
    if isinstance(src, (bytes, bytearray)):
        data = bytes(src)
    else:
        with open(src, "rb") as f:
            data = f.read()
    if len(data) < _GHEADER.size:
        raise LoadError(f"file truncated at byte {len(data)}: header needs {_GHEADER.size}")
    magic, version, blen = _GHEADER.unpack_from(data)
    if magic != GRAPH_MAGIC:
        raise LoadError(f"bad magic {magic!r} at byte 0, expected {GRAPH_MAGIC!r}")
    if version != GRAPH_VERSION:
        raise LoadError(f"unsupported version {version} at byte 4")
    if len(data) < _GHEADER.size + blen:
        raise LoadError(f"file truncated at byte {len(data)}: body needs {blen} bytes")
    doc = json.loads(data[_GHEADER.size:_GHEADER.size + blen].decode())

    if doc["model_hash"] != m.content_hash:
        raise GraphModelMismatch(
            f"graph was built for model {doc['model_hash']}, got {m.content_hash}")
    include_input = bool(doc["params"].get("include_input", False))
    if include_input != m.include_input:
        raise GraphModelMismatch(
            f"graph counts the input layer ({include_input}) but the model "
            f"is set to {m.include_input}")
    sizes = [layer.units() for layer in m.layers[:-1]]
    if include_input:
        sizes.insert(0, _input_units(m))
    total_bits = sum(sizes)

    flags: dict = {"empty_classes": [], "empty_clusters": [], "empty_abstract": []}
    per_class: list[list[Cluster]] = []
    for centry in doc["classes"]:
        y = int(centry["class"])
        clusters = []
        for c, entry in enumerate(centry["clusters"]):
            member_ids = np.asarray(entry["members"], dtype=np.int64)
            units = [np.empty(0, dtype=np.int64) for _ in sizes]
            weights = [np.empty(0) for _ in sizes]
            for item in entry["abstract"]:
                units[item["layer"]] = np.asarray(item["units"], dtype=np.int64)
                weights[item["layer"]] = np.asarray(item["weights"], dtype=np.float64)
            abstract = AbstractPath(units=units, weights=weights,
                                    beta=float(doc["params"]["beta"]))
            bits = _unpack_bits(base64.b64decode(entry["member_bits"]),
                                len(member_ids), total_bits)
            acts_blob = np.frombuffer(base64.b64decode(entry["member_acts"]), dtype="<f4")
            widths = [len(u) for u in units]
            acts: list[np.ndarray] = []
            if len(member_ids):
                rows = acts_blob.reshape(len(member_ids), sum(widths))
                off = 0
                for w_ in widths:
                    acts.append(rows[:, off:off + w_].astype(np.float32))
                    off += w_
            else:
                acts = [np.empty((0, 0), dtype=np.float32) for _ in sizes]
            cluster = Cluster(class_id=y, cluster_id=c, member_ids=member_ids,
                              member_bits=bits, member_acts=acts, abstract=abstract)
            clusters.append(cluster)
            if len(member_ids) == 0:
                flags["empty_clusters"].append((y, c))
            elif abstract.is_empty():
                flags["empty_abstract"].append((y, c))
        if all(len(cl.member_ids) == 0 for cl in clusters):
            flags["empty_classes"].append(y)
        per_class.append(clusters)

    g = DecisionGraph(
        model_hash=doc["model_hash"], alpha=float(doc["params"]["alpha"]),
        k=int(doc["params"]["k"]), beta=float(doc["params"]["beta"]),
        include_input=include_input, class_count=len(per_class),
        layer_sizes=sizes, clusters=per_class,
        buckets=doc["params"].get("m"), ubound=doc["params"].get("u"), flags=flags)
    return g
