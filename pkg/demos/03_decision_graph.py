"""
Abstracting training behavior into a decision graph
===================================================

Cluster the training set's critical paths per predicted class, merge
each cluster into one weighted abstract path, and keep the result in a
compact binary container. The graph is the reference model of "how the
network normally decides" that the coverage criteria measure against.
"""

import numpy as np

import npcov.abstraction as ab
import npcov.cdp as cdp
import npcov.metrics as mx
import npcov.trainkit as tk
from npcov.errors import GraphModelMismatch
from npcov.lrp import relevance

############################################################################
# Fixture
# -------
data = tk.make_blobs(dims=2, classes=3, per_class=120, seed=11)
train, test = tk.split_dataset(data, test_fraction=0.25, seed=1)
net = tk.train_sgd([2, 16, 16, 3], train, tk.TrainConfig(epochs=60, seed=0))

############################################################################
# Building the graph
# ------------------
# Per class: extract every training path, cluster the path bitsets into
# k groups, then keep each unit whose share of cluster members exceeds
# the filter threshold.
graph = ab.build_decision_graph(net, train, alpha=0.9, k=2, beta=0.5, seed=5)
print(f"classes {graph.class_count}, clusters per class {graph.k}, "
      f"coverage layers {graph.layer_sizes}")
for cluster in graph.all_clusters():
    sizes = [len(u) for u in cluster.abstract.units]
    print(f"  class {cluster.class_id} cluster {cluster.cluster_id}: "
          f"{cluster.member_count():3d} members, abstract units per layer {sizes}")

############################################################################
# Abstract paths carry membership weights
# ---------------------------------------
# A weight of 0.9 means nine of ten members route relevance through
# that unit; the filter threshold dropped anything at or below 0.5.
first = graph.clusters[0][0]
w0 = first.abstract.weights[0]
print(f"\nclass 0 cluster 0, first-layer weights: "
      f"{[f'{w:.2f}' for w in np.sort(w0)[::-1]]}")
print(f"mean abstract width of the graph: {ab.abstract_width(graph):.3f}")

############################################################################
# The abstraction is still a faithful mask
# ----------------------------------------
# Masking a cluster's abstract path flips its members' predictions at
# a high rate; masking everything else barely moves them.
rates = ab.abstract_mask_eval(net, graph, train, target="cdp")
rest = ab.abstract_mask_eval(net, graph, train, target="ncdp")
for key in sorted(rates):
    print(f"cluster {key}: mask-path rate {rates[key]:.2f}, "
          f"mask-rest rate {rest[key]:.2f}")

############################################################################
# Cluster quality in one report
# -----------------------------
# Same-cluster pairs should be the most alike, cross-class pairs the
# least.
paths = [cdp.extract_cdp(relevance(net, x), 0.9) for x in train.samples]
rep = mx.similarity_stats(graph, paths)
print(f"\nintra-cluster {rep.intra_cluster:.3f} >= intra-class "
      f"{rep.intra_class:.3f} >> inter-class {rep.inter_class:.3f}")

############################################################################
# Persistence and the safety latch
# --------------------------------
# The container embeds the model's content hash; loading it against a
# model it was not built from is refused outright.
blob = ab.save_graph(graph)
again = ab.load_graph(blob, net)
print(f"\ncontainer {len(blob)} bytes, round-trip identical: "
      f"{ab.save_graph(again) == blob}")

other = tk.train_sgd([2, 16, 16, 3], train, tk.TrainConfig(epochs=5, seed=9))
try:
    ab.load_graph(blob, other)
except GraphModelMismatch as e:
    print(f"loading against a different model: rejected ({e})")
