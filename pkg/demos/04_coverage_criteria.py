"""
Measuring a test suite against the decision graph
=================================================

Both coverage criteria bucket how far a test input sits from the
graph's abstract behavior — one along path similarity, one along
activation distance — over a grid of (class, cluster, layer, bucket)
cells. Coverage is the fraction of cells a suite reaches, so it is
monotone, order-independent, and mergeable across workers.
"""

import numpy as np

import npcov.abstraction as ab
import npcov.coverage as cov
import npcov.metrics as mx
import npcov.trainkit as tk

############################################################################
# Fixture and graph
# -----------------
data = tk.make_blobs(dims=2, classes=3, per_class=120, seed=11)
train, test = tk.split_dataset(data, test_fraction=0.25, seed=1)
net = tk.train_sgd([2, 16, 16, 3], train, tk.TrainConfig(epochs=60, seed=0))
graph = ab.build_decision_graph(net, train, alpha=0.9, k=2, beta=0.5, seed=5)

############################################################################
# Folding a suite in, one input at a time
# ---------------------------------------
# Each update returns the cells that input newly covered, so you can
# watch saturation set in.
state = cov.new_state("snpc", graph)
print(f"cell grid: {cov.cells_total(state)} cells "
      f"({graph.class_count} classes x {graph.k} clusters x "
      f"{len(graph.layer_sizes)} layers x {state.config.buckets} buckets)")
for i, x in enumerate(test.samples[:5]):
    fresh = cov.snpc_update(state, net, x)
    print(f"  input {i}: {len(fresh)} new cells -> "
          f"coverage {cov.coverage(state):.4f}")

############################################################################
# Batch runs and parallel merging give the same answer
# ----------------------------------------------------
batch = cov.new_state("snpc", graph)
cov.run_suite(batch, net, test.samples[:5])
left, right = cov.new_state("snpc", graph), cov.new_state("snpc", graph)
cov.run_suite(left, net, test.samples[:2])
cov.run_suite(right, net, test.samples[2:5])
merged = cov.merge_states(left, right)
print(f"incremental == batch == merged: "
      f"{state.covered == batch.covered == merged.covered}")

############################################################################
# The activation-distance criterion
# ---------------------------------
# Distances beyond the bound clamp into the last bucket and are
# counted, so a too-tight bound is visible instead of silent.
anpc = cov.new_state("anpc", graph)
cov.run_suite(anpc, net, test.samples)
print(f"\nactivation-bucket coverage of the test split: "
      f"{cov.coverage(anpc):.4f} ({anpc.clamped} clamped distances)")
doc = cov.report(anpc)
print(f"report: criterion={doc['criterion']} covered={doc['cells_covered']} "
      f"ratio={doc['ratio']:.4f}")

############################################################################
# Coverage rises when suites contain misbehavior
# ----------------------------------------------
# Seed error inputs (adversarial examples here) into the suite at
# increasing fractions; structure coverage should not shrink.
adv = []
for i in range(len(test.samples)):
    out, fooled = tk.pgd_attack(net, test.samples[i], int(test.labels[i]),
                                eps=2.0, seed=100 + i)
    if fooled:
        adv.append(out)
    if len(adv) >= 15:
        break
families = mx.error_sensitivity_suites(test.samples, np.stack(adv),
                                       [0.0, 0.03, 0.10], repeats=1, seed=3)
ratios = []
for suite in families[0]:
    st = cov.new_state("snpc", graph)
    cov.run_suite(st, net, suite)
    ratios.append(cov.coverage(st))
for frac, r in zip(("0%", "3%", "10%"), ratios):
    print(f"  {frac:>3} errors: coverage {r:.4f}")

change = mx.normalized_coverage_change(ratios, ratios[0])
print(f"normalized change across the sweep: "
      f"{[f'{v:.2f}' for v in change.normalized]}")

############################################################################
# Impartiality of the suite's predictions
# ---------------------------------------
# A suite that only ever exercises one class scores 0; a perfectly
# balanced one scores 1.
from npcov.model import predict

preds = np.array([predict(net, x) for x in test.samples])
print(f"\nprediction impartiality of the test split: "
      f"{mx.output_impartiality(preds, 3):.4f}")
print(f"single-class suite for comparison:         "
      f"{mx.output_impartiality(np.zeros(40, dtype=int), 3):.4f}")
