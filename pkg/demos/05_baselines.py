"""
Classic neuron criteria next to path coverage
=============================================

The toolkit bundles three neuron-level baselines — activation
threshold coverage, range-section coverage, and out-of-range corner
coverage — profiled on the training set. They saturate quickly on
in-distribution data; the path criteria keep discriminating, which is
the motivation for measuring against the decision graph at all.
"""

import numpy as np

import npcov.abstraction as ab
import npcov.comparators as cmp
import npcov.coverage as cov
import npcov.trainkit as tk

############################################################################
# Fixture, graph, and activation profile
# --------------------------------------
data = tk.make_blobs(dims=2, classes=3, per_class=120, seed=11)
train, test = tk.split_dataset(data, test_fraction=0.25, seed=1)
net = tk.train_sgd([2, 16, 16, 3], train, tk.TrainConfig(epochs=60, seed=0))
graph = ab.build_decision_graph(net, train, alpha=0.9, k=2, beta=0.5, seed=5)

ranges = cmp.profile_ranges(net, train)
print(f"profiled {sum(ranges.layer_sizes())} neurons over "
      f"{len(train.samples)} training samples "
      f"({ranges.degenerate_count()} with a collapsed range)")

############################################################################
# The baselines on the plain test split
# -------------------------------------
for thr in cmp.NC_THRESHOLDS:
    print(f"threshold coverage  (> {thr:.2f}):    "
          f"{cmp.nc(net, test.samples, threshold=thr):.3f}")
print(f"range-section coverage (k=1000): "
      f"{cmp.kmnc(net, test.samples, ranges):.3f}")
print(f"corner coverage:                 "
      f"{cmp.nbc(net, test.samples, ranges):.3f}")

############################################################################
# Same suite, path-based criteria
# -------------------------------
snpc = cov.new_state("snpc", graph)
cov.run_suite(snpc, net, test.samples)
anpc = cov.new_state("anpc", graph)
cov.run_suite(anpc, net, test.samples)
print(f"\nstructure-bucket coverage:  {cov.coverage(snpc):.4f}")
print(f"activation-bucket coverage: {cov.coverage(anpc):.4f}")

############################################################################
# Where the criteria disagree
# ---------------------------
# Push the suite out of distribution with adversarial inputs: the
# corner baseline jumps (activations leave the profiled ranges), while
# the path criteria report which decision structures the attack walked
# through.
adv = np.stack([tk.pgd_attack(net, x, int(y), eps=2.0, seed=40 + i)[0]
                for i, (x, y) in enumerate(zip(test.samples[:60],
                                               test.labels[:60]))])
mixed = np.concatenate([test.samples, adv])

print(f"\n{'suite':>14}  {'corners':>8}  {'sections':>8}  {'structure':>9}")
for name, suite in (("test only", test.samples), ("test + attacks", mixed)):
    st = cov.new_state("snpc", graph)
    cov.run_suite(st, net, suite)
    print(f"{name:>14}  {cmp.nbc(net, suite, ranges):8.3f}  "
          f"{cmp.kmnc(net, suite, ranges):8.3f}  {cov.coverage(st):9.4f}")

############################################################################
# Reports share one shape
# -----------------------
# Baseline reports carry the same keys as the coverage module's, so
# downstream tooling can treat all criteria uniformly.
doc = cmp.baseline_report("nbc", net, mixed, ranges=ranges,
                          sections=cmp.NBC_SECTIONS_BANDED)
print(f"\nbanded corner report: covered {doc['cells_covered']} of "
      f"{doc['cells_total']} cells, ratio {doc['ratio']:.3f}, "
      f"{doc['clamped_count']} clamped")
