"""
Tracing a prediction back through the network
=============================================

Train a small classifier on Gaussian blobs, then decompose one of its
predictions into per-neuron relevance scores and watch the bookkeeping:
at every layer the scores plus the mass absorbed by biases above it
reconcile to the logit being explained.
"""

import numpy as np

import npcov.trainkit as tk
from npcov.lrp import relevance
from npcov.model import coverage_layer_sizes, predict

############################################################################
# A fixture to explain
# --------------------
# Three well-separated blob classes in the plane, a 2-16-16-3 net.
data = tk.make_blobs(dims=2, classes=3, per_class=120, seed=11)
train, test = tk.split_dataset(data, test_fraction=0.25, seed=1)
net = tk.train_sgd([2, 16, 16, 3], train, tk.TrainConfig(epochs=60, seed=0))
print(f"train accuracy {tk.accuracy(net, train):.3f}, "
      f"test accuracy {tk.accuracy(net, test):.3f}")

############################################################################
# Decomposing one prediction
# --------------------------
# The trace carries one relevance vector per coverage layer (every
# parametric layer except the output) for the winning logit.
x = test.samples[0]
trace = relevance(net, x)
print(f"\ninput {np.round(x, 3)} -> class {trace.target_class}, "
      f"logit {trace.origin_logit:.4f}")
for l, (size, r) in enumerate(zip(coverage_layer_sizes(net), trace.relevances)):
    top = np.argsort(r)[::-1][:3]
    print(f"  layer {l} ({size} units): relevance sum {r.sum():+.4f}, "
          f"strongest units {top.tolist()}")

############################################################################
# The conservation ledger
# -----------------------
# Propagation leaks some relevance into biases and the numerical
# stabilizer. The trace reports that absorbed mass per layer, so the
# decomposition stays an identity rather than an approximation.
print("\nlayer   sum(R)    absorbed   reconstructed logit")
for l, s in enumerate(trace.layer_sums()):
    print(f"  {l}    {s:+.4f}   {trace.absorbed_above[l]:+.4f}    "
          f"{s + trace.absorbed_above[l]:+.4f}")
print(f"origin logit: {trace.origin_logit:+.4f}")

worst = max(abs(s + a - trace.origin_logit)
            for s, a in zip(trace.layer_sums(), trace.absorbed_above))
print(f"worst reconciliation error: {worst:.2e}")

############################################################################
# An alternative propagation rule
# -------------------------------
# The plus rule routes relevance along positive contributions only;
# scores shift, the target of the explanation does not.
plus = relevance(net, x, rule="zplus")
print(f"\nplus-rule layer sums: "
      f"{[f'{s:+.3f}' for s in plus.layer_sums()]}")

############################################################################
# Scores follow the decision, not the input alone
# -----------------------------------------------
# Asking about a different class redistributes relevance even though
# the activations are unchanged.
other = (trace.target_class + 1) % 3
alt = relevance(net, x, target=other)
agree = np.corrcoef(trace.relevances[0], alt.relevances[0])[0, 1]
print(f"explaining class {other} instead: first-layer correlation "
      f"with the winning explanation {agree:+.3f}")
