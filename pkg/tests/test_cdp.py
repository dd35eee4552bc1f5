import numpy as np
import pytest

from npcov import cdp
from npcov import lrp
from npcov import model as nm
from npcov import trainkit as tk
from npcov.errors import ShapeError


def trace_of(layers, g, target=0):
    return lrp.RelevanceTrace(relevances=[np.asarray(r, dtype=np.float64) for r in layers],
                              origin_logit=g, target_class=target,
                              absorbed_above=[0.0] * len(layers), rule="epsilon")


class TestExtract:
    def test_hand_example(self):
        # [5, 3, 2, -1], g=9, alpha=0.8: budget 7.2, 5+3=8 > 7.2 -> {0, 1}.
        t = trace_of([[5.0, 3.0, 2.0, -1.0]], g=9.0)
        p = cdp.extract_cdp(t, 0.8)
        np.testing.assert_array_equal(p.layers[0], [0, 1])

    def test_alpha_one_boundary_selects_all_positive(self):
        # Positive mass equals g exactly: strict > is unsatisfiable, take all.
        t = trace_of([[5.0, 3.0, 2.0, -1.0]], g=10.0)
        p = cdp.extract_cdp(t, 1.0)
        np.testing.assert_array_equal(p.layers[0], [0, 1, 2])

    def test_no_positive_relevance_gives_empty_layer(self):
        t = trace_of([[-1.0, 0.0, -2.0]], g=5.0)
        p = cdp.extract_cdp(t, 0.5)
        assert len(p.layers[0]) == 0

    def test_negative_logit_uses_positive_mass_budget(self):
        # g <= 0: budget = alpha * positive mass = 0.8 * 10 = 8 -> {0, 1, 2}.
        t = trace_of([[5.0, 3.0, 2.0, -1.0]], g=-2.0)
        p = cdp.extract_cdp(t, 0.8)
        np.testing.assert_array_equal(p.layers[0], [0, 1, 2])

    def test_tie_prefers_lower_index(self):
        t = trace_of([[3.0, 3.0, 3.0]], g=3.0)
        p = cdp.extract_cdp(t, 0.9)  # budget 2.7, one neuron is enough
        np.testing.assert_array_equal(p.layers[0], [0])

    def test_alpha_out_of_range(self):
        t = trace_of([[1.0]], g=1.0)
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ShapeError, match="alpha"):
                cdp.extract_cdp(t, bad)

    def test_nesting_in_alpha(self, net, blobs_test):
        alphas = [0.7, 0.8, 0.9, 1.0]
        for x in blobs_test.samples[:30]:
            t = lrp.relevance(net, x)
            paths = [cdp.extract_cdp(t, a) for a in alphas]
            for small, big in zip(paths, paths[1:]):
                for ls, lb in zip(small.layers, big.layers):
                    assert set(ls.tolist()) <= set(lb.tolist())

    def test_width_monotone_in_alpha(self, net, blobs_test):
        alphas = [0.7, 0.8, 0.9, 1.0]
        widths = []
        for a in alphas:
            widths.append(np.mean([
                cdp.width(cdp.extract_cdp(lrp.relevance(net, x), a), net)
                for x in blobs_test.samples[:30]]))
        assert all(w1 <= w2 + 1e-12 for w1, w2 in zip(widths, widths[1:]))


class TestWidthAndComplement:
    def test_full_width(self, net):
        sizes = nm.coverage_layer_sizes(net)
        p = cdp.CriticalPath(layers=[np.arange(s) for s in sizes], alpha=1.0)
        assert cdp.width(p, net) == 1.0
        assert cdp.ncdp(p, net) == set()

    def test_empty_path(self, net):
        sizes = nm.coverage_layer_sizes(net)
        p = cdp.CriticalPath(layers=[np.empty(0, dtype=np.int64) for _ in sizes],
                             alpha=0.5)
        assert cdp.width(p, net) == 0.0
        assert len(cdp.ncdp(p, net)) == sum(sizes)

    def test_hand_width(self):
        layers = [np.arange(2), np.arange(4)]
        w = [np.zeros((10, 3), dtype=np.float32), np.zeros((10, 10), dtype=np.float32),
             np.zeros((2, 10), dtype=np.float32)]
        b = [np.zeros(10, dtype=np.float32)] * 2 + [np.zeros(2, dtype=np.float32)]
        m = nm.Model(layers=[nm.Layer(kind="dense", weight=w[i], bias=b[i],
                                      fused=("relu",) if i < 2 else ())
                             for i in range(3)],
                     input_shape=(3,), class_count=2)
        p = cdp.CriticalPath(layers=layers, alpha=0.8)
        assert cdp.width(p, m) == pytest.approx(0.3)

    def test_partition_identity(self, net, blobs_test):
        total = sum(nm.coverage_layer_sizes(net))
        for x in blobs_test.samples[:20]:
            p = cdp.extract_cdp(lrp.relevance(net, x), 0.8)
            assert p.size() + len(cdp.ncdp(p, net)) == total


class TestSimilarity:
    def path(self, *layers):
        return cdp.CriticalPath(layers=[np.asarray(l, dtype=np.int64) for l in layers],
                                alpha=0.8)

    def test_identical(self):
        p = self.path([1, 2], [0])
        assert cdp.path_similarity(p, p) == 1.0

    def test_disjoint(self):
        assert cdp.path_similarity(self.path([1, 2]), self.path([3, 4])) == 0.0

    def test_hand_example(self):
        assert cdp.path_similarity(self.path([1, 2, 3]), self.path([2, 3, 4])) == 0.5

    def test_empty_layers(self):
        assert cdp.path_similarity(self.path([]), self.path([])) == 1.0
        assert cdp.path_similarity(self.path([]), self.path([1])) == 0.0

    def test_symmetric_and_bounded(self, net, blobs_test):
        paths = [cdp.extract_cdp(lrp.relevance(net, x), 0.8)
                 for x in blobs_test.samples[:15]]
        for p in paths:
            for q in paths:
                s = cdp.path_similarity(p, q)
                assert 0.0 <= s <= 1.0
                assert s == cdp.path_similarity(q, p)
        assert cdp.path_similarity(paths[0], paths[0]) == 1.0


class TestMaskEval:
    def test_cdp_vs_ncdp_separation(self, net, blobs_test):
        data = tk.LabeledDataset(samples=blobs_test.samples[:60])
        inc_c = cdp.mask_eval(net, data, 0.9, target="cdp")
        inc_nc = cdp.mask_eval(net, data, 0.9, target="ncdp")
        assert inc_c >= inc_nc + 0.4, f"Inc.C {inc_c} vs Inc.NC {inc_nc}"

    def test_empty_paths_are_noop(self):
        # Zero inputs through a bias-free net: all relevance is zero, no
        # neuron qualifies, the mask is empty, nothing can change.
        rng = np.random.default_rng(0)
        layers = [nm.Layer(kind="dense", weight=rng.normal(size=(6, 3)).astype(np.float32),
                           bias=np.zeros(6, dtype=np.float32), fused=("relu",)),
                  nm.Layer(kind="dense", weight=rng.normal(size=(2, 6)).astype(np.float32),
                           bias=np.zeros(2, dtype=np.float32))]
        m = nm.Model(layers=layers, input_shape=(3,), class_count=2)
        data = tk.LabeledDataset(samples=np.zeros((5, 3), dtype=np.float32))
        assert cdp.mask_eval(m, data, 0.9, target="cdp") == 0.0

    def test_empty_dataset_rejected(self, net):
        with pytest.raises(ShapeError, match="nonempty"):
            cdp.mask_eval(net, tk.LabeledDataset(samples=np.zeros((0, 2))), 0.9)

    def test_workers_do_not_change_result(self, net, blobs_test):
        data = tk.LabeledDataset(samples=blobs_test.samples[:20])
        assert cdp.mask_eval(net, data, 0.9) == cdp.mask_eval(net, data, 0.9, workers=4)


class TestQuintiles:
    def test_rates_in_range_and_ordered_ends(self, net, blobs_test):
        data = tk.LabeledDataset(samples=blobs_test.samples[:60])
        rates = cdp.quintile_mask_eval(net, data, 0.9)
        assert len(rates) == 5
        assert all(0.0 <= r <= 1.0 for r in rates)
        assert rates[0] >= rates[4], f"band rates {rates}"

    def test_band_split_remainder_goes_early(self):
        # 7 units over 5 bands: sizes 2,2,1,1,1.
        chunks = np.array_split(np.arange(7), 5)
        assert [len(c) for c in chunks] == [2, 2, 1, 1, 1]
