import numpy as np
import pytest

import npcov.comparators as cmp
import npcov.trainkit as tk
from npcov.errors import ShapeError
from npcov.model import Layer, Model, coverage_layer_sizes, forward


def f32(a):
    return np.asarray(a, dtype=np.float32)


@pytest.fixture(scope="module")
def constant_net():
    # Zero weights: every activation is the (relu'd) bias, whatever the input.
    return Model(layers=[
        Layer(kind="dense", weight=f32(np.zeros((4, 2))),
              bias=f32([0.5, 1.0, 0.25, 2.0]), fused=("relu",)),
        Layer(kind="dense", weight=f32(np.zeros((2, 4))), bias=f32([0.0, 0.0])),
    ], input_shape=(2,), class_count=2)


@pytest.fixture(scope="module")
def identity_net():
    return Model(layers=[
        Layer(kind="dense", weight=f32(np.eye(2)), bias=f32([0.0, 0.0]),
              fused=("relu",)),
        Layer(kind="dense", weight=f32(np.eye(2)), bias=f32([0.0, 0.0])),
    ], input_shape=(2,), class_count=2)


@pytest.fixture(scope="module")
def fixture_ranges(net, blobs_train):
    return cmp.profile_ranges(net, blobs_train)


class TestProfileRanges:
    def test_constant_network_collapses(self, constant_net):
        data = np.asarray([[1.0, -3.0], [0.0, 7.0]], dtype=np.float32)
        r = cmp.profile_ranges(constant_net, data)
        np.testing.assert_array_equal(r.low[0], r.high[0])
        np.testing.assert_array_equal(r.low[0], f32([0.5, 1.0, 0.25, 2.0]))
        assert r.degenerate_count() == 4

    def test_matches_naive_recomputation(self, net, blobs_train, fixture_ranges):
        lows = [np.full(s, np.inf) for s in coverage_layer_sizes(net)]
        highs = [np.full(s, -np.inf) for s in coverage_layer_sizes(net)]
        for x in blobs_train.samples:
            for l, a in enumerate(forward(net, x).activations):
                lows[l] = np.minimum(lows[l], a)
                highs[l] = np.maximum(highs[l], a)
        for l in range(len(lows)):
            np.testing.assert_array_equal(fixture_ranges.low[l],
                                          lows[l].astype(np.float32))
            np.testing.assert_array_equal(fixture_ranges.high[l],
                                          highs[l].astype(np.float32))

    def test_superset_contains_subset(self, net, blobs_train):
        sub = cmp.profile_ranges(net, blobs_train.samples[:50])
        sup = cmp.profile_ranges(net, blobs_train.samples)
        for l in range(len(sub.low)):
            assert np.all(sup.low[l] <= sub.low[l])
            assert np.all(sup.high[l] >= sub.high[l])

    def test_empty_data_rejected(self, net):
        with pytest.raises(ShapeError):
            cmp.profile_ranges(net, np.empty((0, 2), dtype=np.float32))

    def test_inverted_range_rejected(self):
        with pytest.raises(ShapeError):
            cmp.ActivationRanges(low=[f32([1.0])], high=[f32([0.0])])


class TestNeuronCoverage:
    def test_positive_activations_threshold_zero(self, constant_net):
        xs = np.zeros((3, 2), dtype=np.float32)
        assert cmp.nc(constant_net, xs, threshold=0.0) == 1.0

    def test_threshold_above_everything(self, constant_net):
        xs = np.zeros((3, 2), dtype=np.float32)
        assert cmp.nc(constant_net, xs, threshold=2.5) == 0.0

    def test_exceeds_means_strictly(self, identity_net):
        xs = np.asarray([[0.5, 0.5]], dtype=np.float32)
        assert cmp.nc(identity_net, xs, threshold=0.5) == 0.0
        assert cmp.nc(identity_net, xs, threshold=0.49) == 1.0

    def test_monotone_under_union(self, net, blobs_test):
        for thr in cmp.NC_THRESHOLDS:
            small = cmp.nc(net, blobs_test.samples[:10], thr)
            large = cmp.nc(net, blobs_test.samples[:40], thr)
            assert 0.0 <= small <= large <= 1.0

    def test_workers_do_not_change_result(self, net, blobs_test):
        xs = blobs_test.samples[:20]
        assert (cmp.nc_hits(net, xs, 0.2, workers=1)
                == cmp.nc_hits(net, xs, 0.2, workers=4))


class TestKmnc:
    def test_single_input_hits_one_section_per_neuron(self, identity_net):
        train = np.asarray([[1.0, 1.0], [2.0, 2.0]], dtype=np.float32)
        r = cmp.profile_ranges(identity_net, train)
        assert r.degenerate_count() == 0
        xs = np.asarray([[1.3, 1.7]], dtype=np.float32)
        for k in (10, 1000):
            assert cmp.kmnc(identity_net, xs, r, k=k) == pytest.approx(1 / k)

    def test_extreme_values_land_in_end_sections(self, identity_net):
        train = np.asarray([[1.0, 1.0], [2.0, 2.0]], dtype=np.float32)
        r = cmp.profile_ranges(identity_net, train)
        hits = cmp.kmnc_hits(identity_net,
                             np.asarray([[1.0, 2.0]], dtype=np.float32), r, k=10)
        assert hits == {(0, 0, 0), (0, 1, 9)}

    def test_out_of_range_adds_nothing(self, identity_net):
        train = np.asarray([[1.0, 1.0], [2.0, 2.0]], dtype=np.float32)
        r = cmp.profile_ranges(identity_net, train)
        xs = np.asarray([[5.0, 0.5]], dtype=np.float32)
        assert cmp.kmnc(identity_net, xs, r, k=10) == 0.0

    def test_degenerate_neuron_counts_only_its_point(self, constant_net):
        xs = np.zeros((2, 2), dtype=np.float32)
        r = cmp.profile_ranges(constant_net, xs)
        # Same constant suite reproduces the point values exactly.
        assert cmp.kmnc(constant_net, xs, r, k=10) == 1.0

    def test_matches_naive_recomputation(self, net, blobs_test, fixture_ranges):
        k = 50
        xs = blobs_test.samples[:30]
        got = cmp.kmnc_hits(net, xs, fixture_ranges, k=k)
        want = set()
        for x in xs:
            for l, a in enumerate(forward(net, x).activations):
                for u in range(len(a)):
                    lo = float(fixture_ranges.low[l][u])
                    hi = float(fixture_ranges.high[l][u])
                    v = float(a[u])
                    if lo == hi:
                        if v == lo:
                            want.update((l, u, s) for s in range(k))
                    elif lo <= v <= hi:
                        s = min(int((v - lo) / (hi - lo) * k), k - 1)
                        want.add((l, u, s))
        assert got == want

    def test_monotone_under_union(self, net, blobs_test, fixture_ranges):
        small = cmp.kmnc(net, blobs_test.samples[:10], fixture_ranges, k=100)
        large = cmp.kmnc(net, blobs_test.samples[:40], fixture_ranges, k=100)
        assert 0.0 <= small <= large <= 1.0

    def test_bad_k_rejected(self, identity_net):
        r = cmp.profile_ranges(identity_net,
                               np.asarray([[1.0, 1.0]], dtype=np.float32))
        with pytest.raises(ShapeError):
            cmp.kmnc(identity_net, np.zeros((1, 2), dtype=np.float32), r, k=0)

    def test_mismatched_ranges_rejected(self, net, identity_net):
        r = cmp.profile_ranges(identity_net,
                               np.asarray([[1.0, 1.0]], dtype=np.float32))
        with pytest.raises(ShapeError):
            cmp.kmnc(net, np.zeros((1, 2), dtype=np.float32), r)


class TestNbc:
    def test_training_data_escapes_nothing(self, net, blobs_train,
                                           fixture_ranges):
        assert cmp.nbc(net, blobs_train.samples, fixture_ranges) == 0.0

    def test_below_hits_low_corner_only(self, identity_net):
        train = np.asarray([[1.0, 1.0], [2.0, 2.0]], dtype=np.float32)
        r = cmp.profile_ranges(identity_net, train)
        hits, clamped = cmp.nbc_hits(identity_net,
                                     np.asarray([[0.5, 1.5]], dtype=np.float32), r)
        assert hits == {(0, 0, 0, 0)}
        assert clamped == 0
        assert cmp.nbc(identity_net,
                       np.asarray([[0.5, 0.5]], dtype=np.float32), r) == 0.5

    def test_above_hits_high_corner(self, identity_net):
        train = np.asarray([[1.0, 1.0], [2.0, 2.0]], dtype=np.float32)
        r = cmp.profile_ranges(identity_net, train)
        hits, _ = cmp.nbc_hits(identity_net,
                               np.asarray([[3.0, 3.0]], dtype=np.float32), r)
        assert hits == {(0, 0, 1, 0), (0, 1, 1, 0)}

    def test_boundary_values_are_inside(self, identity_net):
        train = np.asarray([[1.0, 1.0], [2.0, 2.0]], dtype=np.float32)
        r = cmp.profile_ranges(identity_net, train)
        xs = np.asarray([[1.0, 2.0]], dtype=np.float32)
        assert cmp.nbc(identity_net, xs, r) == 0.0

    def test_banded_variant_places_bands(self, identity_net):
        # Range [1, 2] split into ten 0.1-wide bands beyond each corner.
        train = np.asarray([[1.0, 1.0], [2.0, 2.0]], dtype=np.float32)
        r = cmp.profile_ranges(identity_net, train)
        hits, clamped = cmp.nbc_hits(
            identity_net, np.asarray([[0.65, 2.35]], dtype=np.float32), r,
            sections=10)
        assert hits == {(0, 0, 0, 3), (0, 1, 1, 3)}
        assert clamped == 0

    def test_banded_overflow_clamps(self, identity_net):
        # Range [10, 11]: an activation of 0 sits a hundred band-widths
        # below the low corner, far past the ten modelled bands.
        train = np.asarray([[10.0, 10.0], [11.0, 11.0]], dtype=np.float32)
        r = cmp.profile_ranges(identity_net, train)
        hits, clamped = cmp.nbc_hits(
            identity_net, np.asarray([[-50.0, 10.5]], dtype=np.float32), r,
            sections=10)
        assert hits == {(0, 0, 0, 9)}
        assert clamped == 1

    def test_monotone_under_union(self, net, blobs_all, fixture_ranges):
        rng = np.random.default_rng(0)
        noisy = blobs_all.samples + rng.normal(0, 3, blobs_all.samples.shape) \
            .astype(np.float32)
        small = cmp.nbc(net, noisy[:20], fixture_ranges)
        large = cmp.nbc(net, noisy[:80], fixture_ranges)
        assert 0.0 <= small <= large <= 1.0


class TestBaselineReport:
    def test_shared_shape(self, net, blobs_test, fixture_ranges):
        for kind, kwargs in (("nc", {"threshold": 0.2}),
                             ("kmnc", {"ranges": fixture_ranges, "k": 100}),
                             ("nbc", {"ranges": fixture_ranges})):
            rep = cmp.baseline_report(kind, net, blobs_test.samples[:10], **kwargs)
            assert set(rep) == {"criterion", "m", "u", "cells_covered",
                                "cells_total", "ratio", "clamped_count",
                                "per_class"}
            assert rep["criterion"] == kind
            assert rep["ratio"] == pytest.approx(
                rep["cells_covered"] / rep["cells_total"])

    def test_ranges_required(self, net, blobs_test):
        with pytest.raises(ShapeError):
            cmp.baseline_report("kmnc", net, blobs_test.samples[:2])
        with pytest.raises(ShapeError):
            cmp.baseline_report("nbc", net, blobs_test.samples[:2])

    def test_unknown_kind(self, net, blobs_test):
        with pytest.raises(ShapeError):
            cmp.baseline_report("snpc", net, blobs_test.samples[:2])
