import numpy as np
import pytest

import npcov.abstraction as ab
import npcov.trainkit as tk
from npcov.cdp import CriticalPath, extract_cdp, path_similarity
from npcov.errors import GraphModelMismatch, LoadError, ShapeError
from npcov.lrp import relevance
from npcov.model import coverage_layer_sizes, forward, load_model, to_bytes


def path_of(layers, alpha=0.9):
    return CriticalPath(layers=[np.asarray(l, dtype=np.int64) for l in layers],
                        alpha=alpha, sample_ref=None)


class TestEncode:
    def test_round_trip(self, net):
        sizes = coverage_layer_sizes(net)
        p = path_of([[0, 3], [1, 2, 15]])
        bits = ab.encode(p, net)
        assert bits.shape == (sum(sizes),)
        back = ab.decode_bits(bits, sizes)
        for got, want in zip(back, p.layers):
            np.testing.assert_array_equal(got, want)

    def test_bit_positions(self, net):
        # Unit u of layer l lands at offset(previous layers) + u.
        bits = ab.encode(path_of([[1], [0]]), net)
        assert bits[1] and bits[16]
        assert bits.sum() == 2

    def test_layer_count_checked(self, net):
        with pytest.raises(ShapeError):
            ab.encode(path_of([[0]]), net)


class TestMerge:
    def test_member_fraction_weights(self):
        # A unit held by 3 of 4 members weighs 0.75.
        members = [path_of([[0, 1]]), path_of([[0, 1]]),
                   path_of([[0, 1]]), path_of([[1, 2]])]
        raw = ab.merge(members)
        np.testing.assert_array_equal(raw.units[0], [0, 1, 2])
        np.testing.assert_allclose(raw.weights[0], [0.75, 1.0, 0.25])

    def test_single_member_all_ones(self):
        raw = ab.merge([path_of([[2, 5], [0]])])
        for ws in raw.weights:
            np.testing.assert_array_equal(ws, np.ones_like(ws))

    def test_counting_identity(self):
        # Sum of weight * member count equals total unit incidences.
        rng = np.random.default_rng(7)
        members = [path_of([sorted(rng.choice(10, size=rng.integers(1, 6),
                                              replace=False))])
                   for _ in range(6)]
        raw = ab.merge(members)
        total = sum(len(p.layers[0]) for p in members)
        recovered = float(sum(ws.sum() for ws in raw.weights)) * len(members)
        assert recovered == pytest.approx(total)

    def test_needs_members(self):
        with pytest.raises(ShapeError):
            ab.merge([])

    def test_layer_count_must_agree(self):
        with pytest.raises(ShapeError):
            ab.merge([path_of([[0]]), path_of([[0], [1]])])


class TestFilterBeta:
    def test_strictly_above(self):
        raw = ab.merge([path_of([[0, 1]]), path_of([[0, 1]]),
                        path_of([[0, 1]]), path_of([[1, 2]])])
        kept = ab.filter_beta(raw, 0.75)
        # 0.75 is not strictly above 0.75: unit 0 drops, unit 1 stays.
        np.testing.assert_array_equal(kept.units[0], [1])
        kept_low = ab.filter_beta(raw, 0.5)
        np.testing.assert_array_equal(kept_low.units[0], [0, 1])

    def test_beta_zero_keeps_everything(self):
        raw = ab.merge([path_of([[0]]), path_of([[3]])])
        kept = ab.filter_beta(raw, 0.0)
        np.testing.assert_array_equal(kept.units[0], [0, 3])

    def test_beta_at_or_above_max_empties(self):
        raw = ab.merge([path_of([[0]]), path_of([[1]])])
        assert ab.filter_beta(raw, 0.5).is_empty()

    def test_beta_range(self):
        raw = ab.merge([path_of([[0]])])
        with pytest.raises(ShapeError):
            ab.filter_beta(raw, 1.0)
        with pytest.raises(ShapeError):
            ab.filter_beta(raw, -0.1)


class TestKMeans:
    def test_two_obvious_groups(self):
        a = np.zeros((8, 6), dtype=bool)
        a[:4, :3] = True
        a[4:, 3:] = True
        res = ab.kmeans(a, 2, seed=0)
        assert len(set(res.labels[:4])) == 1
        assert len(set(res.labels[4:])) == 1
        assert res.labels[0] != res.labels[4]
        assert res.empty_clusters == []

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.integers(0, 2, size=(40, 12)).astype(bool)
        r1 = ab.kmeans(x, 4, seed=9)
        r2 = ab.kmeans(x, 4, seed=9)
        np.testing.assert_array_equal(r1.labels, r2.labels)
        np.testing.assert_array_equal(r1.centroids, r2.centroids)

    def test_fewer_vectors_than_k(self):
        x = np.asarray([[1.0, 0.0], [0.0, 1.0]])
        res = ab.kmeans(x, 5, seed=0)
        assert sorted(res.empty_clusters) == [2, 3, 4]
        assert set(res.labels) == {0, 1}

    def test_no_empty_clusters_when_enough_points(self):
        rng = np.random.default_rng(11)
        for seed in range(5):
            x = rng.integers(0, 2, size=(30, 8)).astype(float)
            res = ab.kmeans(x, 6, seed=seed)
            assert res.empty_clusters == []
            assert set(res.labels) == set(range(6))

    def test_centroids_are_means(self):
        rng = np.random.default_rng(2)
        x = rng.random((25, 5))
        res = ab.kmeans(x, 3, seed=1)
        for c in range(3):
            np.testing.assert_allclose(res.centroids[c],
                                       x[res.labels == c].mean(axis=0))

    def test_input_checks(self):
        with pytest.raises(ShapeError):
            ab.kmeans(np.empty((0, 4)), 2)
        with pytest.raises(ShapeError):
            ab.kmeans(np.ones((4, 2)), 0)


@pytest.fixture(scope="module")
def graph(net, blobs_train):
    return ab.build_decision_graph(net, blobs_train, alpha=0.9, k=3, beta=0.5,
                                   seed=5)


class TestBuildGraph:
    def test_structure(self, net, graph, blobs_train):
        assert len(graph.clusters) == net.class_count
        assert all(len(per_class) == 3 for per_class in graph.clusters)
        assert graph.layer_sizes == coverage_layer_sizes(net)
        total = sum(c.member_count() for c in graph.all_clusters())
        assert total == len(blobs_train)

    def test_members_partition_their_class(self, net, graph, blobs_train):
        for y, per_class in enumerate(graph.clusters):
            ids = np.concatenate([c.member_ids for c in per_class])
            assert len(ids) == len(set(ids.tolist()))
            for i in ids:
                assert forward(net, blobs_train.samples[i]).predicted_class == y

    def test_weights_within_unit_interval(self, graph):
        for c in graph.all_clusters():
            for ws in c.abstract.weights:
                assert np.all(ws > graph.beta)
                assert np.all(ws <= 1.0)

    def test_member_bits_match_paths(self, net, graph, blobs_train):
        cluster = next(c for c in graph.all_clusters() if c.member_count() > 0)
        i = int(cluster.member_ids[0])
        p = extract_cdp(relevance(net, blobs_train.samples[i]), graph.alpha)
        np.testing.assert_array_equal(cluster.member_bits[0],
                                      ab.encode(p, net))

    def test_member_acts_match_forward(self, net, graph, blobs_train):
        cluster = next(c for c in graph.all_clusters() if c.member_count() > 1)
        i = int(cluster.member_ids[1])
        trace = forward(net, blobs_train.samples[i])
        for l, us in enumerate(cluster.abstract.units):
            np.testing.assert_array_equal(cluster.member_acts[l][1],
                                          trace.activations[l][us])

    def test_same_seed_same_bytes(self, net, blobs_train):
        g1 = ab.build_decision_graph(net, blobs_train, alpha=0.9, k=2,
                                     beta=0.5, seed=3)
        g2 = ab.build_decision_graph(net, blobs_train, alpha=0.9, k=2,
                                     beta=0.5, seed=3)
        assert ab.save_graph(g1) == ab.save_graph(g2)

    def test_k1_is_merged_class_path(self, net, graph, blobs_train):
        g1 = ab.build_decision_graph(net, blobs_train, alpha=0.9, k=1,
                                     beta=0.0, seed=0)
        for y, per_class in enumerate(g1.clusters):
            assert len(per_class) == 1
            cluster = per_class[0]
            if cluster.member_count() == 0:
                continue
            paths = [extract_cdp(relevance(net, blobs_train.samples[i]), 0.9)
                     for i in cluster.member_ids]
            raw = ab.merge(paths)
            for got_u, want_u in zip(cluster.abstract.units, raw.units):
                np.testing.assert_array_equal(got_u, want_u)
            for got_w, want_w in zip(cluster.abstract.weights, raw.weights):
                np.testing.assert_allclose(got_w, want_w)

    def test_high_beta_flags_empty_abstract(self, net, blobs_train):
        g = ab.build_decision_graph(net, blobs_train, alpha=0.9, k=1,
                                    beta=0.999, seed=0)
        # Weights never exceed 1.0, so a near-one beta should empty at
        # least one cluster unless every member shares an identical path.
        for (y, c) in g.flags["empty_abstract"]:
            assert g.clusters[y][c].abstract.is_empty()

    def test_empty_dataset_rejected(self, net):
        empty = tk.LabeledDataset(samples=np.empty((0, 2), dtype=np.float32),
                                  labels=np.empty(0, dtype=np.uint32))
        with pytest.raises(ShapeError):
            ab.build_decision_graph(net, empty, alpha=0.9, k=2, beta=0.5)

    def test_workers_do_not_change_result(self, net, blobs_train):
        g1 = ab.build_decision_graph(net, blobs_train, alpha=0.8, k=2,
                                     beta=0.5, seed=1, workers=1)
        g4 = ab.build_decision_graph(net, blobs_train, alpha=0.8, k=2,
                                     beta=0.5, seed=1, workers=4)
        assert ab.save_graph(g1) == ab.save_graph(g4)

    def test_clusters_separate_paths(self, net, graph, blobs_train):
        # Members of one cluster should on average look more alike than
        # members drawn across clusters of the same class.
        per_class = graph.clusters[0]
        filled = [c for c in per_class if c.member_count() >= 2]
        if len(filled) < 2:
            pytest.skip("class 0 collapsed to one cluster")
        paths = {}
        for c in filled:
            sizes = graph.layer_sizes
            paths[c.cluster_id] = [
                CriticalPath(layers=ab.decode_bits(b, sizes), alpha=graph.alpha,
                             sample_ref=None) for b in c.member_bits[:10]]
        intra, inter = [], []
        keys = sorted(paths)
        for a in keys:
            ps = paths[a]
            intra.extend(path_similarity(p, q)
                         for i, p in enumerate(ps) for q in ps[i + 1:])
            for b in keys:
                if b > a:
                    inter.extend(path_similarity(p, q)
                                 for p in paths[a] for q in paths[b])
        assert np.mean(intra) >= np.mean(inter)


class TestAbstractMaskEval:
    def test_rates_shape_and_range(self, net, graph, blobs_train):
        rates = ab.abstract_mask_eval(net, graph, blobs_train, target="cdp")
        assert set(rates) == {(y, c) for y in range(net.class_count)
                              for c in range(graph.k)}
        for key, r in rates.items():
            y, c = key
            if graph.clusters[y][c].member_count() == 0:
                assert r is None
            else:
                assert 0.0 <= r <= 1.0

    def test_critical_mask_beats_complement(self, net, graph, blobs_train):
        cdp = ab.abstract_mask_eval(net, graph, blobs_train, target="cdp")
        ncdp = ab.abstract_mask_eval(net, graph, blobs_train, target="ncdp")
        got = [(cdp[k], ncdp[k]) for k in cdp if cdp[k] is not None]
        assert np.mean([a for a, _ in got]) > np.mean([b for _, b in got])

    def test_target_checked(self, net, graph, blobs_train):
        with pytest.raises(ShapeError):
            ab.abstract_mask_eval(net, graph, blobs_train, target="both")

    def test_model_mismatch_rejected(self, graph, blobs_train):
        other = tk.train_sgd([2, 4, 3], blobs_train, tk.TrainConfig(epochs=1))
        with pytest.raises(GraphModelMismatch):
            ab.abstract_mask_eval(other, graph, blobs_train)


class TestGraphContainer:
    def test_round_trip_bytes_identical(self, net, graph):
        blob = ab.save_graph(graph)
        loaded = ab.load_graph(blob, net)
        assert ab.save_graph(loaded) == blob

    def test_round_trip_preserves_content(self, net, graph):
        loaded = ab.load_graph(ab.save_graph(graph), net)
        assert loaded.alpha == graph.alpha
        assert loaded.k == graph.k
        assert loaded.beta == graph.beta
        assert loaded.layer_sizes == graph.layer_sizes
        for got, want in zip(loaded.all_clusters(), graph.all_clusters()):
            np.testing.assert_array_equal(got.member_ids, want.member_ids)
            np.testing.assert_array_equal(got.member_bits, want.member_bits)
            for ga, wa in zip(got.member_acts, want.member_acts):
                np.testing.assert_array_equal(ga, wa)
            for gu, wu in zip(got.abstract.units, want.abstract.units):
                np.testing.assert_array_equal(gu, wu)

    def test_file_round_trip(self, net, graph, tmp_path):
        path = tmp_path / "g.npcg"
        ab.save_graph_file(graph, path)
        loaded = ab.load_graph(path, net)
        assert ab.save_graph(loaded) == ab.save_graph(graph)

    def test_wrong_model_rejected(self, graph, blobs_train):
        other = tk.train_sgd([2, 4, 3], blobs_train, tk.TrainConfig(epochs=1))
        with pytest.raises(GraphModelMismatch):
            ab.load_graph(ab.save_graph(graph), other)

    def test_include_input_mismatch_rejected(self, net, graph):
        flipped = load_model(to_bytes(net), include_input=True)
        assert flipped.content_hash == net.content_hash
        with pytest.raises(GraphModelMismatch):
            ab.load_graph(ab.save_graph(graph), flipped)

    def test_bad_magic(self, net, graph):
        blob = bytearray(ab.save_graph(graph))
        blob[:4] = b"XXXX"
        with pytest.raises(LoadError, match="byte 0"):
            ab.load_graph(bytes(blob), net)

    def test_truncation(self, net, graph):
        blob = ab.save_graph(graph)
        with pytest.raises(LoadError, match="truncated"):
            ab.load_graph(blob[:10], net)
        with pytest.raises(LoadError, match="truncated"):
            ab.load_graph(blob[:-5], net)

    def test_size_tracks_members(self, net, blobs_all):
        half = tk.LabeledDataset(samples=blobs_all.samples[:100],
                                 labels=blobs_all.labels[:100])
        full = tk.LabeledDataset(samples=np.concatenate([blobs_all.samples[:100]] * 2),
                                 labels=np.concatenate([blobs_all.labels[:100]] * 2))
        g_half = ab.build_decision_graph(net, half, alpha=0.9, k=1, beta=0.5, seed=0)
        g_full = ab.build_decision_graph(net, full, alpha=0.9, k=1, beta=0.5, seed=0)
        ratio = len(ab.save_graph(g_full)) / len(ab.save_graph(g_half))
        assert 1.5 < ratio < 2.5

    def test_include_input_graph_round_trip(self, blobs_train):
        wide = tk.train_sgd([2, 8, 3], blobs_train, tk.TrainConfig(epochs=5))
        wide_in = load_model(to_bytes(wide), include_input=True)
        g = ab.build_decision_graph(wide_in, blobs_train, alpha=0.9, k=2,
                                    beta=0.4, seed=2)
        assert g.include_input
        assert g.layer_sizes[0] == 2
        loaded = ab.load_graph(ab.save_graph(g), wide_in)
        assert loaded.include_input
        assert ab.save_graph(loaded) == ab.save_graph(g)
