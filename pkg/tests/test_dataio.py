"""Dataset JSONL and hop-mask sidecar round trips, including golden bytes."""

import struct

import numpy as np
import pytest

from gred.dataio import (preprocess_dataset, read_dataset, read_masks,
                         sidecar_path, truncate_partition, write_dataset,
                         write_masks)
from gred.errors import ValidationError
from gred.graphs import (Graph, all_pairs_shortest_distances,
                         gen_tree_neighbors_match, hop_partition, path_graph)


def test_jsonl_roundtrip_categorical(tmp_path):
    g = Graph(3, path_graph(3), node_ids=np.array([0, 2, 1]), vocab_size=3,
              graph_label=1.5)
    path = tmp_path / "d.jsonl"
    write_dataset(path, [g])
    (loaded,) = read_dataset(path)
    assert loaded.num_nodes == 3
    assert loaded.edges == g.edges
    np.testing.assert_array_equal(loaded.node_ids, g.node_ids)
    assert loaded.graph_label == 1.5
    assert loaded.vocab_size == 3  # inferred from max id


def test_jsonl_roundtrip_vector_features_and_node_labels(tmp_path):
    feat = np.array([[0.5, -1.0], [2.0, 0.25], [0.0, 0.0]])
    labels = np.array([2, -1, -1])
    g = Graph(3, path_graph(3), node_feat=feat, node_labels=labels)
    path = tmp_path / "d.jsonl"
    write_dataset(path, [g])
    (loaded,) = read_dataset(path)
    np.testing.assert_array_equal(loaded.node_feat, feat)
    np.testing.assert_array_equal(loaded.node_labels, labels)
    assert loaded.graph_label == 2  # single labeled node doubles as graph label


def test_jsonl_rejects_mixed_feature_kinds(tmp_path):
    path = tmp_path / "d.jsonl"
    write_dataset(path, [Graph(2, ((0, 1),), node_ids=np.array([0, 0]))])
    with open(path, "a", encoding="utf-8") as f:
        f.write('{"num_nodes":2,"edges":[[0,1]],"node_feat":[[0.5],[1.0]]}\n')
    with pytest.raises(ValidationError, match="mixed"):
        read_dataset(path)


def test_jsonl_rejects_bad_json(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("{oops\n")
    with pytest.raises(ValidationError, match="bad JSON"):
        read_dataset(path)


def test_sidecar_golden_bytes_for_p3(tmp_path):
    # P3 = 0-1-2, K=2. Rows are v*(K+1)+k:
    # v=0: [0] [1] [2] ; v=1: [1] [0,2] [] ; v=2: [2] [1] [0]
    g = Graph(3, path_graph(3), node_ids=np.zeros(3, dtype=np.int64))
    part = hop_partition(all_pairs_shortest_distances(g), 2)
    path = tmp_path / "p3.masks"
    write_masks(path, [part], 2)

    offsets = [0, 1, 2, 3, 4, 6, 6, 7, 8, 9]
    indices = [0, 1, 2, 1, 0, 2, 2, 1, 0]
    expected = (
        b"GREDMASK"
        + struct.pack("<III", 1, 2, 1)       # version, K, num_graphs
        + struct.pack("<II", 3, 9)           # n=3 nodes, nnz=9
        + struct.pack("<10I", *offsets)
        + struct.pack("<9I", *indices)
    )
    assert path.read_bytes() == expected


def test_sidecar_roundtrip_and_determinism(tmp_path):
    graphs = gen_tree_neighbors_match(2, seed=1, count=5)
    parts = preprocess_dataset(graphs, 3)
    p1, p2 = tmp_path / "a.masks", tmp_path / "b.masks"
    write_masks(p1, parts, 3)
    write_masks(p2, parts, 3)
    assert p1.read_bytes() == p2.read_bytes()
    k, loaded = read_masks(p1)
    assert k == 3
    assert len(loaded) == len(parts)
    for orig, back in zip(parts, loaded):
        assert orig.hops == back.hops
        np.testing.assert_array_equal(orig.ecc, back.ecc)


def test_read_masks_missing_file_is_actionable(tmp_path):
    with pytest.raises(ValidationError, match="preprocess"):
        read_masks(tmp_path / "nope.masks")


def test_truncate_partition():
    g = Graph(4, path_graph(4), node_ids=np.zeros(4, dtype=np.int64))
    part = hop_partition(all_pairs_shortest_distances(g), 3)
    small = truncate_partition(part, 1)
    assert small.k_max == 1
    assert small.hops[0] == [[0], [1]]
    assert small.ecc.max() == 1
    with pytest.raises(ValidationError, match="re-run preprocess"):
        truncate_partition(part, 5)


def test_sidecar_path_suffix():
    assert sidecar_path("data/x.jsonl").endswith("x.jsonl.masks")
