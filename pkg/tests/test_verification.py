"""Verification module: WL oracle, injectivity constructions, cross-checks."""

import numpy as np
import pytest

from gred.errors import ValidationError
from gred.graphs import (Graph, complete_graph, cycle_graph,
                         gen_wl_counterexample_pair, path_graph)
from gred.verification import (bfs_floyd_warshall_check,
                               gred_wl_separation_check,
                               injectivity_adversarial_case,
                               injectivity_search_check, relative_error,
                               run_verification_suite, scan_triangle_check,
                               vandermonde_bijectivity_check,
                               vandermonde_det_formula, vandermonde_matrix,
                               wl_histograms_equal, wl_refine, wl_refine_joint)


def ids_graph(n, edges):
    return Graph(n, edges, node_ids=np.zeros(n, dtype=np.int64), vocab_size=1)


# ---------------------------------------------------------------------------
# 1-WL


def test_wl_k3_vs_p3_differ_after_one_iteration():
    k3 = ids_graph(3, complete_graph(3))
    p3 = ids_graph(3, path_graph(3))
    ra, rb = wl_refine_joint([k3, p3])
    assert ra.histograms[0] == rb.histograms[0]  # constant features
    assert ra.histograms[1] != rb.histograms[1]
    equal, _ = wl_histograms_equal(k3, p3)
    assert not equal


def test_wl_counterexample_pair_identical_at_every_iteration():
    a, b = gen_wl_counterexample_pair()
    equal, iters = wl_histograms_equal(a, b)
    assert equal
    assert iters >= 1


def test_wl_single_node_stable_at_zero():
    res = wl_refine(ids_graph(1, ()))
    assert res.stable_at == 0
    assert len(res.final_histogram) == 1


def test_wl_refinement_only_splits():
    rng = np.random.default_rng(4)
    from gred.graphs import gen_random_connected

    for _ in range(10):
        g = gen_random_connected(rng, int(rng.integers(3, 12)), 3)
        res = wl_refine(g)
        for earlier, later in zip(res.colorings, res.colorings[1:]):
            # nodes sharing a later color must share every earlier color
            for c in set(later.tolist()):
                members = np.nonzero(later == c)[0]
                assert len(set(earlier[members].tolist())) == 1


def test_wl_stabilizes_within_node_count():
    g = ids_graph(7, path_graph(7))
    res = wl_refine(g)
    assert res.stable_at <= 7


def test_wl_respects_initial_features():
    g1 = Graph(2, ((0, 1),), node_ids=np.array([0, 0]), vocab_size=2)
    g2 = Graph(2, ((0, 1),), node_ids=np.array([0, 1]), vocab_size=2)
    equal, _ = wl_histograms_equal(g1, g2)
    assert not equal


# ---------------------------------------------------------------------------
# Vandermonde / bijective construction


def test_vandermonde_k1_hand_case():
    rep = vandermonde_bijectivity_check(d=1, k_max=1, lambdas=[1.0, -1.0], trials=3)
    assert rep["determinant"] == pytest.approx(2.0)
    assert rep["determinant_formula"] == pytest.approx(2.0)
    assert rep["max_reconstruction_error"] < 1e-12


def test_vandermonde_repeated_lambda_rejected():
    with pytest.raises(ValidationError, match="determinant zero"):
        vandermonde_bijectivity_check(d=1, k_max=1, lambdas=[0.5, 0.5])


def test_vandermonde_well_spread_complex_case():
    lambdas = 0.9 * np.exp(2j * np.pi * np.arange(4) / 4)
    rep = vandermonde_bijectivity_check(d=2, k_max=3, lambdas=lambdas, trials=5)
    assert rep["max_reconstruction_error"] < 1e-8
    assert rep["det_relative_gap"] < 1e-10
    assert rep["condition_number"] < 1e3  # near-uniform phases condition well


def test_vandermonde_matrix_layout():
    m = vandermonde_matrix([2.0, 3.0])
    np.testing.assert_array_equal(m, np.array([[2.0, 1.0], [3.0, 1.0]]))
    assert vandermonde_det_formula([2.0, 3.0]) == pytest.approx(-1.0)


def test_conditioning_degrades_with_clustered_real_lambdas():
    spread = vandermonde_bijectivity_check(
        d=1, k_max=3, lambdas=0.9 * np.exp(2j * np.pi * np.arange(4) / 4))
    clustered = vandermonde_bijectivity_check(
        d=1, k_max=3, lambdas=[0.90, 0.91, 0.92, 0.93])
    assert clustered["condition_number"] > 10 * spread["condition_number"]


# ---------------------------------------------------------------------------
# countable-injective construction


def test_injectivity_single_feature_always_injective():
    rep = injectivity_search_check(np.array([1.3]), k_max=2, n_trials=50, seed=0)
    assert rep["fraction_nonzero"] == 1.0


def test_injectivity_binary_alphabet_margin_half_at_lambda_half():
    rep = injectivity_search_check(np.array([0.0, 1.0]), k_max=1, n_trials=0,
                                   seed=0, extra_lambdas=[0.5])
    # padded sequences {00, 10, 01, 11}: 4 of them
    assert rep["n_sequences"] == 4
    assert rep["margins"][-1] == pytest.approx(0.5)


def test_injectivity_adversarial_root_reports_zero_margin():
    rep = injectivity_adversarial_case(k_max=3, root=0.625)
    assert rep["adversarial_margin"] < 1e-12


def test_injectivity_mostly_nonzero_for_random_lambdas():
    rep = injectivity_search_check(np.array([0.0, 1.0, 2.0]), k_max=3,
                                   n_trials=500, seed=1)
    assert not rep["partial"]
    assert rep["fraction_nonzero"] >= 0.95


def test_injectivity_cap_marks_partial():
    rep = injectivity_search_check(np.arange(6, dtype=float), k_max=2,
                                   n_trials=10, seed=0)
    assert rep["partial"]


def test_injectivity_rejects_duplicate_features():
    with pytest.raises(ValidationError, match="distinct"):
        injectivity_search_check(np.array([1.0, 1.0]), k_max=1)


# ---------------------------------------------------------------------------
# cross-oracles and the full suite


def test_scan_triangle_double_precision():
    rep = scan_triangle_check(60, seed=0, dtype=np.float64)
    assert rep["max_relative_error"] < 1e-12


def test_scan_triangle_single_precision():
    rep = scan_triangle_check(60, seed=0, dtype=np.float32)
    assert rep["max_relative_error"] < 1e-6


def test_bfs_floyd_warshall_no_mismatch():
    assert bfs_floyd_warshall_check(seed=0)["mismatches"] == 0


def test_separation_smoke():
    rep = gred_wl_separation_check(n_seeds=10, seed0=100)
    assert rep["wl_histograms_equal"]
    assert rep["separated"] == 10


def test_relative_error_scaling():
    assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


def test_full_suite_passes():
    rep = run_verification_suite(seed=0)
    assert rep["all_passed"], [c["name"] for c in rep["checks"] if not c["passed"]]
    names = {c["name"] for c in rep["checks"]}
    assert {"scan_equivalence_double", "scan_equivalence_single",
            "bfs_vs_floyd_warshall", "gradient_end_to_end",
            "vandermonde_bijective", "injectivity_countable",
            "expressiveness_beyond_1wl"} <= names
