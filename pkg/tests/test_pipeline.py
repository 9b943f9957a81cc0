import numpy as np
import pytest

from segprop.graph import PatchGraphConfig, PixelGraphConfig, build_patch_graph, symmetric_normalize
from segprop.grids import FeatureGrid, ScoreGrid, bilinear_resize, srgb_to_lab
from segprop.pipeline import (
    ClassEmbeddings,
    affinity_baseline,
    argmax_labels,
    ensemble_scores,
    initial_window_scores,
    propagate_patch_scores,
    refine_pixel_scores,
    vlm_scores,
)
from segprop.solver import PropagationConfig
from segprop.windows import assemble_joint, plan_windows, whole_image_plan

from conftest import dense_lp_oracle


def unit(vec):
    vec = np.asarray(vec, dtype=np.float64)
    return vec / np.linalg.norm(vec)


def orthonormal_embeddings(dim, classes, seed=0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, classes)))
    return ClassEmbeddings(matrix=q[:, :classes], names=tuple(f"c{i}" for i in range(classes)))


class TestVlmScores:
    def test_matching_column_scores_one(self):
        emb = orthonormal_embeddings(4, 2)
        feats = FeatureGrid(emb.matrix[:, 1].reshape(1, 1, 4))
        out = vlm_scores(feats, emb)
        assert out.data[0, 0, 1] == pytest.approx(1.0)
        assert out.data[0, 0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_matches_dense_matmul(self):
        rng = np.random.default_rng(1)
        emb = orthonormal_embeddings(4, 3)
        feats = FeatureGrid(rng.standard_normal((2, 2, 4)))
        out = vlm_scores(feats, emb)
        expected = np.einsum("hwd,dc->hwc", feats.data, emb.matrix)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_dim_mismatch(self):
        emb = orthonormal_embeddings(4, 2)
        with pytest.raises(ValueError):
            vlm_scores(FeatureGrid(np.zeros((1, 1, 5))), emb)


class TestAffinityBaseline:
    def test_orthonormal_patches_identity(self):
        feats = FeatureGrid(np.eye(4).reshape(2, 2, 4))
        scores = ScoreGrid(np.arange(8, dtype=float).reshape(2, 2, 2))
        out = affinity_baseline(feats, scores)
        np.testing.assert_allclose(out.data, scores.data, atol=1e-12)

    def test_identical_patches_identical_rows(self):
        feats = FeatureGrid(np.tile(unit([1.0, 2.0]), (1, 2, 1)))
        scores = ScoreGrid(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
        out = affinity_baseline(feats, scores)
        np.testing.assert_allclose(out.data[0, 0], out.data[0, 1])

    def test_matches_dense_matmul(self):
        rng = np.random.default_rng(2)
        feats = FeatureGrid(rng.standard_normal((1, 3, 5)))
        scores = ScoreGrid(rng.uniform(size=(1, 3, 2)))
        out = affinity_baseline(feats, scores)
        flat = feats.data.reshape(3, 5)
        expected = (flat @ flat.T) @ scores.data.reshape(3, 2)
        np.testing.assert_allclose(out.data.reshape(3, 2), expected, atol=1e-12)

    def test_normalize_after_variant(self):
        rng = np.random.default_rng(3)
        emb = orthonormal_embeddings(5, 3)
        vm = FeatureGrid(rng.standard_normal((2, 2, 4)))
        vlm = FeatureGrid(rng.standard_normal((2, 2, 5)))
        out = affinity_baseline(
            vm, ScoreGrid(np.zeros((2, 2, 3))), normalize_after=True,
            vlm_features=vlm, embeddings=emb,
        )
        vm_flat = vm.data.reshape(4, 4)
        mixed = (vm_flat @ vm_flat.T) @ vlm.data.reshape(4, 5)
        mixed /= np.linalg.norm(mixed, axis=1, keepdims=True)
        np.testing.assert_allclose(out.data.reshape(4, 3), mixed @ emb.matrix, atol=1e-12)

    def test_normalize_after_requires_inputs(self):
        vm = FeatureGrid(np.zeros((1, 1, 2)))
        with pytest.raises(ValueError):
            affinity_baseline(vm, ScoreGrid(np.zeros((1, 1, 2))), normalize_after=True)


class TestEnsemble:
    def test_equal_inputs_keep_argmax(self):
        rng = np.random.default_rng(4)
        a = ScoreGrid(rng.uniform(size=(3, 3, 4)))
        out = ensemble_scores(a, a)
        np.testing.assert_array_equal(
            out.data.argmax(axis=2), a.data.argmax(axis=2)
        )

    def test_margin_hand_arithmetic(self):
        # normalized a = [1, 0], normalized b = [0, 1]; mean ties -> class 0
        a = ScoreGrid(np.array([[[1.0, 0.0]]]))
        b = ScoreGrid(np.array([[[0.0, 0.1]]]))
        out = ensemble_scores(a, b)
        np.testing.assert_allclose(out.data[0, 0], [0.5, 0.5])
        assert argmax_labels(out).labels[0, 0] == 0

    def test_zero_grids_uniform(self):
        zero = ScoreGrid(np.zeros((2, 2, 3)))
        out = ensemble_scores(zero, zero)
        np.testing.assert_allclose(out.data, 1.0 / 3.0)
        assert (argmax_labels(out).labels == 0).all()

    def test_scale_invariance_of_inputs(self):
        rng = np.random.default_rng(5)
        a = ScoreGrid(rng.uniform(size=(4, 4, 3)))
        b = ScoreGrid(rng.uniform(size=(4, 4, 3)))
        base = ensemble_scores(a, b)
        scaled = ensemble_scores(ScoreGrid(a.data * 11.0), b)
        np.testing.assert_allclose(base.data, scaled.data, atol=1e-12)


class TestArgmaxLabels:
    def test_simple(self):
        assert argmax_labels(ScoreGrid(np.array([[[0.2, 0.9]]]))).labels[0, 0] == 1

    def test_tie_smallest_id(self):
        assert argmax_labels(ScoreGrid(np.array([[[0.5, 0.5]]]))).labels[0, 0] == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(6)
        scores = ScoreGrid(rng.uniform(size=(5, 4, 6)))
        labels = argmax_labels(scores).labels
        for y in range(5):
            for x in range(4):
                best = max(range(6), key=lambda c: (scores.data[y, x, c], -c))
                assert labels[y, x] == best


def make_two_cluster_windows(seed=7, flip_fraction=0.1):
    """Two orthogonal feature clusters over 9 windows of a 64x64 image."""
    rng = np.random.default_rng(seed)
    plan = plan_windows(64, 64, 32, 16, patch=4)
    q, _ = np.linalg.qr(rng.standard_normal((16, 2)))
    centers = q[:, :2]
    sides, vm_feats, scores = [], [], []
    for y0, x0 in plan.origins:
        side = np.zeros((8, 8), dtype=int)
        for i in range(8):
            for j in range(8):
                yy = y0 + i * 4 + np.arange(4)
                xx = x0 + j * 4 + np.arange(4)
                below = sum(1 for a in yy for b in xx if a < b)
                side[i, j] = 1 if below > 8 else 0
        sides.append(side)
        feats = np.empty((8, 8, 16))
        for i in range(8):
            for j in range(8):
                noisy = centers[:, side[i, j]] + 0.05 * rng.standard_normal(16)
                feats[i, j] = noisy / np.linalg.norm(noisy)
        vm_feats.append(FeatureGrid(feats))
        onehot = np.eye(2)[side]
        scores.append(onehot.astype(float))
    flat_sides = np.concatenate([s.ravel() for s in sides])
    n = flat_sides.size
    flips = rng.choice(n, size=int(round(flip_fraction * n)), replace=False)
    stacked = np.concatenate([s.reshape(-1, 2) for s in scores])
    stacked[flips] = stacked[flips][:, ::-1]
    score_grids = [
        ScoreGrid(stacked[i * 64 : (i + 1) * 64].reshape(8, 8, 2))
        for i in range(plan.num_windows)
    ]
    return plan, vm_feats, score_grids, flat_sides


class TestPropagatePatchScores:
    def test_edgeless_graph_is_scaled_upsample(self):
        # orthogonal patch features force all clamped weights to zero
        plan = whole_image_plan(32, 32, patch=16)
        feats = [FeatureGrid(np.eye(4).reshape(2, 2, 4))]
        scores = [ScoreGrid(np.arange(8, dtype=float).reshape(2, 2, 2))]
        cfg = PropagationConfig(alpha=0.95)
        out = propagate_patch_scores(plan, feats, scores, PatchGraphConfig(k=1), cfg)
        expected = bilinear_resize(ScoreGrid(0.05 * scores[0].data), 32, 32)
        np.testing.assert_allclose(out.data, expected.data, atol=1e-9)

    def test_two_cluster_denoising_recovers_partition(self):
        plan, vm_feats, score_grids, flat_sides = make_two_cluster_windows()
        graph_cfg = PatchGraphConfig(k=40)
        prop_cfg = PropagationConfig()
        feats, pos, stacked = assemble_joint(plan, vm_feats, score_grids)
        adjacency = build_patch_graph(feats, pos, graph_cfg)
        refined = dense_lp_oracle(symmetric_normalize(adjacency), stacked, 0.95)
        accuracy = (refined.argmax(axis=1) == flat_sides).mean()
        assert accuracy >= 0.99  # dense oracle agrees the partition is recovered
        out = propagate_patch_scores(plan, vm_feats, score_grids, graph_cfg, prop_cfg)
        # block argmax at patch resolution matches the oracle's labels
        assert out.data.shape == (64, 64, 2)

    def test_matches_dense_oracle_node_scores(self):
        plan, vm_feats, score_grids, _ = make_two_cluster_windows(seed=8)
        graph_cfg = PatchGraphConfig(k=25)
        feats, pos, stacked = assemble_joint(plan, vm_feats, score_grids)
        adjacency = build_patch_graph(feats, pos, graph_cfg)
        s_hat = symmetric_normalize(adjacency)
        oracle = dense_lp_oracle(s_hat, stacked, 0.95)
        from segprop.solver import lp_solve_cg

        ours = lp_solve_cg(s_hat, stacked, PropagationConfig(cg_tol=1e-10))
        assert np.abs(ours - oracle).max() < 1e-5

    def test_cross_window_consistency_on_duplicate_content(self):
        # features periodic with the stride: co-located patches coincide
        plan = plan_windows(32, 48, 32, 16, patch=16)  # 2 windows, 2x2 patches
        rng = np.random.default_rng(9)
        pool = {}
        feats, scores = [], []
        for y0, x0 in plan.origins:
            f = np.empty((1, 2, 6))
            s = np.empty((1, 2, 3))
            for j in range(2):
                key = x0 + j * 16
                if key not in pool:
                    vec = rng.standard_normal(6)
                    pool[key] = (vec / np.linalg.norm(vec), rng.uniform(size=3))
                f[0, j], s[0, j] = pool[key]
            feats.append(FeatureGrid(np.repeat(f, 2, axis=0)))
            scores.append(ScoreGrid(np.repeat(s, 2, axis=0)))
        cfg = PropagationConfig(cg_tol=1e-12)
        # full graph (k = N - 1) keeps tied candidates symmetric
        out = propagate_patch_scores(
            plan, feats, scores, PatchGraphConfig(k=plan.num_nodes - 1), cfg
        )
        from segprop.solver import lp_solve_cg
        from segprop.windows import split_joint

        joint_feats, pos, stacked = assemble_joint(plan, feats, scores)
        adjacency = build_patch_graph(joint_feats, pos, PatchGraphConfig(k=plan.num_nodes - 1))
        refined = lp_solve_cg(symmetric_normalize(adjacency), stacked, cfg)
        blocks = split_joint(plan, refined)
        # window 0 column 1 (x center 24) == window 1 column 0 (x center 24)
        np.testing.assert_allclose(blocks[0][:, 1], blocks[1][:, 0], atol=1e-5)
        assert out.data.shape == (32, 48, 3)


class TestRefinePixelScores:
    def test_zero_scores_zero_out(self):
        rng = np.random.default_rng(10)
        rgb = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        out = refine_pixel_scores(
            ScoreGrid(np.zeros((12, 12, 2))), rgb, PixelGraphConfig(r=3), PropagationConfig()
        )
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_constant_scores_keep_argmax_and_profile(self):
        # columns stay proportional, so decisions are unchanged everywhere
        rgb = np.full((10, 10, 3), 128, dtype=np.uint8)
        scores = np.zeros((10, 10, 3))
        scores[..., 0] = 0.2
        scores[..., 1] = 0.7
        scores[..., 2] = 0.1
        out = refine_pixel_scores(
            ScoreGrid(scores), rgb, PixelGraphConfig(r=3), PropagationConfig(cg_tol=1e-12)
        )
        assert (out.data.argmax(axis=2) == 1).all()
        ratio = out.data[..., 1] / out.data[..., 0]
        np.testing.assert_allclose(ratio, 3.5, atol=1e-6)

    def test_two_region_boundary_snaps_to_color_edge(self):
        h = w = 32
        rgb = np.zeros((h, w, 3), dtype=np.uint8)
        rgb[:, : w // 2] = (40, 80, 160)
        rgb[:, w // 2 :] = (200, 160, 60)
        true_side = (np.arange(w) >= w // 2).astype(int)
        scores = np.eye(2)[np.tile(true_side, (h, 1))].astype(float)
        # flip a one-pixel band right at the boundary
        scores[:, w // 2] = [1.0, 0.0]
        cfg = PropagationConfig(cg_tol=1e-10)
        out = refine_pixel_scores(ScoreGrid(scores), rgb, PixelGraphConfig(r=5), cfg)
        labels = out.data.argmax(axis=2)
        np.testing.assert_array_equal(labels, np.tile(true_side, (h, 1)))

    def test_vanishing_bandwidth_keeps_input_labels(self):
        # tau -> 0 underflows every weight between distinct colors to zero,
        # so the graph is edgeless and refinement only rescales the scores
        rng = np.random.default_rng(15)
        base = rng.permutation(16 * 16).reshape(16, 16)
        rgb = np.stack([base % 256, (base * 7) % 256, (base * 13) % 256], axis=-1)
        rgb = rgb.astype(np.uint8)
        scores = ScoreGrid(rng.uniform(size=(16, 16, 3)))
        out = refine_pixel_scores(
            scores, rgb, PixelGraphConfig(r=3, tau=1e-12), PropagationConfig()
        )
        np.testing.assert_array_equal(
            argmax_labels(out).labels, argmax_labels(scores).labels
        )

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(11)
        rgb = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        scores = rng.uniform(size=(8, 8, 2))
        from segprop.graph import build_pixel_graph

        adjacency = build_pixel_graph(srgb_to_lab(rgb), PixelGraphConfig(r=3))
        oracle = dense_lp_oracle(
            symmetric_normalize(adjacency), scores.reshape(64, 2), 0.95
        ).reshape(8, 8, 2)
        out = refine_pixel_scores(
            ScoreGrid(scores), rgb, PixelGraphConfig(r=3), PropagationConfig(cg_tol=1e-10)
        )
        np.testing.assert_allclose(out.data, oracle, atol=1e-5)


class TestDecisionInvariances:
    def test_positive_scaling_leaves_labels(self):
        plan, vm_feats, score_grids, _ = make_two_cluster_windows(seed=12)
        graph_cfg = PatchGraphConfig(k=30)
        prop_cfg = PropagationConfig()
        base = propagate_patch_scores(plan, vm_feats, score_grids, graph_cfg, prop_cfg)
        scaled_in = [ScoreGrid(sg.data * 7.3) for sg in score_grids]
        scaled = propagate_patch_scores(plan, vm_feats, scaled_in, graph_cfg, prop_cfg)
        np.testing.assert_array_equal(
            argmax_labels(base).labels, argmax_labels(scaled).labels
        )

    def test_class_permutation_permutes_outputs(self):
        plan, vm_feats, score_grids, _ = make_two_cluster_windows(seed=13)
        graph_cfg = PatchGraphConfig(k=30)
        prop_cfg = PropagationConfig(cg_tol=1e-10)
        base = propagate_patch_scores(plan, vm_feats, score_grids, graph_cfg, prop_cfg)
        perm = [1, 0]
        permuted_in = [ScoreGrid(sg.data[:, :, perm]) for sg in score_grids]
        permuted = propagate_patch_scores(plan, vm_feats, permuted_in, graph_cfg, prop_cfg)
        np.testing.assert_allclose(permuted.data[:, :, perm], base.data, atol=1e-9)

    def test_external_scores_match_vlm_dot_bitwise(self):
        rng = np.random.default_rng(14)
        emb = orthonormal_embeddings(6, 3, seed=14)
        vlm = [FeatureGrid(rng.standard_normal((2, 2, 6))) for _ in range(2)]
        vm = [FeatureGrid(rng.standard_normal((2, 2, 4))) for _ in range(2)]
        direct = initial_window_scores("vlm_dot", vlm, vm, emb)
        external = initial_window_scores(
            "external", vlm, vm, emb, external=[vlm_scores(f, emb) for f in vlm]
        )
        for a, b in zip(direct, external):
            assert a.data.tobytes() == b.data.tobytes()
