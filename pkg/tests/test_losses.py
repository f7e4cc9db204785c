import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from conftest import front_camera, make_scene, single_scene
from oracles import (
    central_diff,
    cluster_loss_ref,
    neighbor_pairs_ref,
    reg3d_ref,
    rel_error,
    sig,
    triplet_loss_ref,
)
from splatlift.core import EmbeddingMap, partition_from_mask
from splatlift.losses import (
    LinearProjection,
    TripletBatch,
    build_neighbor_graph,
    cluster_loss,
    cluster_loss_probs,
    mine_triplets,
    regularization_3d,
    regularization_embeddings,
    triplet_loss,
    triplet_loss_probs,
)
from splatlift.raster import backward_embeddings, blend_weights, compose


def bare_map(values):
    values = np.asarray(values, dtype=np.float64)
    h, w, _ = values.shape
    return EmbeddingMap(values, sp.csr_matrix((h * w, 0)), np.ones((h, w)))


def random_mask(rng, h, w, k):
    mask = rng.integers(1, k + 1, (h, w))
    mask[0, 0], mask[-1, -1] = 1, 2  # at least two segments
    return mask


# ---------------------------------------------------------------- cluster


def test_cluster_two_saturated_segments():
    part = partition_from_mask(np.array([[1, 1], [2, 2]]))
    probs = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    loss, _ = cluster_loss_probs(probs, part)
    assert loss == -2.0


def test_cluster_single_constant_segment_is_zero():
    loss, grad = cluster_loss(bare_map(np.full((3, 3, 2), 0.4)), partition_from_mask(np.ones((3, 3), int)))
    assert loss == 0.0 and not grad.any()


def test_cluster_matches_oracle_and_finite_differences_on_small_map():
    rng = np.random.default_rng(7)
    mask = random_mask(rng, 4, 4, 2)
    part = partition_from_mask(mask)
    raw = rng.standard_normal((4, 4, 3))
    loss, grad = cluster_loss(bare_map(raw), part)
    segs = [s.tolist() for s in part.segments]
    assert loss == pytest.approx(cluster_loss_ref(raw.reshape(16, 3), segs), rel=1e-12)
    numeric = central_diff(lambda v: cluster_loss(bare_map(v), part)[0], raw)
    assert rel_error(grad, numeric) <= 1e-4


@given(st.integers(0, 10_000))
def test_cluster_intra_term_zero_iff_segments_constant(seed):
    rng = np.random.default_rng(seed)
    mask = random_mask(rng, 5, 5, 3)
    part = partition_from_mask(mask)
    levels = rng.uniform(0.1, 0.9, (4, 2))
    probs = levels[mask.ravel()]
    loss, _ = cluster_loss_probs(probs, part)
    segs = [s.tolist() for s in part.segments]
    push_only = cluster_loss_ref(np.log(probs / (1 - probs)), segs)
    assert loss == pytest.approx(push_only, abs=1e-12)
    cents = [probs[s].mean(0) for s in segs]
    k = len(segs)
    push = sum(np.sum((cents[i] - cents[j]) ** 2) for i in range(k) for j in range(k) if i != j) / (k * (k - 1))
    assert loss == pytest.approx(-push, abs=1e-12)
    # perturbing one pixel makes the pull term strictly positive
    probs[0] += 0.05
    pulled, _ = cluster_loss_probs(probs, part)
    cents2 = [probs[s].mean(0) for s in segs]
    push2 = sum(np.sum((cents2[i] - cents2[j]) ** 2) for i in range(k) for j in range(k) if i != j) / (k * (k - 1))
    assert pulled + push2 > 0


# ---------------------------------------------------------------- triplets


def test_triplet_at_margin_is_one():
    probs = np.array([[0.3, 0.7]] * 3)
    batch = TripletBatch(np.array([0]), np.array([1]), np.array([2]), margin=1.0)
    loss, gp, gw = triplet_loss_probs(probs, batch, np.eye(2))
    assert loss == 1.0


def test_triplet_inactive_hinge_has_zero_gradient():
    # |a-p|^2 = 0 and |a-n|^2 = 5
    probs = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 2.0]])
    batch = TripletBatch(np.array([0]), np.array([1]), np.array([2]), margin=1.0)
    loss, gp, gw = triplet_loss_probs(probs, batch, np.eye(2))
    assert loss == 0.0 and not gp.any() and not gw.any()


def test_triplet_matches_oracle():
    rng = np.random.default_rng(11)
    raw = rng.standard_normal((30, 4))
    trip = [tuple(rng.integers(0, 30, 3)) for _ in range(25)]
    batch = TripletBatch(*(np.array(c) for c in zip(*trip)), margin=0.2)
    w = np.eye(4) + 0.3 * rng.standard_normal((4, 4))
    loss, _, _ = triplet_loss_probs(sig(raw), batch, w)
    assert loss == pytest.approx(triplet_loss_ref(raw, trip, w, 0.2), rel=1e-12)


def test_mine_triplets_count_and_invariants():
    mask = np.ones((10, 10), dtype=np.int64)
    mask[:, 5:] = 2
    part = partition_from_mask(mask)
    batch = mine_triplets(None, part, max_triplets=3000, rng_seed=4)
    assert len(batch) == 100
    seg = part.segment_ids()
    bnd = set(np.concatenate(part.boundary).tolist())
    assert np.all(seg[batch.anchor] == seg[batch.positive])
    assert np.all(seg[batch.anchor] != seg[batch.negative])
    assert set(batch.positive.tolist()) <= bnd and set(batch.negative.tolist()) <= bnd
    assert len(mine_triplets(None, part, max_triplets=7, rng_seed=4)) == 7


def test_mine_triplets_single_segment_is_empty():
    assert len(mine_triplets(None, partition_from_mask(np.ones((4, 4), int)))) == 0


def test_mine_triplets_deterministic():
    rng = np.random.default_rng(0)
    part = partition_from_mask(random_mask(rng, 9, 9, 4))
    a = mine_triplets(None, part, 50, rng_seed=123)
    b = mine_triplets(None, part, 50, rng_seed=123)
    for x, y in zip((a.anchor, a.positive, a.negative), (b.anchor, b.positive, b.negative)):
        np.testing.assert_array_equal(x, y)


@given(st.integers(0, 10_000), st.integers(1, 60))
def test_mined_triplets_respect_segments(seed, cap):
    rng = np.random.default_rng(seed)
    part = partition_from_mask(random_mask(rng, 6, 7, 4))
    batch = mine_triplets(None, part, cap, rng_seed=seed)
    seg = part.segment_ids()
    assert len(batch) == min(cap, int((seg >= 0).sum()))
    assert np.all(seg[batch.anchor] == seg[batch.positive])
    assert np.all(seg[batch.anchor] != seg[batch.negative])
    assert np.unique(batch.anchor).size == len(batch)


# ---------------------------------------------------------------- 3D neighbourhood


def test_neighbor_threshold_is_inclusive():
    scene = single_scene([[0, 0, 0], [0.1, 0, 0]], [[0.1] * 3] * 2, [0.5, 0.5])
    # 0.1 ** 2 is not exactly 0.01 in binary, so use the computed squared distance
    graph = build_neighbor_graph(scene, float(np.sum((scene.positions[0] - scene.positions[1]) ** 2)))
    assert graph.edges().tolist() == [[0, 1], [1, 0]]


def test_single_primitive_has_no_neighbors():
    graph = build_neighbor_graph(single_scene([[0, 0, 0]], [[0.1] * 3], [0.5]))
    assert graph.edges().shape == (0, 2)


def test_neighbor_threshold_must_be_positive():
    with pytest.raises(ValueError):
        build_neighbor_graph(single_scene([[0, 0, 0]], [[0.1] * 3], [0.5]), 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_neighbor_graph_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    scene = make_scene(100, rng, spread=0.25)
    graph = build_neighbor_graph(scene, 1e-2)
    got = {tuple(e) for e in graph.edges().tolist()}
    assert got == neighbor_pairs_ref(scene.positions, 1e-2)
    assert len(got) > 0


def test_reg3d_two_neighbors_example():
    scene = single_scene([[0, 0, 0], [0.05, 0, 0]], [[0.1] * 3] * 2, [0.5, 0.5],
                         embeddings=[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    loss, grad = regularization_3d(scene, build_neighbor_graph(scene), "instance")
    assert loss == 2.0
    np.testing.assert_array_equal(grad, [[4.0, 0, 0], [-4.0, 0, 0]])


def test_reg3d_equal_embeddings_zero():
    rng = np.random.default_rng(1)
    scene = make_scene(30, rng, spread=0.1)
    scene = scene.with_embeddings(instance=np.tile(rng.standard_normal(4), (30, 1)))
    loss, grad = regularization_3d(scene, build_neighbor_graph(scene))
    assert loss == 0.0 and not grad.any()


def test_reg3d_rejects_color_channel():
    scene = single_scene([[0, 0, 0]], [[0.1] * 3], [0.5])
    with pytest.raises(ValueError):
        regularization_3d(scene, build_neighbor_graph(scene), "color")


@pytest.mark.parametrize("seed", range(3))
def test_reg3d_matches_oracle_and_finite_differences(seed):
    rng = np.random.default_rng(seed)
    scene = make_scene(50, rng, spread=0.2)
    graph = build_neighbor_graph(scene)
    emb = scene.instance_embeddings
    loss, grad = regularization_embeddings(emb, graph)
    pairs = neighbor_pairs_ref(scene.positions, 1e-2)
    assert loss == pytest.approx(reg3d_ref(emb, pairs), rel=1e-12)
    numeric = central_diff(lambda v: regularization_embeddings(v, graph)[0], emb)
    assert rel_error(grad, numeric) <= 1e-4


@given(st.integers(0, 10_000))
def test_reg3d_zero_iff_components_constant(seed):
    rng = np.random.default_rng(seed)
    scene = make_scene(25, rng, spread=0.15)
    graph = build_neighbor_graph(scene)
    # label connected components by propagation and give each a constant embedding
    comp = np.arange(25)
    for _ in range(25):
        for i, j in graph.edges():
            comp[i] = comp[j] = min(comp[i], comp[j])
    levels = rng.standard_normal((25, 3))
    emb = levels[comp]
    assert regularization_embeddings(emb, graph)[0] == 0.0
    if graph.edges().size:
        i, _ = graph.edges()[0]
        emb[i] += 1.0
        assert regularization_embeddings(emb, graph)[0] > 0.0


# ---------------------------------------------------------------- end-to-end gradients


def _instance(seed):
    rng = np.random.default_rng(seed)
    scene = make_scene(int(rng.integers(10, 51)), rng, spread=0.3, d=4)
    cam = front_camera(8, 8)
    weights, coverage = blend_weights(scene, cam)
    mask = random_mask(rng, 8, 8, 3)
    part = partition_from_mask(mask)
    proj = LinearProjection.init(4, rng, noise=0.3)
    return rng, scene, weights, coverage, part, proj


def test_cluster_gradient_through_blend_matches_finite_differences():
    for seed in range(20):
        _, scene, weights, coverage, part, _ = _instance(seed)

        def f(v):
            return cluster_loss(compose(weights, coverage, v), part)[0]

        emb = compose(weights, coverage, scene.instance_embeddings)
        _, g_map = cluster_loss(emb, part)
        grad = backward_embeddings(emb, g_map)
        assert rel_error(grad, central_diff(f, scene.instance_embeddings)) <= 1e-4, seed


def test_triplet_gradients_through_blend_and_projection_match_finite_differences():
    checked = 0
    seed = 0
    while checked < 20:
        rng, scene, weights, coverage, part, proj = _instance(1000 + seed)
        seed += 1
        batch = mine_triplets(None, part, 40, rng_seed=seed, margin=0.05)
        emb = compose(weights, coverage, scene.instance_embeddings)
        probs = sig(emb.flat())
        a, p, n = (probs[i] @ proj.matrix.T for i in (batch.anchor, batch.positive, batch.negative))
        hinge = np.sum((a - p) ** 2, 1) - np.sum((a - n) ** 2, 1) + batch.margin
        # a step of 1e-3 can move a hinge across its kink; such instances are not differentiable there
        if np.min(np.abs(hinge)) < 5e-3 or not np.any(hinge > 0):
            continue
        checked += 1

        def f_v(v):
            return triplet_loss(compose(weights, coverage, v), batch, proj)[0]

        def f_w(w):
            return triplet_loss(emb, batch, LinearProjection(w))[0]

        _, g_map, g_w = triplet_loss(emb, batch, proj)
        grad_v = backward_embeddings(emb, g_map)
        assert rel_error(grad_v, central_diff(f_v, scene.instance_embeddings)) <= 1e-4
        assert rel_error(g_w, central_diff(f_w, proj.matrix)) <= 1e-4
    assert seed < 200


# ---------------------------------------------------------------- relabeling


@given(st.integers(0, 10_000), st.permutations(range(1, 5)))
def test_losses_bitwise_invariant_to_relabeling(seed, perm):
    rng = np.random.default_rng(seed)
    mask = random_mask(rng, 6, 6, 4)
    relabeled = np.array([0] + list(perm))[mask]
    raw = bare_map(rng.standard_normal((6, 6, 3)))
    proj = LinearProjection.init(3, rng, noise=0.2)
    pa, pb = partition_from_mask(mask), partition_from_mask(relabeled)
    la, ga = cluster_loss(raw, pa)
    lb, gb = cluster_loss(raw, pb)
    assert la == lb and np.array_equal(ga, gb)
    ta = triplet_loss(raw, mine_triplets(raw, pa, 30, rng_seed=seed), proj)
    tb = triplet_loss(raw, mine_triplets(raw, pb, 30, rng_seed=seed), proj)
    assert ta[0] == tb[0] and np.array_equal(ta[1], tb[1]) and np.array_equal(ta[2], tb[2])


@given(st.integers(0, 10_000))
def test_triplet_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    part = partition_from_mask(random_mask(rng, 5, 5, 3))
    raw = bare_map(3 * rng.standard_normal((5, 5, 2)))
    loss, _, _ = triplet_loss(raw, mine_triplets(raw, part, 20, rng_seed=seed), LinearProjection.init(2, rng))
    assert loss >= 0.0
