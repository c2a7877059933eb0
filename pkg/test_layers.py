"""
Layer Tests
Shape-guided sampling, seed points, neighbor domains, the SE(3) block and attention
"""

import math

import pytest
import torch

from equipose.ai.diffusion import make_rng
from equipose.ai.layers import (
    GroupConv,
    MultiHeadAttention,
    ORTBlock,
    ORTOutput,
    RadialPointConv,
    ScaleInvariantGraphConv,
    SE3Layer,
    ZeroConv,
    base_radius,
    build_neighbor_domains,
    gather_neighborhood,
    generate_seed_points,
    graph_conv_inputs,
    group_conv,
    icosahedron_vertices,
    interpolate_features,
    make_activation,
    radial_kernel_points,
    single_domain,
    spherical_offset,
)
from equipose.ai.sampling import (
    sgs_aggregate,
    sgs_distance_matrix,
    sgs_similarity,
    shape_guided_sample,
)
from equipose.geometry import get_group
from equipose.models import AblationConfig
from equipose.services.gradcheck_service import grad_check
from equipose.services.selftest import equivariance_error


def gaussian(rng, *shape):
    return torch.as_tensor(rng.standard_normal(shape))


# ----------------------------------------------------------------------------
# Shape-guided sampling
# ----------------------------------------------------------------------------

def test_distance_matrix_examples(rng):
    f = gaussian(rng, 6, 4)
    d = sgs_distance_matrix(f, f)
    assert torch.all(d.diagonal() == 0)
    assert torch.all(d >= 0)
    assert torch.equal(d, d.T)
    pair = sgs_distance_matrix(torch.tensor([[0.0, 0.0]]), torch.tensor([[3.0, 4.0]]))
    assert float(pair[0, 0]) == pytest.approx(5.0, abs=1e-15)


def test_distance_matrix_rejects_width_mismatch(rng):
    with pytest.raises(ValueError):
        sgs_distance_matrix(gaussian(rng, 4, 3), gaussian(rng, 4, 2))


def test_aggregate_is_row_sum():
    assert torch.equal(sgs_aggregate(torch.zeros(3, 5)), torch.zeros(3))
    assert float(sgs_aggregate(torch.tensor([[1.0, 2.0, 3.0]]))[0]) == 6.0
    d = torch.rand(4, 3)
    assert torch.allclose(sgs_aggregate(2.5 * d), 2.5 * sgs_aggregate(d), atol=1e-14)


def test_similarity_normalization(rng):
    same = torch.ones(5, 3)
    alpha = sgs_similarity(same, gaussian(rng, 7, 3))
    assert torch.allclose(alpha, torch.full((5,), 0.2), atol=1e-15)

    f, r = gaussian(rng, 9, 3), gaussian(rng, 7, 3)
    alpha = sgs_similarity(f, r)
    assert torch.all((alpha > 0) & (alpha < 1))
    assert abs(float(alpha.sum()) - 1.0) <= 1e-12
    # Prior rows share a unit third coordinate, so the shift adds 3 to every score
    prior = torch.tensor([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    flat = torch.cat([gaussian(rng, 4, 2), torch.zeros(4, 1)], dim=1)
    shifted = flat + torch.tensor([0.0, 0.0, 3.0])
    assert torch.allclose(sgs_similarity(shifted, prior), sgs_similarity(flat, prior), atol=1e-15)
    assert torch.allclose(sgs_similarity(f, r, "max").sum(), torch.tensor(1.0), atol=1e-12)
    with pytest.raises(ValueError):
        sgs_similarity(f, r, "median")


def test_sample_returns_half_sorted_distinct(rng):
    f, r = gaussian(rng, 8, 4), gaussian(rng, 6, 4)
    for mode in ("sgs", "sfd", "sfs", "random", "uniform"):
        chosen = shape_guided_sample(f, r, mode=mode)
        assert chosen.shape == (4,)
        assert chosen.tolist() == sorted(set(chosen.tolist()))
    odd = shape_guided_sample(gaussian(rng, 9, 4), r)
    assert odd.shape == (4,)


def test_sample_keeps_point_matching_prior(rng):
    center = torch.tensor([1.0, 2.0, 3.0])
    prior = center + 1e-3 * gaussian(rng, 5, 3)
    features = 10.0 + gaussian(rng, 12, 3)
    features[7] = center
    for mode in ("sgs", "sfd"):
        assert 7 in shape_guided_sample(features, prior, mode=mode).tolist()


def test_sample_is_deterministic(rng):
    f, r, p = gaussian(rng, 16, 4), gaussian(rng, 6, 4), gaussian(rng, 16, 3)
    for mode in ("sgs", "fps", "random"):
        first = shape_guided_sample(f, r, mode=mode, points=p, seed=5)
        assert torch.equal(first, shape_guided_sample(f, r, mode=mode, points=p, seed=5))


def test_sample_distance_only_picks_smallest_totals(rng):
    f, r = gaussian(rng, 10, 3), gaussian(rng, 4, 3)
    nu = sgs_aggregate(sgs_distance_matrix(f, r))
    expected = torch.sort(torch.argsort(nu)[:5]).values
    assert torch.equal(shape_guided_sample(f, r, mode="sfd"), expected)
    assert shape_guided_sample(f, r, mode="uniform").tolist() == [0, 2, 4, 6, 8]


def test_sample_errors(rng):
    r = gaussian(rng, 4, 3)
    with pytest.raises(ValueError):
        shape_guided_sample(gaussian(rng, 3, 3), r)
    with pytest.raises(ValueError):
        shape_guided_sample(gaussian(rng, 8, 3), r, mode="nearest")
    with pytest.raises(ValueError):
        shape_guided_sample(gaussian(rng, 8, 3), r, mode="fps")


# ----------------------------------------------------------------------------
# Seed points and neighbor domains
# ----------------------------------------------------------------------------

def test_seed_point_lands_on_best_match(rng):
    observed = gaussian(rng, 4, 3)
    coords, feats = generate_seed_points(observed, torch.eye(4), gaussian(rng, 1, 3),
                                         torch.tensor([[0.0, 0.0, 3.0, 0.0]]), k_seed=1)
    assert coords.shape == (5, 3) and feats.shape == (5, 4)
    assert torch.equal(coords[4], observed[2])


def test_seed_points_follow_translation(rng):
    observed, of = gaussian(rng, 10, 3), gaussian(rng, 10, 5)
    prior, pf = gaussian(rng, 6, 3), gaussian(rng, 6, 5)
    v = torch.tensor([3.0, -2.0, 0.5])
    coords, feats = generate_seed_points(observed, of, prior, pf, k_seed=3)
    moved, moved_feats = generate_seed_points(observed + v, of, prior, pf, k_seed=3)
    assert coords.shape == (16, 3)
    assert torch.allclose(moved[10:], coords[10:] + v, atol=1e-12)
    assert torch.equal(moved_feats, feats)


def test_seed_points_validate_arguments(rng):
    observed, of = gaussian(rng, 4, 3), gaussian(rng, 4, 5)
    with pytest.raises(ValueError):
        generate_seed_points(observed, of, gaussian(rng, 2, 3), gaussian(rng, 2, 5), k_seed=5)
    with pytest.raises(ValueError):
        generate_seed_points(observed, of, gaussian(rng, 2, 3), gaussian(rng, 2, 4), k_seed=1)


def test_tiny_radius_gives_empty_domains(rng):
    domains = build_neighbor_domains(gaussian(rng, 12, 3), gaussian(rng, 9, 3), radius=1e-9)
    assert sorted(domains) == [1, 2, 3, 4]
    # Kind 4 and 3 contain each observed point itself at distance zero
    assert not domains[1].mask.any() and not domains[2].mask.any()
    assert all(domains[4].neighbors(i) == [i] for i in range(12))


def test_domains_transpose_on_shared_points(cloud):
    points = cloud[:30]
    domains = build_neighbor_domains(points, points.clone(), radius=0.9)
    for i in range(30):
        for j in domains[1].neighbors(i):
            assert i in domains[2].neighbors(j)


def test_domain_neighbors_lie_within_radius(rng):
    observed, prior = gaussian(rng, 20, 3), gaussian(rng, 15, 3)
    radius = 0.8
    for domain in build_neighbor_domains(observed, prior, radius).values():
        for i in range(domain.centers.shape[0]):
            for j in domain.neighbors(i):
                assert float(torch.linalg.vector_norm(domain.support[j] - domain.centers[i])) <= radius
    mixed = build_neighbor_domains(observed, prior, radius)[3]
    assert torch.equal(mixed.source.bool() & mixed.mask, (mixed.index >= 20) & mixed.mask)


def test_domains_reject_nonpositive_radius(rng):
    with pytest.raises(ValueError):
        build_neighbor_domains(gaussian(rng, 4, 3), gaussian(rng, 4, 3), radius=0.0)


# ----------------------------------------------------------------------------
# Radial kernels and the SE(3) block
# ----------------------------------------------------------------------------

def test_spherical_offset_examples():
    assert torch.allclose(spherical_offset(1.0, 0.0, 0.0), torch.tensor([0.0, 0.0, 1.0]), atol=1e-15)
    assert torch.allclose(spherical_offset(1.0, math.pi / 2, 0.0), torch.tensor([1.0, 0.0, 0.0]), atol=1e-15)


def test_kernel_points_on_sphere(rng):
    center = gaussian(rng, 3)
    kernels = radial_kernel_points(center, 0.7, center + gaussian(rng, 6, 3))
    assert torch.equal(kernels[0], center)
    lengths = torch.linalg.vector_norm(kernels[1:] - center, dim=1)
    assert torch.allclose(lengths, torch.full((6,), 0.7), atol=1e-9)
    up = radial_kernel_points(torch.zeros(3), 1.0, torch.tensor([[0.0, 0.0, 5.0], [0.0, 0.0, 0.0]]))
    assert torch.allclose(up[1:], torch.tensor([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]), atol=1e-15)
    with pytest.raises(ValueError):
        radial_kernel_points(center, 0.0, center[None])


def test_helpers():
    vertices = icosahedron_vertices()
    assert vertices.shape == (12, 3)
    assert torch.allclose(torch.linalg.vector_norm(vertices, dim=1), torch.ones(12), atol=1e-15)
    assert base_radius(torch.tensor([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]])) == pytest.approx(2.0)
    assert base_radius(torch.zeros(3, 3)) == 1.0
    with pytest.raises(ValueError):
        make_activation("tanh")
    conv = ZeroConv(4, 3)
    assert torch.equal(conv(torch.randn(5, 4)), torch.zeros(5, 3))


def test_radial_conv_zero_weights(cloud, rng):
    group = get_group("tetrahedral")
    features = gaussian(rng, 64, 4)
    conv = RadialPointConv(4, 3, kernel_size=8)
    with torch.no_grad():
        conv.weight.zero_()
    hood = gather_neighborhood(single_domain(cloud, 1.0), features, features, 8)
    out = conv(hood, group)
    assert out.shape == (64, 3, 12)
    assert torch.equal(out, torch.zeros_like(out))


def test_radial_conv_translation_invariant(cloud, rng):
    group = get_group("tetrahedral")
    features = gaussian(rng, 64, 4)
    torch.manual_seed(0)
    layer = SE3Layer(4, 4, kernel_size=8, use_graph=False)
    v = torch.tensor([3.0, -2.0, 1.0])
    with torch.no_grad():
        base = layer(gather_neighborhood(single_domain(cloud, 1.0), features, features, 8), group)
        moved = layer(gather_neighborhood(single_domain(cloud + v, 1.0), features, features, 8), group)
    assert torch.allclose(moved, base, atol=1e-9)


@pytest.mark.parametrize("use_graph", [False, True])
@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("group_name", ["tetrahedral", "icosahedral"])
def test_se3_layer_equivariance(group_name, seed, use_graph):
    group = get_group(group_name)
    rng = make_rng(seed, 11)
    points, features = gaussian(rng, 64, 3), gaussian(rng, 64, 4)
    torch.manual_seed(seed)
    layer = SE3Layer(4, 4, kernel_size=8, activation="silu", use_graph=use_graph)
    with torch.no_grad():
        base = layer(gather_neighborhood(single_domain(points, 1.0), features, features, 8), group)
        for h in range(group.size):
            rotated = points @ group.elements[h].T
            moved = layer(gather_neighborhood(single_domain(rotated, 1.0), features, features, 8), group)
            assert float((moved - base[..., group.left_translation(h)]).abs().max()) <= 1e-6, h
    assert equivariance_error(layer, group, points, features, 1.0, group.size - 1, 8) <= 1e-6


def test_graph_conv_without_neighbors(rng):
    torch.manual_seed(1)
    conv = ScaleInvariantGraphConv(4, 5)
    center = gaussian(rng, 3, 4)
    directions = torch.nn.functional.normalize(gaussian(rng, 3, 2, 3), dim=-1)
    mask = torch.zeros(3, 2, dtype=torch.bool)
    with torch.no_grad():
        out = conv(center, gaussian(rng, 3, 2, 4), directions, torch.rand(3, 2), mask)
        h = conv.embed(torch.cat([center, torch.zeros(3, 3)], dim=-1))
        expected = conv.node(torch.cat([h, torch.zeros(3, 5)], dim=-1))
    assert torch.allclose(out, expected, atol=1e-14)


def test_graph_conv_neighbor_order_irrelevant(rng):
    torch.manual_seed(2)
    conv = ScaleInvariantGraphConv(4, 5, activation="silu")
    center, kernel = gaussian(rng, 3, 4), gaussian(rng, 3, 6, 4)
    directions = torch.nn.functional.normalize(gaussian(rng, 3, 6, 3), dim=-1)
    edges = torch.rand(3, 6)
    perm = torch.tensor([4, 1, 5, 0, 3, 2])
    with torch.no_grad():
        out = conv(center, kernel, directions, edges)
        shuffled = conv(center, kernel[:, perm], directions[:, perm], edges[:, perm])
    assert torch.allclose(out, shuffled, atol=1e-12)


def test_graph_conv_rejects_non_unit_directions(rng):
    conv = ScaleInvariantGraphConv(4, 5)
    with pytest.raises(ValueError):
        conv(gaussian(rng, 2, 4), gaussian(rng, 2, 3, 4), 2.0 * torch.ones(2, 3, 3), torch.rand(2, 3))


def test_graph_conv_scale_invariant(cloud, rng):
    group = get_group("tetrahedral")
    features = gaussian(rng, 64, 4)
    torch.manual_seed(3)
    conv = ScaleInvariantGraphConv(4, 4, activation="silu")

    def run(scale):
        hood = gather_neighborhood(single_domain(scale * cloud, scale * 1.2), features, features, 8)
        kernel_features, directions, edges, mask = graph_conv_inputs(hood, group)
        with torch.no_grad():
            return conv(features, kernel_features, directions, edges, mask)

    reference = run(1.0)
    for scale in (0.5, 2.0, 10.0):
        assert float((run(scale) - reference).abs().max() / reference.abs().max()) <= 1e-9


def test_group_conv_identity_kernel(rng):
    group = get_group("tetrahedral")
    x = gaussian(rng, 5, 3, group.size)
    out = group_conv(x, group, torch.eye(3)[None], neighborhood=[0])
    assert torch.allclose(out, x, atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_group_conv_constant_and_equivariant(seed):
    group = get_group("icosahedral")
    rng = make_rng(seed, 13)
    torch.manual_seed(5 + seed)
    conv = GroupConv(3, 4, group)
    constant = gaussian(rng, 6, 3, 1).expand(-1, -1, group.size).contiguous()
    with torch.no_grad():
        out = conv(constant)
        assert torch.allclose(out, out[..., :1].expand_as(out), atol=1e-12)
        x = gaussian(rng, 6, 3, group.size)
        for h in range(group.size):
            perm = group.left_translation(h)
            assert float((conv(x[..., perm]) - conv(x)[..., perm]).abs().max()) <= 1e-10


def test_group_conv_rejects_wrong_axis(rng):
    group = get_group("tetrahedral")
    with pytest.raises(ValueError):
        group_conv(gaussian(rng, 2, 3, 5), group, torch.zeros(1, 3, 3), neighborhood=[0])


# ----------------------------------------------------------------------------
# Attention and the ORT block
# ----------------------------------------------------------------------------

def test_zero_logits_average_values(rng):
    attention = MultiHeadAttention(4, heads=1)
    with torch.no_grad():
        attention.query.weight.zero_()
        attention.key.weight.zero_()
        attention.value.weight.copy_(torch.eye(4))
        values = gaussian(rng, 7, 4)
        attended, weights = attention.attend(gaussian(rng, 3, 4), gaussian(rng, 7, 4), values)
    assert torch.allclose(weights, torch.full((1, 3, 7), 1.0 / 7.0), atol=1e-15)
    assert torch.allclose(attended, values.mean(dim=0).expand(3, -1), atol=1e-14)


def test_attention_rows_sum_to_one(rng):
    attention = MultiHeadAttention(8, heads=2)
    with torch.no_grad():
        weights = attention.attention_weights(gaussian(rng, 5, 8), gaussian(rng, 9, 8))
    assert weights.shape == (2, 5, 9)
    assert torch.allclose(weights.sum(dim=-1), torch.ones(2, 5), atol=1e-12)


def test_attention_scaling_by_hand():
    attention = MultiHeadAttention(2, heads=1)
    with torch.no_grad():
        attention.query.weight.copy_(torch.eye(2))
        attention.key.weight.copy_(torch.eye(2))
        q = torch.tensor([[1.0, 0.0], [0.0, 2.0]])
        k = torch.tensor([[1.0, 1.0], [2.0, 0.0]])
        weights = attention.attention_weights(q, k)[0]
    logits = [[1.0 / math.sqrt(2), 2.0 / math.sqrt(2)], [2.0 / math.sqrt(2), 0.0]]
    for row, (a, b) in enumerate(logits):
        first = math.exp(a) / (math.exp(a) + math.exp(b))
        assert float(weights[row, 0]) == pytest.approx(first, abs=1e-14)


def test_attention_width_must_divide():
    with pytest.raises(ValueError):
        MultiHeadAttention(6, heads=4)


def _ort_inputs(seed):
    rng = make_rng(seed, 21)
    return (0.6 * gaussian(rng, 16, 3), gaussian(rng, 16, 8), 0.6 * gaussian(rng, 12, 3), gaussian(rng, 12, 8))


def test_ort_block_shapes_and_determinism():
    group = get_group("tetrahedral")
    torch.manual_seed(6)
    block = ORTBlock(8, 2, group, kernel_size=8, k_seed=3, max_neighbors=8, activation="silu")
    inputs = _ort_inputs(0)
    with torch.no_grad():
        out = block(*inputs, radius=0.8)
        again = block(*inputs, radius=0.8)
    assert out.features.shape == (16, 8)
    assert out.group_map.shape == (16, 8, group.size)
    assert out.prior_features.shape == (12, 8)
    assert out.observed_prime.shape == (16, 8) and out.prior_prime.shape == (12, 8)
    for a, b in zip(out, again):
        assert torch.equal(a, b)


@pytest.mark.parametrize("use_graph", [False, True])
@pytest.mark.parametrize("seed", range(10))
def test_ort_block_group_map_equivariant(seed, use_graph):
    group = get_group("icosahedral")
    torch.manual_seed(7 + seed)
    block = ORTBlock(8, 2, group, kernel_size=8, k_seed=3, max_neighbors=0, activation="silu",
                     ablations=AblationConfig(use_graph_conv=use_graph))
    observed, of, prior, pf = _ort_inputs(seed)
    with torch.no_grad():
        base = block(observed, of, prior, pf, radius=0.8)
        for h in range(group.size):
            rotation = group.elements[h]
            moved = block(observed @ rotation.T, of, prior @ rotation.T, pf, radius=0.8)
            assert float((moved.group_map - base.group_map[..., group.left_translation(h)]).abs().max()) <= 1e-6, h
            assert float((moved.features - base.features).abs().max()) <= 1e-6, h


@pytest.mark.parametrize("seed", range(3))
def test_ort_block_translation_invariant(seed):
    group = get_group("icosahedral")
    torch.manual_seed(30 + seed)
    block = ORTBlock(8, 2, group, kernel_size=8, k_seed=3, max_neighbors=8, activation="silu")
    observed, of, prior, pf = _ort_inputs(seed)
    v = torch.tensor([3.0, -2.0, 1.0])
    with torch.no_grad():
        base = block(observed, of, prior, pf, radius=0.8)
        moved = block(observed + v, of, prior + v, pf, radius=0.8)
    for name, a, b in zip(ORTOutput._fields, moved, base):
        assert float((a - b).abs().max()) <= 1e-10, name


def test_interpolation_reproduces_coarse_features(rng):
    coarse = gaussian(rng, 10, 3)
    feats = gaussian(rng, 10, 4)
    assert torch.allclose(interpolate_features(coarse, coarse, feats), feats, atol=1e-6)
    constant = torch.full((10, 4), 2.5)
    fine = gaussian(rng, 25, 3)
    assert torch.allclose(interpolate_features(fine, coarse, constant), torch.full((25, 4), 2.5), atol=1e-12)


# ----------------------------------------------------------------------------
# Gradient checks
# ----------------------------------------------------------------------------

@pytest.fixture
def small_hood():
    rng = make_rng(40, 2)
    points, features = 0.5 * gaussian(rng, 12, 3), gaussian(rng, 12, 3)
    return gather_neighborhood(single_domain(points, 0.8), features, features, 4), gaussian(rng, 12, 2, 12)


def test_linear_layer_gradient_is_exact():
    torch.manual_seed(2)
    layer = torch.nn.Linear(5, 3)
    x = gaussian(make_rng(2, 15), 7, 5)
    report = grad_check(layer, lambda: (layer(x) ** 2).sum())
    assert report.passed
    assert [t.name for t in report.tensors] == ["weight", "bias"]
    assert report.max_rel_error <= 1e-8


def test_radial_conv_gradients(small_hood):
    hood, weights = small_hood
    group = get_group("tetrahedral")
    torch.manual_seed(41)
    conv = RadialPointConv(3, 2, kernel_size=4)
    report = grad_check(conv, lambda: (conv(hood, group) * weights).sum() + (conv(hood, group) ** 2).sum())
    assert report.passed and report.max_rel_error <= 1e-6
    assert {t.name for t in report.tensors} == {"weight", "anchor_weight"}


def test_graph_conv_gradients(small_hood):
    hood, weights = small_hood
    group = get_group("tetrahedral")
    torch.manual_seed(42)
    conv = ScaleInvariantGraphConv(3, 2, activation="silu")
    kernel_features, directions, edges, mask = graph_conv_inputs(hood, group)

    def loss():
        out = conv(hood.center_features, kernel_features, directions, edges, mask)
        return (out.permute(0, 2, 1) * weights).sum()

    report = grad_check(conv, loss)
    assert report.passed
    assert len(report.tensors) == 10


def test_group_conv_gradients():
    group = get_group("tetrahedral")
    rng = make_rng(43, 2)
    torch.manual_seed(43)
    conv = GroupConv(3, 2, group)
    x = gaussian(rng, 5, 3, group.size)
    report = grad_check(conv, lambda: (conv(x) ** 2).sum())
    assert report.passed and report.max_rel_error <= 1e-6
    assert {t.name for t in report.tensors} == {"weight", "bias"}


def test_attention_gradients():
    rng = make_rng(44, 2)
    torch.manual_seed(44)
    attention = MultiHeadAttention(4, heads=2, activation="silu")
    query, key, value, weights = gaussian(rng, 5, 4), gaussian(rng, 7, 4), gaussian(rng, 7, 4), gaussian(rng, 5, 4)
    report = grad_check(attention, lambda: (attention(query, key, value) * weights).sum())
    assert report.passed
    assert {t.name for t in report.tensors} == {
        "query.weight", "key.weight", "value.weight", "norm.weight", "norm.bias", "feed.weight", "feed.bias"}


def test_corrupted_gradient_is_reported():
    torch.manual_seed(45)
    layer = torch.nn.Linear(4, 3)
    x = gaussian(make_rng(45, 2), 6, 4)

    def corrupt(name, grad):
        if name != "weight":
            return grad
        bad = grad.clone()
        bad[1, 2] += 0.5 * float(grad.abs().max()) + 1e-3
        return bad

    clean = grad_check(layer, lambda: (layer(x) ** 2).sum())
    broken = grad_check(layer, lambda: (layer(x) ** 2).sum(), corrupt=corrupt)
    assert clean.passed
    assert not broken.passed
    assert [t.name for t in broken.failures()] == ["weight"]
    assert broken.max_rel_error > 1e-2
