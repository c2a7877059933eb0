"""
Prior-Aware Pyramid Layers
Seed generation, neighbor domains, the SE(3) block (radial point convolution,
scale-invariant graph convolution, group convolution) and the ORT attention block
"""

import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import torch
from pydantic import BaseModel, ConfigDict
from torch import nn

from ..geometry.group import RotationGroup
from ..geometry.neighbors import ball_query, knn, pairwise_sq_dists
from ..models import AblationConfig

# Offsets shorter than this fraction of the radius count as coincident with the center
COINCIDENT_TOL = 1e-12

ACTIVATIONS = {"relu": nn.ReLU, "silu": nn.SiLU}


def make_activation(name: str) -> nn.Module:
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}")
    return ACTIVATIONS[name]()


def icosahedron_vertices() -> torch.Tensor:
    """The 12 unit vertices of a regular icosahedron."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    vertices = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            vertices += [(0.0, a, b), (a, b, 0.0), (b, 0.0, a)]
    v = torch.tensor(vertices, dtype=torch.float64)
    return v / torch.linalg.vector_norm(v, dim=1, keepdim=True)


def base_radius(points: torch.Tensor, quantile: float = 0.1) -> float:
    """Quantile of nearest-neighbor distances, the stage-0 neighborhood radius."""
    with torch.no_grad():
        d = pairwise_sq_dists(points, points)
        d.fill_diagonal_(float("inf"))
        nearest = d.min(dim=1).values.clamp_min(0.0).sqrt()
        radius = float(torch.quantile(nearest, quantile))
        if not math.isfinite(radius) or radius <= 0.0:
            positive = nearest[nearest > 0]
            radius = float(positive.min()) if positive.numel() else 1.0
    return radius


class ZeroConv(nn.Linear):
    """1x1 convolution (a per-point linear map) whose weight and bias start at zero."""

    def __init__(self, in_features: int, out_features: int):
        super().__init__(in_features, out_features)
        nn.init.zeros_(self.weight)
        nn.init.zeros_(self.bias)


# ----------------------------------------------------------------------------
# Seed points and neighbor domains
# ----------------------------------------------------------------------------

def generate_seed_points(
    observed_points: torch.Tensor,
    observed_features: torch.Tensor,
    prior_points: torch.Tensor,
    prior_features: torch.Tensor,
    k_seed: int,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Re-coordinate every prior point at the centroid of its k_seed most correlated observed points.

    Returns:
        (coords (n_l + N_r) x 3, features (n_l + N_r) x d), observed rows first
    """
    n_l = observed_points.shape[0]
    if k_seed < 1 or k_seed > n_l:
        raise ValueError(f"k_seed={k_seed} must lie in [1, {n_l}]")
    if observed_features.shape[1] != prior_features.shape[1]:
        raise ValueError("observed and prior feature widths differ")
    with torch.no_grad():
        correlation = prior_features @ observed_features.T
        references = torch.sort(-correlation, dim=1, stable=True).indices[:, :k_seed]
    remapped = observed_points[references].mean(dim=1)
    return torch.cat([observed_points, remapped]), torch.cat([observed_features, prior_features])


class NeighborDomain(BaseModel):
    """Ball neighborhoods of radius r around every center; padded index table with a mask."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: int
    radius: float
    centers: torch.Tensor
    support: torch.Tensor
    index: torch.Tensor
    mask: torch.Tensor
    source: torch.Tensor  # 0 = observed, 1 = prior

    def neighbors(self, i: int) -> List[int]:
        return [int(j) for j, ok in zip(self.index[i], self.mask[i]) if ok]


def build_neighbor_domains(
    observed_points: torch.Tensor,
    prior_points: torch.Tensor,
    radius: float,
    max_neighbors: int = 0,
) -> Dict[int, NeighborDomain]:
    """
    The four neighbor domains over the seed cloud.

    1: prior centers, observed neighbors
    2: observed centers, prior neighbors
    3: observed centers, neighbors from observed and prior (observed indexed first)
    4: observed centers, observed neighbors
    """
    if radius <= 0:
        raise ValueError(f"neighborhood radius must be positive, got {radius}")
    n_l = observed_points.shape[0]
    seed = torch.cat([observed_points, prior_points])
    layout = {
        1: (prior_points, observed_points, 0),
        2: (observed_points, prior_points, 1),
        3: (observed_points, seed, None),
        4: (observed_points, observed_points, 0),
    }
    domains = {}
    for kind, (centers, support, tag) in layout.items():
        index, mask = ball_query(centers, support, radius, max_neighbors)
        if tag is None:
            source = (index >= n_l).to(torch.int8)
        else:
            source = torch.full_like(index, tag, dtype=torch.int8)
        domains[kind] = NeighborDomain(
            kind=kind, radius=radius, centers=centers, support=support,
            index=index, mask=mask, source=source,
        )
    return domains


def single_domain(points: torch.Tensor, radius: float, max_neighbors: int = 0) -> NeighborDomain:
    """Domain of kind 4 on one point set (used by the decoder's group-free SE(3) block)."""
    index, mask = ball_query(points, points, radius, max_neighbors)
    return NeighborDomain(
        kind=4, radius=radius, centers=points, support=points,
        index=index, mask=mask, source=torch.zeros_like(index, dtype=torch.int8),
    )


# ----------------------------------------------------------------------------
# Radial kernel points
# ----------------------------------------------------------------------------

def spherical_offset(radius: float, polar: float, azimuth: float) -> torch.Tensor:
    """Point on the r-sphere from its polar angle (from +z) and azimuth (from +x)."""
    return torch.tensor([
        radius * math.sin(polar) * math.cos(azimuth),
        radius * math.sin(polar) * math.sin(azimuth),
        radius * math.cos(polar),
    ], dtype=torch.float64)


def radial_kernel_points(center: torch.Tensor, radius: float, initial: torch.Tensor) -> torch.Tensor:
    """
    Kernel geometry of one neighborhood: the center followed by every initial
    kernel point projected along its direction onto the r-sphere.

    Initial points coincident with the center are mapped to the +z direction.
    """
    if radius <= 0:
        raise ValueError(f"kernel radius must be positive, got {radius}")
    direction = initial - center
    norm = torch.linalg.vector_norm(direction, dim=-1, keepdim=True)
    fallback = torch.tensor([0.0, 0.0, 1.0], dtype=direction.dtype).expand_as(direction)
    unit = torch.where(norm > 0, direction / norm.clamp_min(1e-300), fallback)
    return torch.cat([center[None], center + radius * unit])


class Neighborhood(NamedTuple):
    """Gathered neighborhoods of one domain plus the selected adaptive kernels."""

    radius: float
    offsets: torch.Tensor  # M x H x 3, support minus center
    mask: torch.Tensor  # M x H
    features: torch.Tensor  # M x H x d support features
    center_features: torch.Tensor  # M x d
    kernel_slots: torch.Tensor  # M x J neighbor slot of each radial kernel
    kernel_mask: torch.Tensor  # M x J
    kernel_units: torch.Tensor  # M x J x 3 unit direction of each radial kernel


def gather_neighborhood(
    domain: NeighborDomain,
    center_features: torch.Tensor,
    support_features: torch.Tensor,
    kernel_size: int,
) -> Neighborhood:
    """
    Gather neighbor offsets and features, and pick the K-1 initial kernel points of
    every center as its nearest non-coincident neighbors in feature space.
    """
    offsets = domain.support[domain.index] - domain.centers[:, None, :]
    features = support_features[domain.index]
    with torch.no_grad():
        length = torch.linalg.vector_norm(offsets, dim=-1)
        valid = domain.mask & (length > COINCIDENT_TOL * domain.radius)
        feature_gap = ((center_features.detach()[:, None, :] - features.detach()) ** 2).sum(-1)
        feature_gap = torch.where(valid, feature_gap, torch.full_like(feature_gap, float("inf")))
        width = min(kernel_size - 1, offsets.shape[1])
        slots = torch.sort(feature_gap, dim=1, stable=True).indices[:, :width]
        kernel_mask = torch.gather(valid, 1, slots)
        picked = torch.gather(offsets, 1, slots[..., None].expand(-1, -1, 3))
        picked_length = torch.gather(length, 1, slots).clamp_min(1e-300)
        units = torch.where(kernel_mask[..., None], picked / picked_length[..., None], torch.zeros_like(picked))
    return Neighborhood(
        radius=domain.radius, offsets=offsets, mask=domain.mask, features=features,
        center_features=center_features, kernel_slots=slots, kernel_mask=kernel_mask,
        kernel_units=units,
    )


# ----------------------------------------------------------------------------
# SE(3) block layers
# ----------------------------------------------------------------------------

class RadialPointConv(nn.Module):
    """
    Point convolution with data-adaptive radial kernels, evaluated per group element.

    out(x, g) = sum_y Phi(g^-1 (y - x)) * sum_k mu(y - x, x~_k) f(y) W_k

    mu is the KPConv linear correlation with the adaptive kernels; Phi is a learned
    per-channel response over fixed anchors (center plus icosahedron vertices on the
    r-sphere) read in the frame of group element g.
    """

    def __init__(self, d_in: int, d_out: int, kernel_size: int = 16, influence_ratio: float = 0.5):
        super().__init__()
        self.kernel_size = kernel_size
        self.influence_ratio = influence_ratio
        bound = 1.0 / math.sqrt(d_in)
        self.weight = nn.Parameter(torch.empty(kernel_size, d_in, d_out).uniform_(-bound, bound))
        anchors = torch.cat([torch.zeros(1, 3, dtype=torch.float64), icosahedron_vertices()])
        self.register_buffer("anchors", anchors)
        self.anchor_weight = nn.Parameter(1.0 + 0.1 * torch.randn(anchors.shape[0], d_out))

    def kernel_influence(self, hood: Neighborhood) -> torch.Tensor:
        """mu for every neighbor and kernel (center first): M x H x K'."""
        with torch.no_grad():
            unit_offsets = hood.offsets / hood.radius
            m = hood.kernel_units.shape[0]
            centers = torch.zeros(m, 1, 3, dtype=hood.kernel_units.dtype)
            kernels = torch.cat([centers, hood.kernel_units], dim=1)
            valid = torch.cat([torch.ones(m, 1, dtype=torch.bool), hood.kernel_mask], dim=1)
            gap = torch.linalg.vector_norm(unit_offsets[:, :, None, :] - kernels[:, None, :, :], dim=-1)
            mu = (1.0 - gap / self.influence_ratio).clamp_min(0.0)
            mu = mu * valid[:, None, :] * hood.mask[..., None]
        return mu

    def forward(self, hood: Neighborhood, group: RotationGroup) -> torch.Tensor:
        mu = self.kernel_influence(hood)
        n_kernels = mu.shape[-1]
        response = torch.einsum("mhk,mhi,kio->mho", mu, hood.features, self.weight[:n_kernels])
        with torch.no_grad():
            rotated = torch.einsum("gji,mhj->mhgi", group.elements, hood.offsets / hood.radius)
            gap = torch.linalg.vector_norm(rotated[..., None, :] - self.anchors, dim=-1)
            anchor_influence = (1.0 - gap / self.influence_ratio).clamp_min(0.0)
        phi = anchor_influence @ self.anchor_weight
        return torch.einsum("mhgo,mho->mog", phi, response)


class ScaleInvariantGraphConv(nn.Module):
    """
    Graph convolution over a center and its radial kernel nodes.

    h_j = linear([h_j^k, r_j]) with r_j a unit direction;
    h = phi_h(h_i, sum_j phi_e(h_i, h_j, alpha_ij)).
    Only unit directions and radius-relative edges enter, so the output does not
    change when coordinates and radius are scaled together.
    """

    def __init__(self, d_in: int, d_out: int, activation: str = "relu"):
        super().__init__()
        self.embed = nn.Linear(d_in + 3, d_out)
        self.edge = nn.Sequential(nn.Linear(2 * d_out + 1, d_out), make_activation(activation), nn.Linear(d_out, d_out))
        self.node = nn.Sequential(nn.Linear(2 * d_out, d_out), make_activation(activation), nn.Linear(d_out, d_out))

    def forward(
        self,
        center_features: torch.Tensor,
        kernel_features: torch.Tensor,
        directions: torch.Tensor,
        edges: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """
        Args:
            center_features: M x d_in
            kernel_features: M x J x d_in
            directions: M x J x 3, or M x J x G x 3 for one direction per group element
            edges: M x J edge values alpha_ij
            mask: M x J valid-node mask (all valid when omitted)

        Returns:
            M x d_out, or M x G x d_out when directions carry a group axis
        """
        m, j = kernel_features.shape[:2]
        if mask is None:
            mask = torch.ones(m, j, dtype=torch.bool)
        lengths = torch.linalg.vector_norm(directions, dim=-1)
        check = mask if directions.ndim == 3 else mask[..., None].expand_as(lengths)
        if bool(((lengths - 1.0).abs() > 1e-6)[check].any()):
            raise ValueError("graph convolution directions must be unit vectors (tolerance 1e-6)")

        zeros = torch.zeros(m, 3, dtype=center_features.dtype)
        h_center = self.embed(torch.cat([center_features, zeros], dim=-1))
        weight = mask.to(center_features.dtype)
        if directions.ndim == 3:
            h_nodes = self.embed(torch.cat([kernel_features, directions], dim=-1))
            messages = self.edge(torch.cat([
                h_center[:, None, :].expand(-1, j, -1), h_nodes, edges[..., None],
            ], dim=-1))
            aggregate = (messages * weight[..., None]).sum(dim=1)
            return self.node(torch.cat([h_center, aggregate], dim=-1))

        g = directions.shape[2]
        expanded = kernel_features[:, :, None, :].expand(-1, -1, g, -1)
        h_nodes = self.embed(torch.cat([expanded, directions], dim=-1))
        messages = self.edge(torch.cat([
            h_center[:, None, None, :].expand(-1, j, g, -1), h_nodes, edges[:, :, None, None].expand(-1, -1, g, 1),
        ], dim=-1))
        aggregate = (messages * weight[..., None, None]).sum(dim=1)
        return self.node(torch.cat([h_center[:, None, :].expand(-1, g, -1), aggregate], dim=-1))


def graph_conv_inputs(hood: Neighborhood, group: Optional[RotationGroup] = None):
    """
    Kernel node features, radial directions (per group element when a group is
    given), radius-relative edges and node mask of a gathered neighborhood.
    """
    kernel_features = torch.gather(
        hood.features, 1, hood.kernel_slots[..., None].expand(-1, -1, hood.features.shape[-1]))
    with torch.no_grad():
        picked = torch.gather(hood.offsets, 1, hood.kernel_slots[..., None].expand(-1, -1, 3))
        edges = torch.linalg.vector_norm(picked, dim=-1) / hood.radius
        directions = -hood.kernel_units
        if group is not None:
            directions = torch.einsum("gji,mkj->mkgi", group.elements, directions)
            directions = torch.where(hood.kernel_mask[..., None, None], directions, torch.zeros_like(directions))
    return kernel_features, directions, edges, hood.kernel_mask


class SE3Layer(nn.Module):
    """Radial point convolution plus scale-invariant graph convolution over one domain."""

    def __init__(self, d_in: int, d_out: int, kernel_size: int = 16, influence_ratio: float = 0.5,
                 activation: str = "relu", use_radial: bool = True, use_graph: bool = True):
        super().__init__()
        self.d_out = d_out
        self.kernel_size = kernel_size
        self.use_radial = use_radial
        self.use_graph = use_graph
        self.radial = RadialPointConv(d_in, d_out, kernel_size, influence_ratio)
        self.graph = ScaleInvariantGraphConv(d_in, d_out, activation)

    def forward(self, hood: Neighborhood, group: RotationGroup) -> torch.Tensor:
        m = hood.center_features.shape[0]
        out = torch.zeros(m, self.d_out, group.size, dtype=hood.center_features.dtype)
        if self.use_radial:
            out = out + self.radial(hood, group)
        if self.use_graph:
            kernel_features, directions, edges, mask = graph_conv_inputs(hood, group)
            out = out + self.graph(hood.center_features, kernel_features, directions, edges, mask).permute(0, 2, 1)
        return out


def group_conv(x: torch.Tensor, group: RotationGroup, weight: torch.Tensor,
               bias: Optional[torch.Tensor] = None, neighborhood: Optional[Sequence[int]] = None) -> torch.Tensor:
    """
    out[:, :, g] = sum_m in[:, :, g * H_m] @ W_m over the group neighborhood H.

    Args:
        x: n x d_in x |G|
        weight: |H| x d_in x d_out
    """
    if x.ndim != 3 or x.shape[-1] != group.size:
        raise ValueError(f"group axis of size {group.size} expected, got shape {tuple(x.shape)}")
    neighborhood = list(group.neighborhood() if neighborhood is None else neighborhood)
    if weight.shape[0] != len(neighborhood):
        raise ValueError("one weight matrix per neighborhood element expected")
    index = group.cayley[:, neighborhood]
    out = torch.einsum("nigh,hio->nog", x[:, :, index], weight)
    if bias is not None:
        out = out + bias[None, :, None]
    return out


class GroupConv(nn.Module):
    """SE(3) group convolution over the one-hop neighborhood of every group element."""

    def __init__(self, d_in: int, d_out: int, group: RotationGroup):
        super().__init__()
        self.group = group
        self.neighborhood = group.neighborhood()
        bound = 1.0 / math.sqrt(d_in * len(self.neighborhood))
        self.weight = nn.Parameter(torch.empty(len(self.neighborhood), d_in, d_out).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.zeros(d_out))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return group_conv(x, self.group, self.weight, self.bias, self.neighborhood)


class SE3Block(nn.Module):
    """
    Per-domain SE(3) layers summed by center type, then the group convolution.

    Observed centers collect domains 2, 3 and 4; prior centers use domain 1.
    """

    def __init__(self, d: int, group: RotationGroup, kernel_size: int = 16, influence_ratio: float = 0.5,
                 activation: str = "relu", ablations: Optional[AblationConfig] = None,
                 kinds: Sequence[int] = (1, 2, 3, 4)):
        super().__init__()
        ablations = ablations or AblationConfig()
        self.group = group
        self.kernel_size = kernel_size
        self.kinds = tuple(kinds)
        self.use_group_conv = ablations.use_group_conv
        self.layers = nn.ModuleDict({
            f"domain{kind}": SE3Layer(d, d, kernel_size, influence_ratio, activation,
                                      ablations.use_radial_conv, ablations.use_graph_conv)
            for kind in self.kinds
        })
        self.group_conv = GroupConv(d, d, group)
        self.activation = make_activation(activation)

    def _post(self, x: torch.Tensor) -> torch.Tensor:
        x = self.activation(x)
        if self.use_group_conv:
            x = self.activation(self.group_conv(x))
        return x

    def forward(
        self,
        domains: Dict[int, NeighborDomain],
        observed_features: torch.Tensor,
        prior_features: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """
        Returns:
            (observed group map n_l x d x |G|, prior group map N_r x d x |G| or None)
        """
        support = {4: observed_features}
        centers = {4: observed_features}
        if prior_features is not None:
            support.update({1: observed_features, 2: prior_features,
                            3: torch.cat([observed_features, prior_features])})
            centers.update({1: prior_features, 2: observed_features, 3: observed_features})

        observed_map = None
        prior_map = None
        for kind in self.kinds:
            hood = gather_neighborhood(domains[kind], centers[kind], support[kind], self.kernel_size)
            out = self.layers[f"domain{kind}"](hood, self.group)
            if kind == 1:
                prior_map = out
            else:
                observed_map = out if observed_map is None else observed_map + out
        return self._post(observed_map), None if prior_map is None else self._post(prior_map)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with h heads, then LayerNorm, Linear, activation and a residual."""

    def __init__(self, d: int, heads: int = 4, activation: str = "relu"):
        super().__init__()
        if d % heads != 0:
            raise ValueError(f"width {d} is not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.query = nn.Linear(d, d, bias=False)
        self.key = nn.Linear(d, d, bias=False)
        self.value = nn.Linear(d, d, bias=False)
        self.norm = nn.LayerNorm(d)
        self.feed = nn.Linear(d, d)
        self.activation = make_activation(activation)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        return x.reshape(x.shape[0], self.heads, self.d // self.heads).transpose(0, 1)

    def attention_weights(self, query_source: torch.Tensor, key_source: torch.Tensor) -> torch.Tensor:
        """h x N_q x N_k softmax weights; logits scaled by 1/sqrt(d)."""
        q = self._split(self.query(query_source))
        k = self._split(self.key(key_source))
        return torch.softmax(q @ k.transpose(1, 2) / math.sqrt(self.d), dim=-1)

    def attend(self, query_source: torch.Tensor, key_source: torch.Tensor,
               value_source: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Concatenated head outputs (before normalization and residual) and the weights."""
        weights = self.attention_weights(query_source, key_source)
        heads = weights @ self._split(self.value(value_source))
        return heads.transpose(0, 1).reshape(query_source.shape[0], self.d), weights

    def forward(self, query_source: torch.Tensor, key_source: torch.Tensor, value_source: torch.Tensor) -> torch.Tensor:
        attended, _ = self.attend(query_source, key_source, value_source)
        return query_source + self.activation(self.feed(self.norm(attended)))


class ORTOutput(NamedTuple):
    features: torch.Tensor  # fused F_l, n_l x d
    group_map: torch.Tensor  # F^(l), n_l x d x |G|
    prior_features: torch.Tensor  # prior features for the next stage, N_r x d
    observed_prime: torch.Tensor  # F_l'
    prior_prime: torch.Tensor  # F_r'


class ORTBlock(nn.Module):
    """Seed generator, neighbor domains, SE(3) block and the two attention passes of one stage."""

    def __init__(self, d: int, heads: int, group: RotationGroup, kernel_size: int = 16, k_seed: int = 3,
                 max_neighbors: int = 16, influence_ratio: float = 0.5, activation: str = "relu",
                 ablations: Optional[AblationConfig] = None):
        super().__init__()
        self.ablations = ablations or AblationConfig()
        self.k_seed = k_seed
        self.max_neighbors = max_neighbors
        self.se3 = SE3Block(d, group, kernel_size, influence_ratio, activation, self.ablations)
        self.prior_attention = MultiHeadAttention(d, heads, activation)
        self.fuse_attention = MultiHeadAttention(d, heads, activation)

    def forward(self, observed_points: torch.Tensor, observed_features: torch.Tensor,
                prior_points: torch.Tensor, prior_features: torch.Tensor, radius: float) -> ORTOutput:
        n_l = observed_points.shape[0]
        if self.ablations.use_seed_points:
            seed, _ = generate_seed_points(observed_points, observed_features, prior_points, prior_features,
                                           min(self.k_seed, n_l))
            prior_points = seed[n_l:]
        domains = build_neighbor_domains(observed_points, prior_points, radius, self.max_neighbors)
        observed_map, prior_map = self.se3(domains, observed_features, prior_features)
        observed_prime = observed_map.mean(dim=-1)
        prior_prime = prior_map.mean(dim=-1)
        prior_next = self.prior_attention(prior_prime, observed_prime, observed_features)
        fused = self.fuse_attention(observed_prime, prior_next, prior_next)
        return ORTOutput(fused, observed_map, prior_next, observed_prime, prior_prime)


def interpolate_features(fine_points: torch.Tensor, coarse_points: torch.Tensor,
                         coarse_features: torch.Tensor, k: int = 3) -> torch.Tensor:
    """Inverse-distance weighted k-NN interpolation of coarse features onto fine points."""
    k = min(k, coarse_points.shape[0])
    index = knn(fine_points, coarse_points, k)
    with torch.no_grad():
        distance = torch.linalg.vector_norm(fine_points[:, None, :] - coarse_points[index], dim=-1)
        weight = 1.0 / (distance + 1e-8)
        weight = weight / weight.sum(dim=1, keepdim=True)
    return (coarse_features[index] * weight[..., None]).sum(dim=1)
