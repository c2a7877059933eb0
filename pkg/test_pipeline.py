"""
Pipeline Tests
Pyramid encoder and decoder, the denoiser with its control copy, the condition latent
and the assembled model
"""

import pytest
import torch
from pydantic import ValidationError

from conftest import tiny_model_config
from equipose.ai.diffusion import make_rng, schedule_from_config
from equipose.ai.network import (
    STAGES,
    InvariantStem,
    build_model,
    cloud_rms,
    resample_indices,
    resample_observed,
    stage_radius,
    stage_sizes,
)
from equipose.database.dataset_store import load_dataset
from equipose.models import ModelConfig, RunConfig, SynthSpec, TrainConfig
from equipose.services.evaluation_service import build_jobs, evaluate_many
from equipose.services.inference_service import dataset_objects, infer
from equipose.services.synth_dataset import synth_dataset
from equipose.services.training_service import pretrain, refine


@pytest.fixture
def model(tiny_config):
    return build_model(tiny_config, seed=1)


@pytest.fixture
def clouds(rng):
    observed = 0.2 * torch.as_tensor(rng.standard_normal((32, 3))) + torch.tensor([0.1, 0.0, 1.0])
    prior = 0.3 * torch.as_tensor(rng.standard_normal((32, 3)))
    return observed, prior


def test_stage_sizes_and_radii():
    assert stage_sizes(256) == [128, 64, 32, 16]
    assert stage_sizes(32) == [16, 8, 4, 2]
    assert stage_radius(0.1, 0, 2.0) == 0.1
    assert stage_radius(0.1, 1, 2.0) == 0.1
    assert stage_radius(0.1, 3, 2.0) == pytest.approx(0.4)


def test_resampling(rng):
    points = torch.as_tensor(rng.standard_normal((10, 3)))
    down = resample_indices(points, 6)
    assert down.tolist() == sorted(set(down.tolist())) and len(down) == 6
    assert resample_indices(points, 13).tolist() == list(range(10)) + [0, 1, 2]
    colors = torch.arange(30.0).reshape(10, 3)
    kept, kept_colors = resample_observed(points, 6, colors)
    assert torch.equal(kept_colors, colors[down]) and torch.equal(kept, points[down])
    with pytest.raises(ValueError):
        resample_indices(torch.zeros(0, 3), 4)


def test_invariant_stem_excludes_self_by_index(rng):
    base = torch.as_tensor(rng.standard_normal((10, 3)))
    points = base[resample_indices(base, 16)]
    index = InvariantStem.neighbor_index(points, 4)
    assert index.shape == (16, 4)
    assert not bool((index == torch.arange(16)[:, None]).any())
    # row 10 is a copy of row 0, which comes first among the distance-zero hits
    assert int(index[10, 0]) == 0 and int(index[0, 0]) == 10

    stem = InvariantStem(8, neighbors=4)
    gaps = torch.linalg.vector_norm(points[:, None, :] - points[None, :, :], dim=-1)
    gaps.fill_diagonal_(float("inf"))
    expected = torch.sort(gaps, dim=1).values[:, :4].mean(dim=1) / cloud_rms(points)
    assert torch.allclose(stem.descriptors(points)[:, 1], expected, atol=1e-12)


def test_invariant_stem_with_many_coincident_points(rng):
    points = torch.cat([torch.ones(12, 3), torch.as_tensor(rng.standard_normal((4, 3)))])
    index = InvariantStem.neighbor_index(points, 8)
    assert index.shape == (16, 8)
    assert not bool((index == torch.arange(16)[:, None]).any())
    assert all(len(set(row)) == 8 for row in index.tolist())
    assert torch.equal(InvariantStem(8).descriptors(points)[:12, 1], torch.zeros(12))


def test_cloud_rms():
    points = torch.tensor([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    assert cloud_rms(points) == pytest.approx(1.0)
    assert cloud_rms(torch.zeros(3, 3)) == 1e-12


def test_config_rejects_invalid_dimensions():
    with pytest.raises(ValidationError):
        ModelConfig(feature_dim=10, heads=4)
    with pytest.raises(ValidationError, match="even"):
        ModelConfig(feature_dim=9, heads=3)
    with pytest.raises(ValidationError):
        tiny_model_config(feature_dim=7, heads=1)
    with pytest.raises(ValidationError):
        ModelConfig(n_observed=16)


def test_build_model_is_seeded(tiny_config):
    a, b, c = build_model(tiny_config, 3), build_model(tiny_config, 3), build_model(tiny_config, 4)
    state_a, state_b, state_c = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(state_a[name], state_b[name]) for name in state_a)
    assert any(not torch.equal(state_a[name], state_c[name]) for name in state_a)


# ----------------------------------------------------------------------------
# Encoder
# ----------------------------------------------------------------------------

def test_observation_encoder_stages(model, clouds):
    observed, prior = clouds
    with torch.no_grad():
        out = model.observer(observed, prior)
        again = model.observer(observed, prior)
    assert [p.shape[0] for p in out.points] == [16, 8, 4, 2]
    assert [f.shape for f in out.features] == [(n, 8) for n in (16, 8, 4, 2)]
    assert [g.shape for g in out.group_maps] == [(n, 8, 12) for n in (16, 8, 4, 2)]
    assert out.prior_features.shape == (32, 8)
    assert out.radii[1] == pytest.approx(2.0 * out.radii[0]) and out.radii[2] == pytest.approx(2.0 * out.radii[1])
    for a, b in zip(out.features + out.group_maps, again.features + again.group_maps):
        assert torch.equal(a, b)
    for a, b in zip(out.selections, again.selections):
        assert torch.equal(a, b)


def test_encoder_stages_do_not_share_parameters(model):
    stages = model.observer.encoder.stages
    assert len(stages) == STAGES
    pointers = [{p.data_ptr() for p in stage.parameters()} for stage in stages]
    for i in range(STAGES):
        for j in range(i + 1, STAGES):
            assert not pointers[i] & pointers[j]


# ----------------------------------------------------------------------------
# Denoiser
# ----------------------------------------------------------------------------

def test_denoiser_output_shape(model, clouds):
    xt, prior = clouds
    with torch.no_grad():
        eps = model.denoise(xt, None, prior, 4)
    assert eps.shape == (32, 3)
    with pytest.raises(ValueError):
        model.denoise(xt[:, :2], None, prior, 4)


def test_zero_head_predicts_zero(model, clouds):
    xt, prior = clouds
    with torch.no_grad():
        for parameter in model.denoiser.head.parameters():
            parameter.zero_()
        eps = model.denoise(xt, None, prior, 2)
    assert torch.equal(eps, torch.zeros_like(eps))


def test_refine_entry_keeps_denoiser_output(model):
    rng = make_rng(21, 5)
    inputs = [
        (torch.as_tensor(rng.standard_normal((32, 3))), 0.3 * torch.as_tensor(rng.standard_normal((32, 3))),
         0.2 * torch.as_tensor(rng.standard_normal((32, 3))), int(rng.integers(1, 21)))
        for _ in range(100)
    ]
    with torch.no_grad():
        before = [model.denoise(xt, None, prior, t) for xt, prior, _, t in inputs]
        model.enter_refine()
        after = [model.denoise(xt, model.condition_latent(observed, prior), prior, t)
                 for xt, prior, observed, t in inputs]
    for a, b in zip(before, after):
        assert torch.equal(a, b)


def test_refine_entry_freezes_base(model):
    assert model.frozen_names() == []
    model.enter_refine()
    frozen = set(model.frozen_names())
    assert frozen
    for name, parameter in model.named_parameters():
        if name in frozen:
            assert name.startswith("denoiser.") and not parameter.requires_grad
        else:
            assert parameter.requires_grad
    assert any(name.startswith("denoiser.control.") for name, _ in model.named_parameters())
    assert not any(name.startswith("denoiser.control") for name in frozen)


def test_control_copy_mirrors_encoder(model):
    model.enter_refine()
    control = model.denoiser.control
    model.denoiser.enable_control(model.latent_width)
    assert model.denoiser.control is control
    base = dict(model.denoiser.encoder.named_parameters())
    for name, parameter in control.named_parameters():
        assert torch.equal(parameter, base[name])
        assert parameter.data_ptr() != base[name].data_ptr()
    for zero in [model.denoiser.control_input, *model.denoiser.control_outputs]:
        assert torch.equal(zero.weight, torch.zeros_like(zero.weight))
        assert torch.equal(zero.bias, torch.zeros_like(zero.bias))


# ----------------------------------------------------------------------------
# Condition latent and hypotheses
# ----------------------------------------------------------------------------

def test_condition_latent(model, clouds, rng):
    observed, prior = clouds
    with torch.no_grad():
        same = model.condition_latent(prior, prior)
        f = model.condition_latent(observed, prior)
        perm = torch.as_tensor(rng.permutation(32))
        shuffled = model.condition_latent(observed[perm], prior[torch.flip(perm, [0])])
    assert same.shape == (16,)
    assert torch.equal(same[:8], same[8:])
    assert torch.allclose(f, shuffled, atol=1e-12)
    with pytest.raises(ValueError):
        model.condition_latent(torch.zeros(0, 3), prior)


def test_decode_hypotheses(model, clouds):
    observed, prior = clouds
    with torch.no_grad():
        hyps = model.decode_hypotheses(observed, prior)
    assert hyps.objects == 1 and hyps.group_size == 12
    assert torch.all(hyps.sizes > 0)
    norms = torch.linalg.vector_norm(hyps.rotations, dim=-1)
    assert torch.allclose(norms, torch.ones_like(norms), atol=1e-9)
    with pytest.raises(ValueError):
        model.decode_hypotheses(observed[:20], prior)


def test_refine_entry_keeps_size_hypotheses(model, clouds):
    observed, prior = clouds
    with torch.no_grad():
        before = model.decode_hypotheses(observed, prior)
        model.enter_refine()
        after = model.decode_hypotheses(observed, prior, model.condition_latent(observed, prior))
    assert torch.equal(before.sizes, after.sizes)
    assert torch.equal(before.rotations, after.rotations)


def test_hypotheses_follow_observation_scale(clouds):
    model = build_model(tiny_model_config(), seed=2)
    observed, prior = clouds
    center = observed.mean(dim=0)
    with torch.no_grad():
        base = model.decode_hypotheses(observed, prior)
        doubled = model.decode_hypotheses(center + 2.0 * (observed - center), prior)
    assert torch.allclose(doubled.sizes, 2.0 * base.sizes, rtol=1e-9)
    assert torch.allclose(doubled.rotations, base.rotations, atol=1e-9)


# ----------------------------------------------------------------------------
# End to end
# ----------------------------------------------------------------------------

def evaluate_phase(model, dataset, schedule):
    results = infer(model, dataset_objects(dataset, "test"), schedule, seed=0)
    shapes = {r.record.instance_id: r.shape for r in results}
    return evaluate_many(build_jobs([r.record for r in results], dataset, shapes))


@pytest.mark.slow
def test_toy_categories_end_to_end(tmp_path):
    spec = SynthSpec(categories=["box", "cylinder", "bottle"], instances_per_category=12, n_points=128, seed=11)
    synth_dataset(spec, tmp_path / "data")
    dataset = load_dataset(tmp_path / "data")
    config = RunConfig(train=TrainConfig(batch_size=4, steps_per_phase=2000, checkpoint_every=2000, seed=0))
    assert (config.model.n_points, config.model.feature_dim, config.schedule.T) == (128, 32, 20)
    schedule = schedule_from_config(config.schedule)
    out = tmp_path / "run"
    pretrained = pretrain(dataset, config, out)
    unrefined = evaluate_phase(pretrained.model, dataset, schedule)
    refined_model = refine(out / "pretrain", dataset, config, out).model
    refined = evaluate_phase(refined_model, dataset, schedule)

    assert len(refined) == len(dataset.entries("test")) >= 9
    hits = sum(1 for r in refined if r.rotation_error_deg < 15.0 and r.translation_error_cm < 5.0)
    assert hits >= 0.8 * len(refined)
    mean_cd = sum(r.cd for r in refined) / len(refined)
    assert sum(r.cd for r in unrefined) / len(unrefined) >= 2.0 * mean_cd
