"""Tests for attention-guided sampling."""
import numpy as np
import pandas as pd
import pytest
import torch

from conftest import tiny_model

from lifelong_diffusion.config import GuidanceConfig
from lifelong_diffusion.diffusion.model import AttentionStack
from lifelong_diffusion.diffusion.sampler import encode_text, sample
from lifelong_diffusion.errors import DimensionError, EmptyTargetError, PairingError
from lifelong_diffusion.guidance.losses import (
    ActivationMask,
    GaussianSmoother,
    activation_masks,
    clul_loss,
    dal_loss,
    extract_mask,
    oaa_loss,
    region_masks,
)
from lifelong_diffusion.guidance.sampler import (
    GuidancePlan,
    guided_sample,
    guided_window,
    neglect_statistic,
    refine_latent,
    step_size_at,
)

TWO_CONCEPTS = "a photo of V1 dog and V3 cat"


def stack_of(*layers: torch.Tensor, grid=(2, 2)) -> AttentionStack:
    """Attention stack from (B, n_spatial, s) maps, one per layer."""
    return AttentionStack(maps=dict(enumerate(layers)), timestep=10, grid=grid)


def column_stack(columns: dict, n_tokens: int, n_spatial: int = 4) -> AttentionStack:
    """Single-layer stack whose token columns are set explicitly."""
    maps = torch.zeros(1, n_spatial, n_tokens, dtype=torch.float64)
    for token, values in columns.items():
        maps[0, :, token] = torch.tensor(values, dtype=torch.float64)
    return stack_of(maps, grid=(1, n_spatial))


def random_stack(
    seed: int, layers: int = 2, n_spatial: int = 4, n_tokens: int = 6
) -> AttentionStack:
    generator = torch.Generator().manual_seed(seed)
    maps = [
        torch.softmax(
            torch.randn(
                1, n_spatial, n_tokens, generator=generator, dtype=torch.float64
            ),
            dim=-1,
        )
        for _ in range(layers)
    ]
    return stack_of(*maps, grid=(1, n_spatial))


def guided_model():
    model = tiny_model()
    model.register_concept("V1", "dog")
    model.register_concept("V3", "cat")
    return model


class TestRegionMasks:
    def test_stripes(self) -> None:
        masks = region_masks(2, (2, 4))
        assert masks.tolist() == [[0, 0, 1, 1, 0, 0, 1, 1], [1, 1, 0, 0, 1, 1, 0, 0]]

    def test_single_concept_is_unrestricted(self) -> None:
        assert region_masks(1, (3, 3)).sum() == 0

    def test_every_cell_is_allowed_to_exactly_one_concept(self) -> None:
        masks = region_masks(3, (4, 6))
        assert torch.equal((1 - masks).sum(dim=0), torch.ones(24))


class TestClul:
    def test_attention_inside_region_costs_nothing(self) -> None:
        stack = column_stack({1: [0.5, 0.5, 0.0, 0.0]}, 3)
        masks = torch.tensor([[0.0, 0.0, 1.0, 1.0]])
        assert float(clul_loss(stack, [1], masks)) == pytest.approx(0.0)

    def test_uniform_attention(self) -> None:
        stack = column_stack({1: [0.25, 0.25, 0.25, 0.25]}, 3)
        masks = torch.tensor([[0.0, 0.0, 1.0, 1.0]])
        assert float(clul_loss(stack, [1], masks)) == pytest.approx(0.125)

    def test_matches_loop(self) -> None:
        stack = random_stack(0)
        masks = region_masks(2, (1, 4))
        expected = 0.0
        for layer in stack.layer_ids:
            for position, token in enumerate([2, 4]):
                column = stack.maps[layer][0, :, token]
                expected += sum(
                    float(column[j] * masks[position, j]) ** 2 for j in range(4)
                )
        expected /= 2 * 2
        value = float(clul_loss(stack, [2, 4], masks))
        assert value == pytest.approx(expected, abs=1e-12)

    def test_no_concepts(self) -> None:
        assert float(clul_loss(random_stack(1), [], torch.zeros(0, 4))) == 0.0

    def test_mask_size_mismatch(self) -> None:
        with pytest.raises(DimensionError):
            clul_loss(random_stack(1), [2], torch.zeros(1, 9))


class TestSmoothing:
    def test_single_cell_kernel_is_identity(self) -> None:
        maps = torch.rand(2, 9, dtype=torch.float64)
        assert torch.allclose(GaussianSmoother(1, 0.5)(maps, (3, 3)), maps)

    def test_matches_reflect_padded_convolution(self) -> None:
        rng = np.random.default_rng(0)
        image = rng.random((4, 5))
        coords = np.array([-1.0, 0.0, 1.0])
        profile = np.exp(-(coords**2) / (2 * 0.5**2))
        kernel = np.outer(profile, profile)
        kernel /= kernel.sum()
        padded = np.pad(image, 1, mode="reflect")
        expected = np.zeros_like(image)
        for i in range(4):
            for j in range(5):
                expected[i, j] = (padded[i : i + 3, j : j + 3] * kernel).sum()
        flat = torch.from_numpy(image).reshape(1, -1)
        smoothed = GaussianSmoother(3, 0.5)(flat, (4, 5))
        assert np.allclose(smoothed.reshape(4, 5).numpy(), expected, atol=1e-12)

    def test_constant_map_is_unchanged(self) -> None:
        maps = torch.full((1, 16), 0.3, dtype=torch.float64)
        assert torch.allclose(GaussianSmoother(3, 0.5)(maps, (4, 4)), maps)


class TestDal:
    def test_weak_token(self) -> None:
        stack = column_stack({1: [0.3, 0.1, 0.2, 0.0]}, 3)
        value = float(dal_loss(stack, [1], GaussianSmoother(1, 0.5)))
        assert value == pytest.approx(0.7)

    def test_saturated_tokens(self) -> None:
        stack = column_stack({1: [1.0, 0.0, 0.0, 0.0], 2: [0.0, 0.0, 1.0, 0.0]}, 3)
        value = float(dal_loss(stack, [1, 2], GaussianSmoother(1, 0.5)))
        assert value == pytest.approx(0.0)

    def test_needs_a_target(self) -> None:
        with pytest.raises(EmptyTargetError):
            dal_loss(random_stack(0), [], GaussianSmoother())


class TestActivationMask:
    def test_threshold_is_half_the_max(self) -> None:
        mask = extract_mask(torch.tensor([[0.9, 0.5, 0.1, 0.4]]))
        assert mask.tolist() == [[1.0, 1.0, 0.0, 0.0]]

    def test_threshold_is_strict(self) -> None:
        mask = extract_mask(torch.tensor([[0.8, 0.4, 0.41]]))
        assert mask.tolist() == [[1.0, 0.0, 1.0]]

    def test_flat_map_is_all_active(self) -> None:
        assert extract_mask(torch.full((1, 5), 0.2)).tolist() == [[1.0] * 5]

    def test_masks_per_layer_and_concept(self) -> None:
        stack = random_stack(3)
        masks = activation_masks(stack, [2, 5], 0.5)
        assert set(masks) == {(0, 2), (0, 5), (1, 2), (1, 5)}
        assert masks[(1, 5)].timestep == 10
        assert masks[(1, 5)].active.numel() > 0


class TestOaa:
    def test_paired_token_inside_mask(self) -> None:
        stack = column_stack({1: [0.6, 0.2], 2: [0.4, 0.8]}, 3, n_spatial=2)
        mask = torch.tensor([[1.0, 0.0]])
        masks = {(0, 2): ActivationMask(token=2, layer=0, timestep=10, mask=mask)}
        value = float(oaa_loss(stack, [2], [1], masks, {1: 2}))
        assert value == pytest.approx(0.16 / 0.8)

    def test_floors(self) -> None:
        # paired token saturates its concept's mask, the other token is absent there
        columns = {1: [1.0, 0.0], 2: [1.0, 0.0], 3: [0.0, 1.0], 4: [0.0, 1.0]}
        stack = column_stack(columns, 5, n_spatial=2)
        masks = activation_masks(stack, [2, 4], 0.5)
        value = float(oaa_loss(stack, [2, 4], [1, 3], masks, {1: 2, 3: 4}))
        assert value == pytest.approx(0.0)

    def test_matches_loop(self) -> None:
        stack = random_stack(5, layers=2, n_spatial=4, n_tokens=6)
        concepts, personal, pairing = [2, 4], [1, 3], {1: 2, 3: 4}
        masks = activation_masks(stack, concepts, 0.5)
        expected = 0.0
        for layer in stack.layer_ids:
            for concept in concepts:
                mask = masks[(layer, concept)].mask[0]
                for token in personal:
                    column = stack.maps[layer][0, :, token]
                    target = 1.0 if pairing[token] == concept else 0.0
                    inside = sum(
                        float(mask[j]) * (target - float(column[j])) ** 2
                        for j in range(4)
                    )
                    expected += inside / float(column.sum())
        expected /= 2 * 2
        value = float(oaa_loss(stack, concepts, personal, masks, pairing))
        assert value == pytest.approx(expected, abs=1e-12)

    def test_unpaired_token(self) -> None:
        stack = random_stack(0)
        masks = activation_masks(stack, [2], 0.5)
        with pytest.raises(PairingError):
            oaa_loss(stack, [2], [1, 3], masks, {1: 2})

    def test_nothing_to_separate(self) -> None:
        assert float(oaa_loss(random_stack(0), [2], [], {}, {})) == 0.0


class TestSchedule:
    def test_window(self) -> None:
        assert guided_window(50, 0.8) == 40
        assert guided_window(4, 0.5) == 2
        assert guided_window(10, 0.0) == 0

    def test_step_size_decays_linearly(self) -> None:
        config = GuidanceConfig(step_size=20.0)
        assert step_size_at(config, 0, 10) == pytest.approx(20.0)
        assert step_size_at(config, 5, 10) == pytest.approx(10.0)


class TestGuidedSampling:
    def test_toggles_off_match_plain_sampler(self, schedule) -> None:
        model = guided_model()
        config = GuidanceConfig(step_size=5.0)
        guided, report = guided_sample(
            model,
            TWO_CONCEPTS,
            schedule,
            config,
            steps=4,
            guidance_scale=3.0,
            seed=11,
            use_caa=False,
            use_oaa=False,
        )
        plain = sample(
            model, TWO_CONCEPTS, schedule, steps=4, guidance_scale=3.0, seed=11
        )
        assert torch.equal(guided, plain)
        assert not report.to_frame()["guided"].any()

    def test_guidance_changes_the_sample(self, schedule) -> None:
        model = guided_model()
        config = GuidanceConfig(step_size=50.0, guided_fraction=1.0)
        guided, _ = guided_sample(
            model, TWO_CONCEPTS, schedule, config, steps=4, guidance_scale=3.0, seed=11
        )
        plain = sample(
            model, TWO_CONCEPTS, schedule, steps=4, guidance_scale=3.0, seed=11
        )
        assert not torch.equal(guided, plain)

    def test_deterministic(self, schedule) -> None:
        model = guided_model()
        config = GuidanceConfig(step_size=5.0, guided_fraction=0.5)
        first, first_report = guided_sample(
            model, TWO_CONCEPTS, schedule, config, steps=4, seed=3, count=2
        )
        second, second_report = guided_sample(
            model, TWO_CONCEPTS, schedule, config, steps=4, seed=3, count=2
        )
        assert torch.equal(first, second)
        pd.testing.assert_frame_equal(first_report.to_frame(), second_report.to_frame())

    def test_parameters_are_untouched(self, schedule) -> None:
        model = guided_model()
        before = {
            name: param.detach().clone() for name, param in model.named_parameters()
        }
        config = GuidanceConfig(step_size=5.0)
        guided_sample(model, TWO_CONCEPTS, schedule, config, steps=4, seed=1)
        for name, param in model.named_parameters():
            assert torch.equal(before[name], param), name
            assert param.grad is None

    def test_routing(self, schedule) -> None:
        model = guided_model()
        tokens, _ = encode_text(TWO_CONCEPTS, model.vocabulary, model)
        plan = GuidancePlan.from_tokens(tokens, (8, 8), GuidanceConfig(), True, True)
        assert plan.concept_indices == (5, 8)
        assert plan.personalized_indices == (4, 7)
        assert plan.pairing == {4: 5, 7: 8}
        assert plan.regions.shape == (2, 64)

    def test_unpaired_personalized_token(self, schedule) -> None:
        model = guided_model()
        with pytest.raises(PairingError):
            guided_sample(
                model, "a photo of V1 and cat", schedule, GuidanceConfig(), steps=2
            )

    def test_report(self, schedule, tmp_path) -> None:
        model = guided_model()
        config = GuidanceConfig(step_size=5.0, guided_fraction=0.5)
        _, report = guided_sample(
            model, TWO_CONCEPTS, schedule, config, steps=4, seed=2
        )
        frame = report.to_frame()
        assert list(frame.columns) == [
            "timestep",
            "guided",
            "L_CLUL",
            "L_DAL",
            "L_OAA",
            "max_V1",
            "max_V3",
        ]
        assert frame["guided"].tolist() == [True, True, False, False]
        assert frame["timestep"].tolist() == [20, 14, 7, 1]
        last_guided = frame[frame["guided"]].iloc[-1]
        weakest = min(last_guided["max_V1"], last_guided["max_V3"])
        assert report.neglect == pytest.approx(weakest)
        report.to_csv(tmp_path / "guidance.csv")
        written = pd.read_csv(tmp_path / "guidance.csv")
        assert list(written.columns) == list(frame.columns)

    def test_no_personalized_tokens_means_no_neglect(self, schedule) -> None:
        model = guided_model()
        _, report = guided_sample(
            model, "a photo of dog and cat", schedule, GuidanceConfig(), steps=2
        )
        assert report.neglect is None
        assert (report.to_frame()["L_DAL"] == 0).all()


def guidance_objective(model, z, condition, t, plan) -> float:
    with torch.no_grad():
        _, stack = model(z, condition, t, capture_attention=True)
        return float(sum(plan.losses(stack).values()))


def test_refinement_follows_the_gradient() -> None:
    model = tiny_model(dtype=torch.float64)
    model.register_concept("V1", "dog")
    model.register_concept("V3", "cat")
    model.eval()
    tokens, condition = encode_text(TWO_CONCEPTS, model.vocabulary, model)
    plan = GuidancePlan.from_tokens(tokens, (8, 8), GuidanceConfig(), True, True)
    generator = torch.Generator().manual_seed(0)
    z = torch.randn(1, 3, 8, 8, generator=generator, dtype=torch.float64)
    direction = torch.randn(1, 3, 8, 8, generator=generator, dtype=torch.float64)

    step = 1.0
    refined = refine_latent(model, z, condition, 10, plan, step, iterations=1)
    gradient = (z - refined) / step

    h = 1e-6
    numeric = (
        guidance_objective(model, z + h * direction, condition, 10, plan)
        - guidance_objective(model, z - h * direction, condition, 10, plan)
    ) / (2 * h)
    analytic = float((gradient * direction).sum())
    assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-9)


@pytest.mark.slow
def test_concept_attention_reduces_neglect(schedule) -> None:
    model = guided_model()
    config = GuidanceConfig(step_size=20.0, guided_fraction=1.0, iterations=3)
    seeds = list(range(8))
    guided = neglect_statistic(
        model, TWO_CONCEPTS, schedule, config, seeds, 4, 3.0, use_caa=True
    )
    unguided = neglect_statistic(
        model, TWO_CONCEPTS, schedule, config, seeds, 4, 3.0, use_caa=False
    )
    assert np.mean(guided) > np.mean(unguided)
