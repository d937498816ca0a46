"""The 2D stylizer: encoder contracts, the statistic transform, losses,
training behavior, and checkpointing."""

import numpy as np
import pytest
import torch

from stylefield.adain import (
    FLATTENED_DIM,
    STAT_CHANNELS,
    AdainStylizer,
    PerceptualEncoder,
    StyleStatistics,
    StylizedDecoder,
    adain_loss,
    adain_transform,
    channel_stats,
    encode,
    extract_style_statistics,
    train_adain,
)
from stylefield.data import AdainConfig
from stylefield.errors import CheckpointDigestError, ValidationError

# Frozen from the calibration run on the seeded encoder: worst observed
# mirror deviation of first-stage channel means over the reference corpus
# was 0.023 (feature magnitude ~0.4); deeper stages are less
# reflection-stable for unoriented random filters.
MIRROR_MEAN_TOLERANCES = (0.04, 0.12, 0.25, 0.50)


@pytest.fixture(scope="module")
def encoder():
    return PerceptualEncoder()


@pytest.fixture(scope="module")
def small_config():
    return AdainConfig(steps=3, batch_size=2, resize_to=None, crop_size=None)


def random_image(seed: int, size: int = 64) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(3, size, size, generator=gen)


class TestEncoder:
    def test_deterministic(self, encoder):
        image = random_image(0)
        a = encode(image, encoder)
        b = encode(image.clone(), encoder)
        for fa, fb in zip(a, b):
            assert torch.equal(fa, fb)

    def test_scaling_by_one_is_identity(self, encoder):
        image = random_image(1)
        a = encode(image, encoder)
        b = encode(image * 1.0, encoder)
        for fa, fb in zip(a, b):
            assert torch.equal(fa, fb)

    def test_stage_shape_arithmetic(self, encoder):
        features = encode(random_image(2, size=64), encoder)
        assert len(features) == 4
        expected = [(64, 64, 64), (128, 32, 32), (256, 16, 16), (512, 8, 8)]
        for feature, (c, h, w) in zip(features, expected):
            assert feature.shape == (c, h, w)

    def test_rejects_undersized_or_wrong_channels(self, encoder):
        with pytest.raises(ValidationError, match=">= 32"):
            encode(torch.rand(3, 16, 64), encoder)
        with pytest.raises(ValidationError, match="3-channel"):
            encode(torch.rand(1, 64, 64), encoder)

    def test_frozen(self, encoder):
        assert all(not p.requires_grad for p in encoder.parameters())

    def test_same_seed_same_digest(self, encoder):
        assert PerceptualEncoder().digest == encoder.digest
        assert PerceptualEncoder(seed=123).digest != encoder.digest


class TestAdainTransform:
    def test_own_stats_is_near_identity(self):
        feat = random_image(3, size=16) * 2.0
        mean, std = channel_stats(feat)
        out = adain_transform(feat, mean, std)
        assert float((out - feat).abs().max()) < 1e-4

    def test_hand_computed_channel(self):
        feat = torch.tensor([[[1.0, 3.0]]])  # one channel, two pixels
        out = adain_transform(feat, torch.tensor([5.0]), torch.tensor([2.0]))
        np.testing.assert_allclose(out.numpy(), [[[3.0, 7.0]]], atol=1e-4)

    def test_constant_channel_collapses_to_target_mean(self):
        feat = torch.full((4, 5, 5), 0.7)
        out = adain_transform(feat, torch.arange(4.0), torch.ones(4))
        for c in range(4):
            assert torch.allclose(out[c], torch.full((5, 5), float(c)), atol=1e-4)

    def test_statistics_match_targets(self):
        gen = torch.Generator().manual_seed(5)
        for _ in range(20):
            feat = torch.rand(8, 16, 16, generator=gen) * 3 - 1
            _, std_c = channel_stats(feat)
            if float(std_c.min()) <= 0.1:
                continue
            target_mean = torch.rand(8, generator=gen) * 2 - 1
            target_std = torch.rand(8, generator=gen) + 0.2
            out = adain_transform(feat, target_mean, target_std)
            mean_o, std_o = channel_stats(out)
            assert float((mean_o - target_mean).abs().max()) < 1e-4
            assert float((std_o - target_std).abs().max()) < 1e-4

    def test_rejects_channel_mismatch(self):
        with pytest.raises(ValidationError, match="channel"):
            adain_transform(torch.rand(4, 3, 3), torch.zeros(5), torch.ones(5))


class TestStyleStatistics:
    def test_flattened_dim(self, encoder):
        stats = extract_style_statistics(random_image(6), encoder)
        assert stats.channels == STAT_CHANNELS
        assert stats.flattened_dim == FLATTENED_DIM == 2 * sum(STAT_CHANNELS)
        assert stats.flatten().shape == (FLATTENED_DIM,)

    def test_deterministic(self, encoder):
        image = random_image(7)
        a = extract_style_statistics(image, encoder)
        b = extract_style_statistics(image.clone(), encoder)
        assert torch.equal(a.flatten(), b.flatten())

    def test_flatten_roundtrip(self, encoder):
        stats = extract_style_statistics(random_image(8), encoder)
        again = StyleStatistics.from_flat(stats.flatten())
        assert torch.equal(again.flatten(), stats.flatten())

    def test_population_std_convention(self, encoder):
        image = random_image(9)
        stats = extract_style_statistics(image, encoder)
        feature = encode(image, encoder)[0]
        manual = feature.flatten(1).std(dim=1, unbiased=False)
        assert torch.allclose(stats.stds[0], manual, atol=1e-6)

    def test_mirror_stability_within_calibrated_bounds(self, encoder):
        from stylefield.synthetic import render_cube_image
        from stylefield.rendering import orbit_pose

        pose = orbit_pose(40.0, 25.0, 4.0, 64, 64, 70.0)
        image = torch.from_numpy(render_cube_image(pose)).permute(2, 0, 1)
        mirrored = torch.flip(image, dims=[-1])
        a = extract_style_statistics(image, encoder)
        b = extract_style_statistics(mirrored, encoder)
        for mean_a, mean_b, bound in zip(a.means, b.means, MIRROR_MEAN_TOLERANCES):
            assert float((mean_a - mean_b).abs().max()) < bound

    def test_rejects_negative_std(self):
        with pytest.raises(ValidationError, match="nonnegative"):
            StyleStatistics((torch.zeros(4),), (torch.tensor([0.1, -0.1, 0.2, 0.3]),))


class TestAdainLoss:
    def test_zero_when_already_aligned(self, encoder):
        # A stylized image whose features equal the target and whose stats
        # equal the style's: use the style image itself both ways.
        image = random_image(10)
        stats = extract_style_statistics(image, encoder)
        target = encode(image, encoder)[-1]
        total, content, style = adain_loss(image, target, stats, 10.0, encoder)
        assert float(total) == pytest.approx(0.0, abs=1e-9)
        assert float(content) == pytest.approx(0.0, abs=1e-9)
        assert float(style) == pytest.approx(0.0, abs=1e-9)

    def test_weight_zero_gives_content_only(self, encoder):
        image, other = random_image(11), random_image(12)
        stats = extract_style_statistics(other, encoder)
        target = encode(other, encoder)[-1]
        total, content, _ = adain_loss(image, target, stats, 0.0, encoder)
        assert float(total) == pytest.approx(float(content))

    def test_doubling_weight_doubles_style_part(self, encoder):
        image, other = random_image(13), random_image(14)
        stats = extract_style_statistics(other, encoder)
        target = encode(other, encoder)[-1]
        t1, c1, _ = adain_loss(image, target, stats, 5.0, encoder)
        t2, c2, _ = adain_loss(image, target, stats, 10.0, encoder)
        assert float(t2 - c2) == pytest.approx(2 * float(t1 - c1), rel=1e-5)

    def test_decomposition_exact(self, encoder):
        image, other = random_image(15), random_image(16)
        stats = extract_style_statistics(other, encoder)
        target = encode(other, encoder)[-1]
        total, content, style = adain_loss(image, target, stats, 7.0, encoder)
        assert float(total) == float(content + 7.0 * style)


def tiny_corpus(n=6, size=64):
    return [random_image(100 + i, size).permute(1, 2, 0).numpy() for i in range(n)]


class TestTrainAdain:
    def test_rejects_empty_corpora(self, encoder, small_config):
        with pytest.raises(ValidationError, match="content"):
            train_adain([], tiny_corpus(1), small_config, encoder=encoder)
        with pytest.raises(ValidationError, match="style"):
            train_adain(tiny_corpus(1), [], small_config, encoder=encoder)

    def test_zero_steps_equals_initialization(self, encoder):
        config = AdainConfig(steps=0, resize_to=None, crop_size=None)
        torch.manual_seed(3)
        reference = StylizedDecoder()
        trained = train_adain(tiny_corpus(2), tiny_corpus(1), config, seed=3, encoder=encoder)
        for p_ref, p_new in zip(reference.state_dict().values(), trained.decoder.state_dict().values()):
            assert torch.equal(p_ref, p_new)

    def test_training_is_deterministic(self, encoder, small_config):
        losses_a, losses_b = [], []
        train_adain(
            tiny_corpus(3), tiny_corpus(2), small_config, seed=5, encoder=encoder,
            progress=lambda r: losses_a.append(r["loss"]),
        )
        train_adain(
            tiny_corpus(3), tiny_corpus(2), small_config, seed=5, encoder=encoder,
            progress=lambda r: losses_b.append(r["loss"]),
        )
        assert losses_a == losses_b

    def test_resume_reproduces_next_step_loss(self, encoder, small_config):
        base = train_adain(tiny_corpus(3), tiny_corpus(2), small_config, seed=5, encoder=encoder)
        step_losses = []
        one_more = AdainConfig(steps=1, batch_size=2, resize_to=None, crop_size=None)
        for _ in range(2):
            train_adain(
                tiny_corpus(3), tiny_corpus(2), one_more, seed=11, encoder=encoder,
                initial=base, progress=lambda r: step_losses.append(r["loss"]),
            )
        assert step_losses[0] == step_losses[1]

    def test_encoder_untouched_by_training(self, encoder, small_config):
        digest_before = encoder.digest
        train_adain(tiny_corpus(2), tiny_corpus(1), small_config, seed=1, encoder=encoder)
        assert encoder.digest == digest_before


@pytest.fixture(scope="module")
def stylizer(encoder):
    config = AdainConfig(steps=2, batch_size=2, resize_to=None, crop_size=None)
    return train_adain(tiny_corpus(2), tiny_corpus(1), config, seed=0, encoder=encoder)


class TestStylizer:
    def test_alpha_bounds(self, stylizer):
        image = tiny_corpus(1)[0]
        with pytest.raises(ValidationError, match="alpha"):
            stylizer.stylize(image, image, 1.5)

    def test_alpha_zero_is_content_reconstruction(self, stylizer, encoder):
        content, style = tiny_corpus(2)
        out = stylizer.stylize(content, style, 0.0)
        feats = encode(torch.from_numpy(content).permute(2, 0, 1), encoder)[-1]
        with torch.no_grad():
            direct = stylizer.decoder(feats.unsqueeze(0)).squeeze(0).clamp(0, 1)
        np.testing.assert_allclose(out, direct.permute(1, 2, 0).numpy(), atol=1e-6)

    def test_self_style_matches_alpha_zero(self, stylizer):
        image = tiny_corpus(1)[0]
        full = stylizer.stylize(image, image, 1.0)
        none = stylizer.stylize(image, image, 0.0)
        assert np.abs(full - none).max() < 1e-4

    def test_deterministic(self, stylizer):
        content, style = tiny_corpus(2)
        a = stylizer.stylize(content, style, 0.7)
        b = stylizer.stylize(content, style, 0.7)
        assert np.array_equal(a, b)

    def test_output_range_and_shape(self, stylizer):
        content, style = tiny_corpus(2)
        out = stylizer.stylize(content, style, 1.0)
        assert out.shape == content.shape
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_continuity_in_alpha(self, stylizer):
        content, style = tiny_corpus(2)
        at_half = stylizer.stylize(content, style, 0.5)
        scale = np.abs(stylizer.stylize(content, style, 0.51) - at_half).mean()
        step = np.abs(stylizer.stylize(content, style, 0.52) - stylizer.stylize(content, style, 0.51)).mean()
        assert step < 50 * (scale + 1e-6)

    def test_checkpoint_roundtrip_and_digest_guard(self, stylizer, tmp_path, encoder):
        path = tmp_path / "adain.pt"
        stylizer.save(path)
        again = AdainStylizer.load(path, encoder)
        content, style = tiny_corpus(2)
        assert np.array_equal(stylizer.stylize(content, style, 1.0), again.stylize(content, style, 1.0))
        with pytest.raises(CheckpointDigestError):
            AdainStylizer.load(path, PerceptualEncoder(seed=999))
