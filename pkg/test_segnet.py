"""
Tests for the dual-head segmenter, the discriminator and parameter archives
Run with: python -m pytest test_segnet.py -v
"""
import numpy as np
import pytest
import torch

from core.errors import ConfigurationError, ShapeMismatchError, ValidationError
from core.segnet import (
    DiscriminatorConfig,
    SdmDiscriminator,
    SegmenterConfig,
    ShapeAwareVNet,
    archive_dict,
    count_parameters,
    init_params,
    load_params,
    load_segmenter,
    predict_volume,
    save_params,
)

SMALL_SEG = SegmenterConfig(base_channels=4, levels=3)
SMALL_DISC = DiscriminatorConfig(conv_channels=[4, 4, 8, 8, 8], mlp_hidden=8)


@pytest.fixture
def segmenter():
    return init_params(SMALL_SEG, rng_seed=0)


@pytest.fixture
def discriminator():
    return init_params(SMALL_DISC, rng_seed=1)


class TestSegmenterContracts:
    """Output shapes and ranges"""

    def test_output_shapes(self, segmenter):
        x = torch.rand(2, 1, 16, 8, 12)
        m, s = segmenter(x)
        assert m.shape == s.shape == x.shape

    def test_output_ranges_on_random_batches(self, segmenter, discriminator):
        segmenter = segmenter.double()
        discriminator = discriminator.double()
        gen = torch.Generator().manual_seed(0)
        with torch.no_grad():
            for _ in range(50):
                x = torch.rand(2, 1, 8, 8, 8, generator=gen, dtype=torch.float64)
                m, s = segmenter(x)
                d = discriminator(x, s)
                assert torch.all((m >= 0) & (m <= 1))
                assert torch.all((s > -1) & (s < 1))
                assert d.shape == (2,)
                assert torch.all((d > 0) & (d < 1))

    def test_without_sdm_head(self):
        model = init_params(SegmenterConfig(base_channels=4, levels=2, with_sdm_head=False), rng_seed=0)
        m, s = model(torch.rand(1, 1, 8, 8, 8))
        assert s is None
        assert m.shape == (1, 1, 8, 8, 8)

    def test_indivisible_input_rejected(self, segmenter):
        with pytest.raises(ConfigurationError) as info:
            segmenter(torch.rand(1, 1, 10, 8, 8))
        assert info.value.key == 'levels'

    def test_wrong_channels_rejected(self, segmenter):
        with pytest.raises(ShapeMismatchError):
            segmenter(torch.rand(1, 2, 8, 8, 8))

    def test_heads_share_the_trunk(self, segmenter):
        x = torch.rand(1, 1, 8, 8, 8)
        first_conv = segmenter.encoders[0].conv[0].weight

        _, s = segmenter(x)
        s.sum().backward()
        assert first_conv.grad is not None and first_conv.grad.abs().sum() > 0
        assert segmenter.seg_head.weight.grad is None

        segmenter.zero_grad(set_to_none=True)
        m, _ = segmenter(x)
        m.sum().backward()
        assert first_conv.grad.abs().sum() > 0
        assert segmenter.sdm_head.weight.grad is None

    def test_trunk_change_moves_both_heads(self, segmenter):
        x = torch.rand(1, 1, 8, 8, 8)
        with torch.no_grad():
            m0, s0 = segmenter(x)
            weight = segmenter.encoders[0].conv[0].weight
            weight.add_(torch.randn(weight.shape, generator=torch.Generator().manual_seed(0)))
            m1, s1 = segmenter(x)
        assert not torch.allclose(m0, m1)
        assert not torch.allclose(s0, s1)

    def test_zero_init_heads(self):
        config = SegmenterConfig(base_channels=4, levels=2, zero_init_heads=True)
        m, s = init_params(config, rng_seed=0)(torch.rand(1, 1, 8, 8, 8))
        assert torch.all(m == 0.5)
        assert torch.all(s == 0)


class TestConfigs:
    """Network configuration validation"""

    @pytest.mark.parametrize('kwargs,key', [
        ({'levels': 1}, 'levels'),
        ({'base_channels': 2}, 'base_channels'),
        ({'norm': 'layer'}, 'norm'),
        ({'activation': 'gelu'}, 'activation'),
    ])
    def test_segmenter_config_errors(self, kwargs, key):
        with pytest.raises(ConfigurationError) as info:
            SegmenterConfig(**kwargs)
        assert info.value.key == key

    def test_discriminator_needs_five_stages(self):
        with pytest.raises(ConfigurationError) as info:
            DiscriminatorConfig(conv_channels=[4, 4, 4])
        assert info.value.key == 'disc_channels'

    def test_divisor(self):
        assert SegmenterConfig(levels=3).divisor == 4
        assert SegmenterConfig.full_size().divisor == 16

    @pytest.mark.parametrize('norm', ['group', 'batch', 'none'])
    def test_other_norms_build(self, norm):
        model = init_params(SegmenterConfig(base_channels=6, levels=2, norm=norm), rng_seed=0)
        m, _ = model(torch.rand(2, 1, 4, 4, 4))
        assert m.shape == (2, 1, 4, 4, 4)


class TestDiscriminator:
    """Volume/SDM pair classifier"""

    def test_small_inputs(self, discriminator):
        x = torch.rand(3, 1, 16, 16, 16)
        d = discriminator(x, torch.rand_like(x) * 2 - 1)
        assert d.shape == (3,)

    def test_tiny_inputs_padded(self, discriminator):
        x = torch.rand(1, 1, 4, 4, 4)
        assert discriminator(x, x).shape == (1,)

    def test_shape_mismatch(self, discriminator):
        with pytest.raises(ShapeMismatchError):
            discriminator(torch.rand(1, 1, 8, 8, 8), torch.rand(1, 1, 8, 8, 4))

    def test_zero_init_output(self):
        config = DiscriminatorConfig(conv_channels=[4, 4, 8, 8, 8], mlp_hidden=8, zero_init_output=True)
        d = init_params(config, rng_seed=0)(torch.rand(2, 1, 8, 8, 8), torch.rand(2, 1, 8, 8, 8))
        assert torch.all(d == 0.5)

    def test_output_depends_on_sdm(self, discriminator):
        discriminator = discriminator.double().eval()
        gen = torch.Generator().manual_seed(3)
        x = torch.rand(1, 1, 16, 16, 16, generator=gen, dtype=torch.float64)
        s = (torch.rand(1, 1, 16, 16, 16, generator=gen, dtype=torch.float64) * 2 - 1).requires_grad_(True)
        discriminator(x, s).sum().backward()
        grad = s.grad
        assert torch.isfinite(grad).all()
        voxel = np.unravel_index(int(grad.abs().argmax()), grad.shape)

        eps = 1e-6
        with torch.no_grad():
            up, down = s.detach().clone(), s.detach().clone()
            up[voxel] += eps
            down[voxel] -= eps
            difference = (discriminator(x, up) - discriminator(x, down)).item() / (2 * eps)
        assert difference != 0.0
        assert difference == pytest.approx(grad[voxel].item(), rel=1e-4)

    def test_every_parameter_gets_a_finite_gradient(self, discriminator):
        x = torch.rand(2, 1, 16, 16, 16)
        discriminator(x, torch.rand_like(x) * 2 - 1).sum().backward()
        for name, p in discriminator.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name


class TestSegmenterGradients:
    """Backpropagation through both heads"""

    @pytest.mark.parametrize('head', [0, 1])
    def test_each_head_reaches_its_parameters(self, segmenter, head):
        x = torch.rand(2, 1, 16, 16, 16)
        segmenter(x)[head].mean().backward()
        unused = ('sdm_block', 'sdm_head') if head == 0 else ('seg_head',)
        for name, p in segmenter.named_parameters():
            if name.startswith(unused):
                assert p.grad is None, name
            else:
                assert p.grad is not None, name
                assert torch.isfinite(p.grad).all(), name


class TestParams:
    """Seeded initialisation, counting and archives"""

    def test_same_seed_same_params(self):
        a = init_params(SMALL_SEG, rng_seed=4)
        b = init_params(SMALL_SEG, rng_seed=4)
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(pa, pb), name

    def test_different_seed_different_params(self):
        a = init_params(SMALL_SEG, rng_seed=4)
        b = init_params(SMALL_SEG, rng_seed=5)
        assert not torch.equal(a.encoders[0].conv[0].weight, b.encoders[0].conv[0].weight)

    def test_global_rng_untouched(self):
        torch.manual_seed(123)
        expected = torch.rand(3)
        torch.manual_seed(123)
        init_params(SMALL_SEG, rng_seed=9)
        assert torch.equal(torch.rand(3), expected)

    def test_count_parameters(self, segmenter):
        assert count_parameters(segmenter) == sum(p.numel() for p in segmenter.parameters())
        assert count_parameters(None) == 0
        full = ShapeAwareVNet(SegmenterConfig.full_size())
        assert count_parameters(full) > count_parameters(segmenter)

    def test_archive_round_trip(self, tmp_path, segmenter):
        save_params(tmp_path / 'seg.pt', segmenter)
        loaded = load_params(tmp_path / 'seg.pt')
        x = torch.rand(1, 1, 8, 8, 8)
        with torch.no_grad():
            for a, b in zip(segmenter.eval()(x), loaded.eval()(x)):
                assert torch.equal(a, b)

    def test_discriminator_archive(self, tmp_path, discriminator):
        save_params(tmp_path / 'disc.pt', discriminator)
        assert isinstance(load_params(tmp_path / 'disc.pt'), SdmDiscriminator)
        with pytest.raises(ValidationError):
            load_segmenter(tmp_path / 'disc.pt')

    def test_load_segmenter_from_checkpoint(self, tmp_path, segmenter):
        torch.save({'t': 3, 'segmenter': archive_dict(segmenter)}, tmp_path / 'ckpt.pt')
        assert isinstance(load_segmenter(tmp_path / 'ckpt.pt'), ShapeAwareVNet)

    def test_unknown_archive_version(self, tmp_path, segmenter):
        archive = archive_dict(segmenter)
        archive['format_version'] = 99
        torch.save(archive, tmp_path / 'bad.pt')
        with pytest.raises(ValidationError):
            load_params(tmp_path / 'bad.pt')


class TestPredictVolume:
    """Whole-volume and sliding-window inference"""

    def test_full_volume(self, segmenter):
        volume = np.random.default_rng(0).random((8, 12, 16)).astype(np.float32)
        prob, sdm = predict_volume(segmenter, volume)
        assert prob.shape == sdm.shape == volume.shape
        assert prob.dtype == np.float32

    def test_single_window_equals_full_pass(self, segmenter):
        volume = np.random.default_rng(1).random((8, 8, 8)).astype(np.float32)
        full, _ = predict_volume(segmenter, volume)
        windowed, _ = predict_volume(segmenter, volume, patch=(8, 8, 8))
        np.testing.assert_allclose(windowed, full, atol=1e-6)

    def test_sliding_window_on_indivisible_volume(self, segmenter):
        volume = np.random.default_rng(2).random((10, 9, 13)).astype(np.float32)
        prob, sdm = predict_volume(segmenter, volume, patch=(8, 8, 8))
        assert prob.shape == sdm.shape == volume.shape
        assert np.all((prob >= 0) & (prob <= 1))

    def test_patch_larger_than_volume(self, segmenter):
        with pytest.raises(ShapeMismatchError):
            predict_volume(segmenter, np.zeros((8, 8, 8), dtype=np.float32), patch=(12, 8, 8))

    def test_keeps_training_mode(self, segmenter):
        segmenter.train()
        predict_volume(segmenter, np.zeros((8, 8, 8), dtype=np.float32))
        assert segmenter.training
