import numpy as np
import pytest
import torch

from damagemap.model import (
    DamageNet,
    ModelConfig,
    NonFiniteLogits,
    encode_image,
    forward_pair,
    fuse,
    image_to_tensor,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from damagemap.types import IGNORE, ImagePair


def random_image(rng, h=64, w=64):
    return rng.uniform(0.0, 1.0, (h, w, 3)).astype(np.float32)


def random_pair(rng, h=64, w=64):
    return ImagePair(scene_id="t", pre=random_image(rng, h, w), post=random_image(rng, h, w))


class TestModelConfig:
    def test_defaults_valid(self):
        cfg = ModelConfig()
        assert cfg.divisor == 16
        assert cfg.fused_channels == 64

    def test_bad_fusion_rejected(self):
        with pytest.raises(ValueError, match="fusion"):
            ModelConfig(fusion="late-sum")

    def test_bad_channels_rejected(self):
        with pytest.raises(ValueError, match="encoder_channels"):
            ModelConfig(encoder_channels=(16,))

    def test_bad_num_classes_rejected(self):
        with pytest.raises(ValueError, match="num_classes"):
            ModelConfig(num_classes=3)

    def test_dict_round_trip(self):
        cfg = ModelConfig(encoder_channels=(8, 16), pyramid_channels=12, fusion="mono-post", seed=5)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            ModelConfig.from_dict({"depth": 4})


class TestInit:
    def test_same_seed_identical_parameters(self):
        a = init_model(ModelConfig(seed=3))
        b = init_model(ModelConfig(seed=3))
        for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self):
        a = init_model(ModelConfig(seed=1))
        b = init_model(ModelConfig(seed=2))
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.state_dict().values(), b.state_dict().values())
        )

    def test_input_concat_stem_halves_identical(self):
        m = init_model(ModelConfig(fusion="input-concat", seed=0))
        stem = m.stages[0][0]
        assert stem.in_channels == 6
        assert torch.equal(stem.weight[:, :3], stem.weight[:, 3:])


class TestEncode:
    def test_shape_contract(self, rng):
        m = init_model(ModelConfig(seed=0))
        feat = encode_image(m, random_image(rng))
        assert feat.shape == (16, 16, 32)

    def test_pre_and_post_branches_are_the_same_function(self, rng):
        m = init_model(ModelConfig(seed=0))
        img = random_image(rng)
        np.testing.assert_array_equal(encode_image(m, img), encode_image(m, img))

    def test_all_zero_image_finite(self):
        m = init_model(ModelConfig(seed=0))
        feat = encode_image(m, np.zeros((32, 32, 3), dtype=np.float32))
        assert np.isfinite(feat).all()

    def test_indivisible_dimensions_report_divisor(self, rng):
        m = init_model(ModelConfig(seed=0))
        with pytest.raises(ValueError, match="16"):
            encode_image(m, random_image(rng, 24, 24))


class TestWeightSharing:
    def test_encoder_parameter_counts_match_across_fusion(self):
        mono = init_model(ModelConfig(fusion="mono-post", seed=0))
        dual = init_model(ModelConfig(fusion="feature-concat", seed=0))
        assert mono.encoder_parameter_count() == dual.encoder_parameter_count()

    def test_only_head_input_widens(self):
        mono = init_model(ModelConfig(fusion="mono-post", seed=0))
        dual = init_model(ModelConfig(fusion="feature-concat", seed=0))
        total = lambda m: sum(p.numel() for p in m.parameters())
        head_in = lambda m: m.head[0]
        extra = (
            head_in(dual).in_channels - head_in(mono).in_channels
        ) * head_in(dual).out_channels * 9
        assert total(dual) - total(mono) == extra


class TestFuse:
    def test_feature_concat_stacks_channels(self):
        a = torch.zeros(1, 32, 16, 16)
        b = torch.ones(1, 32, 16, 16)
        out = fuse(a, b, "feature-concat")
        assert out.shape == (1, 64, 16, 16)
        assert torch.equal(out[:, :32], a)
        assert torch.equal(out[:, 32:], b)

    def test_mono_post_passthrough(self):
        b = torch.randn(1, 32, 8, 8)
        assert fuse(None, b, "mono-post") is b

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="differ"):
            fuse(torch.zeros(1, 32, 16, 16), torch.zeros(1, 32, 8, 8), "feature-concat")

    def test_input_modes_do_not_use_fusion_stage(self):
        with pytest.raises(ValueError, match="does not apply"):
            fuse(None, torch.zeros(1, 3, 8, 8), "input-diff")


class TestForward:
    @pytest.mark.parametrize("fusion", ["feature-concat", "input-concat", "input-diff", "mono-post"])
    def test_logit_shape_all_modes(self, fusion, rng):
        m = init_model(ModelConfig(fusion=fusion, seed=0))
        logits = forward_pair(m, random_pair(rng))
        assert logits.shape == (64, 64, 5)
        assert np.isfinite(logits).all()

    def test_input_diff_of_equal_pair_matches_zero_image(self, rng):
        m = init_model(ModelConfig(fusion="input-diff", seed=0))
        img = random_image(rng)
        pair_logits = forward_pair(m, ImagePair(scene_id="t", pre=img, post=img))
        zeros = np.zeros_like(img)
        zero_logits = forward_pair(m, ImagePair(scene_id="z", pre=zeros, post=zeros))
        np.testing.assert_array_equal(pair_logits, zero_logits)

    def test_feature_concat_order_matters(self, rng):
        m = init_model(ModelConfig(seed=0))
        pair = random_pair(rng)
        swapped = ImagePair(scene_id="t", pre=pair.post, post=pair.pre)
        assert not np.array_equal(forward_pair(m, pair), forward_pair(m, swapped))

    def test_missing_pre_rejected(self, rng):
        m = init_model(ModelConfig(seed=0))
        with pytest.raises(ValueError, match="requires the pre image"):
            m(None, image_to_tensor(random_image(rng)))

    def test_inference_deterministic(self, rng):
        m = init_model(ModelConfig(seed=0))
        pair = random_pair(rng)
        np.testing.assert_array_equal(forward_pair(m, pair), forward_pair(m, pair))


class TestPredict:
    def test_one_hot_class_three(self):
        logits = np.zeros((4, 4, 5))
        logits[:, :, 3] = 1.0
        assert (predict(logits) == 3).all()

    def test_all_equal_ties_to_zero(self):
        assert not predict(np.ones((4, 4, 5))).any()

    def test_matches_manual_scan(self, rng):
        logits = rng.normal(0, 1, (4, 4, 5))
        got = predict(logits)
        for i in range(4):
            for j in range(4):
                best, best_v = 0, logits[i, j, 0]
                for c in range(1, 5):
                    if logits[i, j, c] > best_v:
                        best, best_v = c, logits[i, j, c]
                assert got[i, j] == best

    def test_non_finite_rejected(self):
        bad = np.zeros((2, 2, 5))
        bad[0, 0, 0] = np.inf
        with pytest.raises(NonFiniteLogits):
            predict(bad)


class TestCheckpoint:
    def test_round_trip_reproduces_outputs(self, tmp_path, rng):
        m = init_model(ModelConfig(seed=9, fusion="feature-concat"))
        pair = random_pair(rng)
        before = forward_pair(m, pair)
        path = tmp_path / "model.npz"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        assert loaded.config == m.config
        np.testing.assert_array_equal(before, forward_pair(loaded, pair))

    def test_no_partial_file_on_success(self, tmp_path):
        m = init_model(ModelConfig(seed=0))
        path = tmp_path / "model.npz"
        save_checkpoint(m, path)
        assert [p.name for p in tmp_path.iterdir()] == ["model.npz"]
