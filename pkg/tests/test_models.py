import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physio_forge.autodiff import NormState, Tensor, backward, batch_norm, bce_loss, grad_check, layer_norm
from physio_forge.errors import DimensionError, FormatError, ParameterError
from physio_forge.models import (
    ArchitectureConfig,
    EncoderConfig,
    HeadConfig,
    HeadSet,
    JointModel,
    SplitEncoder,
    fuse_concat,
    fuse_overall_loss,
    fuse_weighted_norm,
    load_checkpoint,
    rppg_overall_loss,
    save_checkpoint,
    split_shared_specific,
    three_class_labels,
    two_branch_forward,
    weighted_norm,
)
from physio_forge.models.checkpoint import decode_checkpoint, encode_checkpoint
from physio_forge.models.layers import Linear
from physio_forge.models.network import encoder_forward

LN2 = math.log(2.0)


def small_arch(**kw):
    base = dict(block_channels=(4, 4, 4), feature_dim=5, mst_input=(8, 8), wav_input=(8, 8), app_input=(8, 8))
    return ArchitectureConfig(**{**base, **kw})


def random_inputs(arch, B, seed=0):
    rng = np.random.default_rng(seed)
    return {k: rng.normal(size=(B, *getattr(arch, f"{k}_input"), 3)) for k in ("mst", "wav", "app")}


def grads_are_zero(params):
    return all(p.grad is None or not np.any(p.grad) for p in params)


def scalar_bce(logit, y):
    return bce_loss(Tensor(np.array([float(logit)])), np.array([float(y)]))


class TestConfigs:
    def test_defaults(self):
        arch = ArchitectureConfig()
        assert (arch.theta, arch.alpha, arch.beta) == (0.8, 0.5, 0.5)
        assert arch.n_layers == 3 and arch.n_shared == 2 and arch.n_specific == 1

    @pytest.mark.parametrize(
        "kw",
        [{"n_shared": 4}, {"n_shared": -1}, {"theta": 1.5}, {"alpha": -0.1}, {"fusion": "none"},
         {"modality": "rppg", "fusion": "concat"}, {"modality": "video"}],
    )
    def test_invalid_architecture(self, kw):
        with pytest.raises(ParameterError):
            ArchitectureConfig(**kw)

    def test_head_aliases(self):
        assert HeadConfig("1h3c").mode == "shared_1head_3class"
        with pytest.raises(ParameterError):
            HeadConfig("4h")

    def test_encoder_config(self):
        with pytest.raises(ParameterError):
            EncoderConfig((8, 8, 3), feature_dim=1)
        with pytest.raises(ParameterError):
            EncoderConfig((8, 8, 3), block_channels=())


class TestEncoder:
    def make(self, channels=(4, 4), fd=6, shape=(8, 8, 3), seed=0):
        return SplitEncoder(EncoderConfig(shape, channels, fd), len(channels), ("spoof",), np.random.default_rng(seed))

    def test_zero_input_zero_feature(self):
        # conv output is constant, so BN maps it to 0 and the zero-bias projection keeps it there
        out = encoder_forward(np.zeros((3, 8, 8, 3)), self.make())
        assert out.shape == (3, 6) and not out.data.any()

    @pytest.mark.parametrize("hw", [(8, 8), (16, 24), (32, 9)])
    def test_feature_dim(self, hw):
        enc = SplitEncoder(EncoderConfig((*hw, 3)), 3, ("spoof",), np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(2, *hw, 3))
        assert encoder_forward(x, enc).shape == (2, 128)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            encoder_forward(np.zeros((2, 8, 9, 3)), self.make())

    def test_grad_check_two_blocks(self):
        enc = self.make(channels=(2, 3), fd=3, shape=(4, 4, 3))
        x = np.random.default_rng(2).normal(size=(3, 4, 4, 3))
        y = np.array([1.0, 0.0, 1.0])
        loss = lambda: bce_loss(_sum_rows(encoder_forward(x, enc)), y)
        assert grad_check(loss, enc.parameters()) < 1e-4


def _sum_rows(features):
    from physio_forge.autodiff import ops

    w = Tensor(np.ones((features.shape[1], 1)))
    return ops.reshape(ops.linear(features, w), (features.shape[0],))


class TestTwoBranch:
    def test_rppg_feature_width(self):
        arch = ArchitectureConfig(modality="rppg", fusion="none", mst_input=(8, 8), wav_input=(8, 8))
        model = JointModel(arch)
        inp = random_inputs(arch, 2)
        main, mst, wav, f = two_branch_forward(inp["mst"], inp["wav"], model, ["spoof", "forgery"])
        assert f.shape == (2, 256) and main.shape == mst.shape == wav.shape == (2,)

    def test_wavelet_branch_does_not_reach_mst_head(self):
        arch = small_arch(modality="rppg", fusion="none")
        model = JointModel(arch)
        inp = random_inputs(arch, 4)
        tasks = ["spoof", "forgery", "spoof", "forgery"]
        before = two_branch_forward(inp["mst"], inp["wav"], model, tasks, training=False)
        for p in model.wav.parameters() + model.head_wav.parameters():
            p.data[...] = 0.0
        after = two_branch_forward(inp["mst"], inp["wav"], model, tasks, training=False)
        np.testing.assert_array_equal(before[1].data, after[1].data)
        assert not np.array_equal(before[2].data, after[2].data)

    def test_batch_mismatch(self):
        arch = small_arch(modality="rppg", fusion="none")
        with pytest.raises(DimensionError):
            two_branch_forward(np.zeros((2, 8, 8, 3)), np.zeros((3, 8, 8, 3)), JointModel(arch), ["spoof"] * 2)

    def test_grad_check_all_three_heads(self):
        arch = small_arch(modality="rppg", fusion="none", block_channels=(2, 2), feature_dim=3,
                          mst_input=(4, 4), wav_input=(4, 4))
        model = JointModel(arch)
        inp = random_inputs(arch, 4, seed=3)
        tasks = ["spoof", "forgery", "forgery", "spoof"]
        y = np.array([1.0, 0.0, 1.0, 0.0])

        def loss():
            main, mst, wav, _ = two_branch_forward(inp["mst"], inp["wav"], model, tasks)
            return rppg_overall_loss(bce_loss(main, y), bce_loss(mst, y), bce_loss(wav, y))

        assert grad_check(loss, model.parameters()) < 1e-4


class TestLosses:
    def test_rppg_all_zero_logits(self):
        z = scalar_bce(0.0, 1.0)
        assert rppg_overall_loss(z, z, z).item() == pytest.approx(2 * LN2, abs=1e-12)
        assert 2 * LN2 == pytest.approx(1.386294, abs=1e-6)

    def test_rppg_alpha_zero(self):
        main, mst, wav = scalar_bce(0.3, 1), scalar_bce(-2.0, 1), scalar_bce(1.0, 0)
        assert rppg_overall_loss(main, mst, wav, alpha=0.0).item() == main.item()

    def test_fuse_all_zero_logits(self):
        z = scalar_bce(0.0, 1.0)
        total = fuse_overall_loss(z, z, rppg_overall_loss(z, z, z))
        assert total.item() == pytest.approx(2.5 * LN2, abs=1e-12)
        assert 2.5 * LN2 == pytest.approx(1.732868, abs=1e-6)

    def test_fuse_beta_zero(self):
        fuse, app = scalar_bce(1.5, 0), scalar_bce(0.2, 1)
        assert fuse_overall_loss(fuse, app, rppg_overall_loss(app, app, app), beta=0.0).item() == fuse.item()

    def test_negative_weights(self):
        z = scalar_bce(0.0, 1.0)
        with pytest.raises(ParameterError):
            rppg_overall_loss(z, z, z, alpha=-1)
        with pytest.raises(ParameterError):
            fuse_overall_loss(z, z, z, beta=-1)

    def test_model_loss_matches_formula(self):
        arch = small_arch()
        model = JointModel(arch, seed=4)
        inp = random_inputs(arch, 4, seed=4)
        tasks, y = ["spoof", "forgery", "spoof", "forgery"], np.array([1.0, 1.0, 0.0, 0.0])
        out = model.forward(inp, tasks, True)
        part = {k: bce_loss(Tensor(v.data), y).item() for k, v in out.logits.items()}
        rppg = part["rppg"] + 0.5 * (part["mst"] + part["wav"])
        expected = part["fuse"] + 0.5 * (part["app"] + rppg)
        assert model.loss(out, y, tasks).item() == pytest.approx(expected, rel=1e-12)


class TestFusion:
    def test_concat_identity(self):
        rng = np.random.default_rng(0)
        a, r = np.abs(rng.normal(size=(3, 2))), np.abs(rng.normal(size=(3, 3)))
        lin = Linear(5, 4, rng)
        lin.weight.data[...] = np.eye(5, 4)
        out = fuse_concat(Tensor(a), Tensor(r), lin).data
        np.testing.assert_array_equal(out, np.concatenate([a, r], axis=1)[:, :4])

    def test_concat_width(self):
        rng = np.random.default_rng(1)
        out = fuse_concat(Tensor(rng.normal(size=(2, 7))), Tensor(rng.normal(size=(2, 2))), Linear(9, 3, rng))
        assert out.shape == (2, 3)

    def test_concat_mismatch(self):
        rng = np.random.default_rng(1)
        with pytest.raises(DimensionError):
            fuse_concat(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2))), Linear(4, 2, rng))

    @staticmethod
    def states(c):
        return NormState(c, affine=False), NormState(c, affine=False)

    @pytest.mark.parametrize("theta, reference", [(1.0, "ln"), (0.0, "bn")])
    def test_endpoints(self, theta, reference):
        f = np.random.default_rng(2).normal(3.0, 2.0, size=(6, 5))
        bn, ln = self.states(5)
        out = weighted_norm(Tensor(f), theta, bn, ln, True).data
        ref_bn, ref_ln = self.states(5)
        ref = layer_norm(Tensor(f), ref_ln) if reference == "ln" else batch_norm(Tensor(f), ref_bn, True)
        assert np.abs(out - ref.data).max() < 1e-12

    def test_one_channel_example(self):
        bn, ln = self.states(1)
        out = weighted_norm(Tensor(np.array([[1.0], [3.0]])), 0.8, bn, ln, True).data.ravel()
        # LN of a single channel is exactly 0; BN is [-1, 1] up to the eps in its denominator
        np.testing.assert_allclose(out, [-0.2 / math.sqrt(1 + 1e-5), 0.2 / math.sqrt(1 + 1e-5)], rtol=1e-12)
        np.testing.assert_allclose(out, [-0.2, 0.2], atol=1e-5)

    def test_theta_out_of_range(self):
        bn, ln = self.states(2)
        with pytest.raises(ParameterError):
            weighted_norm(Tensor(np.ones((2, 2))), 1.2, bn, ln, True)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.2, 5.0), st.floats(0.0, 1.0), st.integers(0, 1000))
    def test_affine_equivariance(self, a, theta, seed):
        # eps breaks exact scale invariance on low-variance columns, so drop it here
        f = np.random.default_rng(seed).normal(0.0, 30.0, size=(5, 4))
        states = lambda: (NormState(4, affine=False, eps=0.0), NormState(4, affine=False, eps=0.0))
        base = weighted_norm(Tensor(f), theta, *states(), True).data
        scaled = weighted_norm(Tensor(a * f), theta, *states(), True).data
        np.testing.assert_allclose(scaled, base, atol=1e-9)

    def test_fuse_weighted_norm_grad(self):
        rng = np.random.default_rng(3)
        fa = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        fr = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        lin = Linear(5, 2, rng)
        y = np.array([1.0, 0.0, 0.0, 1.0])
        states = (*self.states(2), *self.states(3))
        loss = lambda: bce_loss(_sum_rows(fuse_weighted_norm(fa, fr, 0.8, states, lin)), y)
        assert grad_check(loss, [fa, fr, *lin.parameters()]) < 1e-4


class TestHeads:
    def test_three_class_mapping(self):
        labels = three_class_labels([0, 0, 1, 1], ["spoof", "forgery", "spoof", "forgery"])
        assert labels.tolist() == [1, 2, 0, 0]

    def test_separate_heads_routing(self):
        rng = np.random.default_rng(0)
        heads = HeadSet(4, HeadConfig("2h2c"), ("spoof", "forgery"), rng)
        tasks = np.array(["forgery"] * 3)
        backward(heads.loss(heads(Tensor(rng.normal(size=(3, 4))), tasks), np.array([1.0, 0, 1]), tasks))
        assert grads_are_zero(heads.heads["spoof"].parameters())
        assert not grads_are_zero(heads.heads["forgery"].parameters())

    def test_shared_binary_ignores_task(self):
        rng = np.random.default_rng(1)
        heads = HeadSet(4, HeadConfig("1h2c"), ("spoof", "forgery"), rng)
        f = Tensor(np.repeat(rng.normal(size=(1, 4)), 2, axis=0))
        out = heads(f, np.array(["spoof", "forgery"])).data
        assert out[0] == out[1]

    @pytest.mark.parametrize("mode", ["1h2c", "1h3c", "2h2c"])
    def test_scores_in_unit_interval(self, mode):
        arch = small_arch(head=HeadConfig(mode))
        model = JointModel(arch)
        inp = random_inputs(arch, 6, seed=5)
        tasks = ["spoof", "forgery"] * 3
        s1, s2 = model.score(inp, tasks), model.score(inp, tasks)
        assert s1.shape == (6,) and np.all((s1 >= 0) & (s1 <= 1))
        np.testing.assert_array_equal(s1, s2)

    def test_three_class_score_is_softmax_class0(self):
        heads = HeadSet(2, HeadConfig("1h3c"), ("spoof", "forgery"), np.random.default_rng(0))
        logits = np.array([[0.0, 0.0, 0.0], [2.0, 1.0, -1.0]])
        expected = np.exp(logits[:, 0]) / np.exp(logits).sum(axis=1)
        np.testing.assert_allclose(heads.score(logits), expected, rtol=1e-12)

    def test_unknown_task(self):
        heads = HeadSet(2, HeadConfig(), ("spoof", "forgery"), np.random.default_rng(0))
        with pytest.raises(ParameterError):
            heads(Tensor(np.zeros((1, 2))), np.array(["deepfake"]))


class TestSharing:
    def test_full_sharing_identical_features(self):
        arch = small_arch(n_shared=3)
        model = split_shared_specific(arch, 3)
        one = random_inputs(arch, 1, seed=6)
        inp = {k: np.repeat(v, 2, axis=0) for k, v in one.items()}
        out = model.forward(inp, ["spoof", "forgery"], training=False)
        for name in ("app", "mst", "wav"):
            np.testing.assert_array_equal(out.features[name].data[0], out.features[name].data[1])

    def test_no_sharing_spoof_backward_leaves_forgery_untouched(self):
        arch = small_arch()
        model = split_shared_specific(arch, 0, seed=1)
        inp = random_inputs(arch, 3, seed=7)
        tasks = ["spoof"] * 3
        backward(model.loss(model.forward(inp, tasks, True), np.array([1.0, 0.0, 1.0]), tasks))
        for enc in (model.app, model.mst, model.wav):
            assert grads_are_zero(enc.specific["forgery"].parameters())
            assert not grads_are_zero(enc.specific["spoof"].parameters())

    def test_n_shared_too_large(self):
        with pytest.raises(ParameterError):
            split_shared_specific(small_arch(), 4)

    @pytest.mark.parametrize("n_shared", [0, 1, 2, 3])
    def test_parameter_count(self, n_shared):
        arch = small_arch(n_shared=n_shared)
        widths = [3, *arch.block_channels]
        block = [9 * widths[i] * widths[i + 1] + 2 * widths[i + 1] for i in range(arch.n_layers)]
        shared, specific = sum(block[:n_shared]), sum(block[n_shared:])
        encoder_other = arch.block_channels[-1] * 5 + 5
        model = JointModel(arch)
        for enc in (model.app, model.mst, model.wav):
            assert enc.parameter_count() == shared + 2 * specific + encoder_other

    def test_parameter_count_is_config_function(self):
        arch = small_arch(n_shared=1)
        assert JointModel(arch, seed=0).parameter_count() == JointModel(arch, seed=9).parameter_count()

    def test_full_sharing_equals_single_task(self):
        arch = small_arch(n_shared=3)
        joint = JointModel(arch, seed=3).state_dict()
        single = JointModel(arch, tasks=("spoof",), seed=3).state_dict()
        assert joint.keys() == single.keys()
        for k in joint:
            np.testing.assert_array_equal(joint[k], single[k])

    def test_branch_encoders_unshared(self):
        model = JointModel(small_arch())
        for (na, a), (nb, b) in zip(model.mst.named_parameters(), model.wav.named_parameters()):
            assert na == nb and a.shape == b.shape and a is not b
            if a.data.std() > 0:
                assert not np.array_equal(a.data, b.data)

    @pytest.mark.parametrize("n_shared", [0, 3])
    def test_joint_grad_check(self, n_shared):
        arch = small_arch(n_shared=n_shared, block_channels=(2, 2, 2), feature_dim=3)
        model = JointModel(arch)
        inp = random_inputs(arch, 4, seed=8)
        tasks, y = ["spoof", "forgery", "spoof", "forgery"], np.array([1.0, 0.0, 0.0, 1.0])
        assert grad_check(lambda: model.loss(model.forward(inp, tasks, True), y, tasks), model.parameters()) < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = JointModel(small_arch(), seed=2)
        save_checkpoint(tmp_path / "m.ckpt", "seed = 2\n", model.state_dict())
        text, state = load_checkpoint(tmp_path / "m.ckpt")
        assert text == "seed = 2\n"
        for k, v in model.state_dict().items():
            np.testing.assert_array_equal(state[k], v.astype(np.float32))
        fresh = JointModel(small_arch(), seed=5)
        fresh.load_state_dict(state)
        for k, v in fresh.state_dict().items():
            np.testing.assert_array_equal(v, state[k])

    def test_layout(self):
        blob = encode_checkpoint("ab", {"w": np.ones((2, 1))})
        assert blob[:8] == b"PFCKPT1\x00" and blob[8:12] == (2).to_bytes(4, "little") and blob[12:14] == b"ab"
        assert blob[14:18] == (1).to_bytes(4, "little") and blob[18:19] == b"w"
        assert len(blob) == 19 + 4 + 8 + 8

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            decode_checkpoint(b"NOTACKPT" + bytes(8))

    def test_truncated(self):
        blob = encode_checkpoint("x", {"w": np.ones(10)})
        with pytest.raises(FormatError):
            decode_checkpoint(blob[:-4])

    def test_state_mismatch(self):
        state = JointModel(small_arch()).state_dict()
        with pytest.raises(KeyError):
            JointModel(small_arch(n_shared=0)).load_state_dict(state)
