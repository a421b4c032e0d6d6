import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agtfusion.autodiff import Tensor
from agtfusion.data import EmotionLabel, generate_synthetic
from agtfusion.errors import ConfigError, DataError, DimensionError
from agtfusion.models import (
    AgtModel,
    AlignmentHead,
    AudioOnlyModel,
    BaselineModel,
    TrainConfig,
    contrastive_loss,
    create_model,
    load_model,
    model_from_json,
    model_to_json,
    predict,
    save_model,
    train,
    train_alignment,
)

from helpers import model_gradient_error
from oracles import contrastive_reference, layer_norm_rows

SMALL = {"d_model": 8, "n_heads": 2, "d_ff": 8, "n_layers": 1, "hidden": 8}


def make(arch, widths=(6, 5, 4), seed=0, **extra):
    return create_model(arch, widths, seed=seed, **{**SMALL, **extra})


@pytest.fixture
def batch(rng):
    return rng.normal(size=(4, 6)), rng.normal(size=(4, 5)), rng.normal(size=(4, 4)), [0, 3, 5, 1]


class TestShapes:
    @pytest.mark.parametrize("arch", ["audio", "baseline", "agt"])
    def test_batched_and_single(self, arch, batch):
        m = make(arch)
        a, v, t, _ = batch
        out = m.forward(a, v, t)
        assert out.shape == (4, 6)
        np.testing.assert_allclose(m.forward(a[2], v[2], t[2]).numpy(), out.numpy()[2], rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("arch", ["audio", "baseline", "agt"])
    def test_wrong_width_and_batch_mismatch(self, arch, batch):
        m = make(arch)
        a, v, t, _ = batch
        with pytest.raises(DimensionError):
            m.forward(a[:, :5], v, t)
        with pytest.raises(DimensionError):
            m.forward(a, v[:3], t)

    def test_audio_only_ignores_video_and_text(self, batch, rng):
        m = make("audio")
        a, v, t, _ = batch
        np.testing.assert_array_equal(m.logits(a, v, t), m.logits(a, rng.normal(size=v.shape), 0 * t))

    def test_create_model_rejects_unknown_and_bad_heads(self):
        with pytest.raises(ConfigError):
            create_model("lstm", (2, 2, 2))
        with pytest.raises(ConfigError):
            create_model("agt", (2, 2, 2), d_model=6, n_heads=4)
        with pytest.raises(ConfigError):
            create_model("agt", (2, 2, 2), d_model=8, n_heads=2, d_ff=4)

    def test_create_model_drops_unused_hparams(self):
        m = create_model("audio", (3, 3, 3), hidden=5, n_layers=7)
        assert m.hparams["hidden"] == 5 and "n_layers" not in m.hparams

    def test_seed_controls_init(self):
        assert all(np.array_equal(make("agt").params[k], make("agt").params[k]) for k in make("agt").params)
        assert not np.array_equal(make("agt", seed=1).params["head.w"], make("agt").params["head.w"])


class TestFullGraphGradients:
    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("arch", ["audio", "baseline", "agt"])
    def test_every_parameter(self, arch, seed):
        rng = np.random.default_rng(100 + seed)
        m = make(arch, seed=seed)
        # perturb zero-initialised biases so every path carries signal
        m = m.with_params({k: p + 0.1 * rng.normal(size=p.shape) for k, p in m.params.items()})
        a, v, t = rng.normal(size=(3, 6)), rng.normal(size=(3, 5)), rng.normal(size=(3, 4))
        assert model_gradient_error(m, a, v, t, rng.integers(0, 6, size=3)) < 1e-4


class TestAgtComposition:
    def test_identity_blocks_reduce_to_audio_plus_mean_of_others(self, batch):
        m = make("agt", n_layers=2, amf_threshold=-1.0, residual_init_scale=0.0)
        a, v, t, _ = batch
        p = m.params
        A = a @ p["proj.audio.w"] + p["proj.audio.b"]
        V = v @ p["proj.video.w"] + p["proj.video.b"]
        T = t @ p["proj.text.w"] + p["proj.text.b"]
        expected = (A + (V + T) / 2) @ p["head.w"] + p["head.b"]
        np.testing.assert_allclose(m.logits(a, v, t), expected, rtol=1e-12, atol=1e-13)

    def test_zero_layers_matches_identity_blocks(self, batch):
        a, v, t, _ = batch
        deep = make("agt", n_layers=2, residual_init_scale=0.0)
        flat = make("agt", n_layers=0)
        shared = {k: deep.params[k] for k in flat.params}
        np.testing.assert_allclose(flat.with_params(shared).logits(a, v, t), deep.logits(a, v, t), rtol=1e-12)

    def test_fused_mask_keeps_both_streams(self, batch):
        m = make("agt", amf_threshold=0.99)
        a, v, t, _ = batch
        _, mask = m.fused(m.tensors(), Tensor(a), Tensor(v), Tensor(t))
        assert mask.shape == (2, 4) and mask.all()

    def test_one_layer_block_matches_layer_norm_oracle_on_pooled_tokens(self, rng):
        # with zero attention output the block output is x + ffn(ln2(x)); check pooled audio token path
        m = make("agt", n_layers=1, amf_threshold=-1.0)
        params = dict(m.params)
        for s in ("av", "at"):
            params[f"{s}.0.attn.w_o"] = np.zeros_like(params[f"{s}.0.attn.w_o"])
        m = m.with_params(params)
        a, v, t = rng.normal(size=(2, 6)), rng.normal(size=(2, 5)), rng.normal(size=(2, 4))
        p = m.params

        def proj(x, name):
            return x @ p[f"proj.{name}.w"] + p[f"proj.{name}.b"]

        def ffn(x, s):
            z = layer_norm_rows(x, p[f"{s}.0.ln2.gamma"], p[f"{s}.0.ln2.beta"])
            h = z @ p[f"{s}.0.ff.w1"] + p[f"{s}.0.ff.b1"]
            h = 0.5 * h * (1 + np.tanh(math.sqrt(2 / math.pi) * (h + 0.044715 * h**3)))
            return x + h @ p[f"{s}.0.ff.w2"] + p[f"{s}.0.ff.b2"]

        A = proj(a, "audio")
        fused = sum((ffn(A, s) + ffn(proj(x, n), s)) / 2 for s, x, n in (("av", v, "video"), ("at", t, "text")))
        np.testing.assert_allclose(m.logits(a, v, t), fused @ p["head.w"] + p["head.b"], rtol=1e-11, atol=1e-12)


class TestContrastiveLoss:
    def test_uniform_pair(self):
        v = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert abs(contrastive_loss(v, v).item() - 2 * math.log(2)) < 1e-9

    def test_orthonormal_diagonal_at_tau_007(self):
        e = np.eye(2)
        expected = 2 * math.log(1 + math.exp(-1 / 0.07))
        got = contrastive_loss(e, e, 0.07).item()
        assert abs(got - expected) / expected < 1e-6

    @given(st.integers(2, 6), st.integers(0, 10_000))
    def test_matches_reference_and_is_permutation_invariant(self, b, seed):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(b, 3))
        t = rng.normal(size=(b, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        base = contrastive_loss(v, t, 0.5).item()
        assert base == pytest.approx(contrastive_reference(v, t, 0.5), rel=1e-12)
        perm = rng.permutation(b)
        assert contrastive_loss(v[perm], t[perm], 0.5).item() == pytest.approx(base, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ConfigError):
            contrastive_loss(np.eye(2), np.eye(2), 0.0)
        with pytest.raises(DimensionError):
            contrastive_loss(np.eye(2), np.eye(3))

    def test_alignment_training_lowers_loss(self, six_class_dataset):
        _, v, t = six_class_dataset.arrays()
        head = AlignmentHead.create(8, 8, d_align=4, seed=0)
        trained, curve = train_alignment(head, v, t, epochs=15, batch_size=16, seed=0)
        assert curve[-1] < curve[0]
        assert trained.loss(v[:16], t[:16]).item() < head.loss(v[:16], t[:16]).item()


class TestTrain:
    def test_deterministic(self, tiny_dataset):
        cfg = TrainConfig(epochs=3, batch_size=16, seed=4)
        r1 = train(make("agt"), tiny_dataset, cfg)
        r2 = train(make("agt"), tiny_dataset, cfg)
        assert r1.losses == r2.losses
        assert all(np.array_equal(r1.model.params[k], r2.model.params[k]) for k in r1.model.params)

    def test_zero_learning_rate_leaves_params(self, tiny_dataset):
        m = make("baseline")
        out = train(m, tiny_dataset, TrainConfig(epochs=2, lr=0.0)).model
        assert all(np.array_equal(out.params[k], m.params[k]) for k in m.params)

    def test_input_model_is_not_mutated(self, tiny_dataset):
        m = make("audio")
        before = {k: v.copy() for k, v in m.params.items()}
        train(m, tiny_dataset, TrainConfig(epochs=1))
        assert all(np.array_equal(before[k], m.params[k]) for k in m.params)

    @pytest.mark.parametrize("arch", ["audio", "baseline", "agt"])
    def test_separable_two_class_fits(self, arch):
        data = generate_synthetic(
            {EmotionLabel.HAPPY: 20, EmotionLabel.ANGRY: 20}, widths=(6, 5, 4), noise_sigma=0.05, seed=2
        )
        m = train(make(arch), data, TrainConfig(epochs=50, batch_size=8, lr=1e-2)).model
        preds = np.argmax(m.logits(*data.arrays()), axis=1)
        assert np.array_equal(preds, data.labels())

    def test_loss_decreases(self, tiny_dataset):
        losses = train(make("agt"), tiny_dataset, TrainConfig(epochs=10, lr=1e-2)).losses
        assert losses[-1] < losses[0]

    def test_rejects_unlabeled_and_mismatched(self, tiny_dataset):
        with pytest.raises(DataError, match="unlabeled"):
            train(make("audio"), tiny_dataset.without_labels(), TrainConfig(epochs=1))
        with pytest.raises(DimensionError):
            train(make("audio", widths=(3, 3, 3)), tiny_dataset, TrainConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr=-1)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(weight_decay=-0.1)


class TestPredict:
    def test_probabilities(self, tiny_dataset):
        recs = predict(make("agt"), tiny_dataset, batch_size=7)
        assert [r.id for r in recs] == tiny_dataset.ids
        for r in recs:
            assert abs(r.probs.sum() - 1) < 1e-12
            assert r.confidence >= 1 / 6
            assert r.label == int(np.argmax(r.probs))

    def test_batch_size_does_not_change_output(self, tiny_dataset):
        m = make("baseline")
        a = predict(m, tiny_dataset, batch_size=1)
        b = predict(m, tiny_dataset, batch_size=1000)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x.probs, y.probs, rtol=1e-12, atol=1e-15)


class TestSerialisation:
    @pytest.mark.parametrize("arch", ["audio", "baseline", "agt"])
    def test_round_trip_is_bit_exact(self, arch, tiny_dataset, tmp_path):
        m = train(make(arch), tiny_dataset, TrainConfig(epochs=1)).model
        path = tmp_path / "m.json"
        save_model(m, path)
        loaded = load_model(path)
        assert type(loaded) is type(m) and dict(loaded.hparams) == dict(m.hparams)
        before = predict(m, tiny_dataset)
        after = predict(loaded, tiny_dataset)
        assert all(x == y for x, y in zip(before, after))

    def test_bad_files(self, tmp_path):
        doc = model_to_json(make("audio"))
        with pytest.raises(DataError, match="format_version"):
            model_from_json({**doc, "format_version": 99})
        with pytest.raises(DataError, match="architecture"):
            model_from_json({**doc, "architecture": "rnn"})
        params = dict(doc["parameters"])
        params.pop("mlp.b1")
        with pytest.raises(DataError, match="lacks"):
            model_from_json({**doc, "parameters": params})
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(DataError):
            load_model(bad)

    def test_models_are_distinct_classes(self):
        assert isinstance(make("audio"), AudioOnlyModel)
        assert isinstance(make("baseline"), BaselineModel)
        assert isinstance(make("agt"), AgtModel)
