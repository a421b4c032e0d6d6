import numpy as np
import pytest

from agtfusion.data import EmotionLabel
from agtfusion.errors import ConfigError
from agtfusion.experiments import (
    AblationConfig,
    BenchmarkConfig,
    ablation_run,
    build_benchmark,
    evaluate_model,
    mask_modalities,
)
from agtfusion.models import TrainConfig, create_model, train

SMALL_BENCH = BenchmarkConfig(
    train_counts={lab: 20 for lab in EmotionLabel},
    test_size=60,
    widths=(8, 8, 8),
    noise_sigma=0.3,
    seed=4,
)
SMALL_PARAMS = {"d_model": 8, "n_heads": 2, "d_ff": 8, "n_layers": 1, "hidden": 8, "amf_threshold": 0.2}


@pytest.fixture(scope="module")
def small_cfg():
    return AblationConfig(
        benchmark=SMALL_BENCH,
        model_params=SMALL_PARAMS,
        train=TrainConfig(epochs=8, lr=1e-2),
        threshold=0.6,
    )


@pytest.fixture(scope="module")
def small_result(small_cfg):
    return ablation_run(small_cfg)


class TestBenchmark:
    def test_sizes_and_disjoint_ids(self):
        bench = build_benchmark(SMALL_BENCH)
        assert len(bench.labeled) + len(bench.unlabeled) == 120 and len(bench.test) == 60
        assert len(bench.labeled) == 24
        assert not set(bench.labeled.ids) & set(bench.unlabeled.ids)
        assert (bench.unlabeled.labels() == -1).all()
        assert bench.test.all_labeled

    def test_test_counts_follow_weights(self):
        counts = BenchmarkConfig().test_counts
        assert sum(counts.values()) == 1000
        assert max(counts, key=counts.get) is EmotionLabel.SAD
        assert min(counts, key=counts.get) is EmotionLabel.SURPRISE

    def test_deterministic(self):
        a, b = build_benchmark(SMALL_BENCH), build_benchmark(SMALL_BENCH)
        assert a.labeled == b.labeled and a.test == b.test

    def test_mask_modalities(self):
        bench = build_benchmark(SMALL_BENCH)
        masked = mask_modalities(bench.test, "av")
        _, _, t = masked.arrays()
        assert not t.any()
        np.testing.assert_array_equal(masked.arrays()[0], bench.test.arrays()[0])
        assert mask_modalities(bench.test, "avt") is bench.test


class TestAblation:
    def test_grid_shape(self, small_result):
        table = small_result.table()
        assert table[0] == ["features", "model", "N", "P", "P+V"]
        assert [row[1] for row in table[1:]] == ["baseline", "agt"]
        assert all(0.0 <= v <= 1.0 for v in small_result.cells.values())

    def test_n_cell_equals_direct_training(self, small_cfg, small_result):
        bench = build_benchmark(small_cfg.benchmark)
        model = create_model("agt", bench.labeled.widths, seed=small_cfg.train.seed, **small_cfg.model_params)
        trained = train(model, bench.labeled, small_cfg.train).model
        f1, _ = evaluate_model(trained, bench.test)
        assert small_result.cells[("avt", "agt", "N")] == f1

    def test_deterministic_csv(self, small_cfg, small_result):
        assert ablation_run(small_cfg).to_csv() == small_result.to_csv()

    def test_n_only_grid_skips_self_training(self, small_cfg):
        cfg = AblationConfig(
            benchmark=SMALL_BENCH, model_params=SMALL_PARAMS, train=TrainConfig(epochs=1), strategies=("N",),
            features=("a", "avt"),
        )
        res = ablation_run(cfg)
        assert set(res.cells) == {(f, m, "N") for f in ("a", "avt") for m in ("baseline", "agt")}
        assert all(len(r.history) == 1 for r in res.self_training.values())

    def test_column_vote_config(self):
        cfg = AblationConfig()
        assert cfg.vote_config("baseline").companion_split == pytest.approx((0.2, 0.0))
        assert cfg.vote_config("agt").companion_split == pytest.approx((0.0, 0.2))
        uniform = AblationConfig(vote_companion="uniform")
        assert uniform.vote_config("agt").companion_split == pytest.approx((0.1, 0.1))

    @pytest.mark.parametrize(
        "kwargs",
        [{"models": ("audio",)}, {"strategies": ("V",)}, {"features": ("vt",)}, {"features": ("axt",)},
         {"models": ()}, {"vote_companion": "random"}],
    )
    def test_invalid_grid(self, kwargs):
        with pytest.raises(ConfigError):
            AblationConfig(**kwargs)
