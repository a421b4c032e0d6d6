import pytest

from agtfusion.config import RunConfig, load_config
from agtfusion.data import EmotionLabel
from agtfusion.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


class TestDefaults:
    def test_no_file_and_empty_file_agree(self, tmp_path):
        assert load_config(None) == load_config(write(tmp_path, "")) == RunConfig()

    def test_derived_objects(self):
        cfg = RunConfig()
        assert cfg.train_config().epochs == 15 and cfg.train_config().seed == 0
        assert cfg.vote_config().sensitive_labels == {EmotionLabel.WORRY, EmotionLabel.SAD}
        bench = cfg.benchmark_config()
        assert bench.noise_sigma == 0.3 and bench.labeled_fraction == 0.2
        assert sum(bench.train_counts.values()) == 5030

    def test_as_dict_round_trips(self):
        cfg = RunConfig().override({"seed": 3, "model.d_model": 16, "model.n_heads": 2})
        assert RunConfig.from_mapping(cfg.as_dict()) == cfg


class TestParsing:
    def test_sections_and_seed(self, tmp_path):
        cfg = load_config(write(tmp_path, """
seed = 7
[model]
d_model = 16
n_heads = 2
[train]
lr = 1
[data]
train_counts = {sad = 10, happy = 5}
"""))
        assert cfg.seed == 7 and cfg.model.d_model == 16
        assert cfg.train.lr == 1.0 and isinstance(cfg.train.lr, float)
        assert cfg.data.train_counts[EmotionLabel.SAD] == 10 and cfg.data.train_counts[EmotionLabel.WORRY] == 0
        assert cfg.train_config().seed == 7 and cfg.vote_config().seed == 7

    @pytest.mark.parametrize(
        "text, pattern",
        [
            ("colour = 1", "unknown config key"),
            ("[model]\nwidth = 3", r"unknown key\(s\) in \[model\]"),
            ("[train]\nepochs = 'ten'", "integer"),
            ("[train]\nepochs = true", "booleans"),
            ("[data]\nwidths = 64", "list"),
            ("[data]\nconflict_modalities = ['smell']", "conflict_modalities"),
            ("[semisup]\nthreshold = 0", "threshold"),
            ("[vote]\nhubert_weight = 0.5", "must equal 1"),
            ("[vote]\nsensitive_labels = ['joy']", "sensitive_labels"),
            ("[model]\nd_model = 30", "divisible"),
            ("[ablate]\nstrategies = ['X']", "invalid grid"),
            ("model = 3", "must be a table"),
            ("[train\n", "invalid TOML"),
        ],
    )
    def test_rejections(self, tmp_path, text, pattern):
        with pytest.raises(ConfigError, match=pattern):
            load_config(write(tmp_path, text))


class TestOverride:
    def test_none_is_skipped(self):
        assert RunConfig().override({"train.epochs": None, "seed": None}) == RunConfig()

    def test_dotted_keys(self):
        cfg = RunConfig().override({"train.epochs": 2, "vote.companion_split": (0.2, 0.0), "seed": 5})
        assert cfg.train.epochs == 2 and cfg.vote.companion_split == (0.2, 0.0) and cfg.seed == 5

    def test_unknown_and_invalid(self):
        with pytest.raises(ConfigError):
            RunConfig().override({"train.momentum": 0.9})
        with pytest.raises(ConfigError):
            RunConfig().override({"train.lr": -1.0})
