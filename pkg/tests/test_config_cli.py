import os

import pytest

from gcfair.cli import main
from gcfair.config import load_config, parse_text
from gcfair.errors import ConfigError
from gcfair.experiment import load_dataset, repeat_seeds, variant_config

TINY = """\
# small enough for unit tests
data.n = 60
data.d_z = 6
data.d = 4
data.target_avg_degree = 4.0
aug.epochs = 2
aug.latent_dim = 4
aug.hidden_dim = 8
train.epochs = 2
train.repr_dim = 8
train.k = 5
train.batch_size = 16
run.repeats = 2
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


def test_defaults_and_profiles():
    base = load_config()
    assert base.train.lam == 0.6 and base.train.lambda_s == 0.4 and base.aug.beta == 10.0
    paper = load_config(profile="paper")
    assert paper.train.repr_dim == 1024 and paper.train.epochs == 1000 and paper.run.repeats == 10
    desk = load_config(profile="desk")
    assert desk.train.repr_dim == 64 and desk.train.epochs == 300 and desk.run.repeats == 5
    assert desk.train.lam == paper.train.lam


def test_layering_order(tiny):
    cfg = load_config(tiny, "desk", {"train.lambda": "1.0"})
    assert cfg.train.repr_dim == 8  # file beats profile
    assert cfg.train.lam == 1.0  # override beats file
    assert cfg.run.repeats == 2


def test_unknown_keys_rejected():
    for bad in ({"train.lamda": "1"}, {"model.depth": "2"}, {"train.epochs": "many"}):
        with pytest.raises(ConfigError):
            load_config(overrides=bad)
    with pytest.raises(ConfigError):
        load_config(profile="huge")
    with pytest.raises(ConfigError):
        parse_text("train.lambda 0.5")


def test_to_lines_round_trip():
    cfg = load_config(profile="desk", overrides={"ppr.max_hops": "3", "run.split": "0.5,0.25,0.25"})
    assert load_config(overrides=parse_text("\n".join(cfg.to_lines()))) == cfg.__class__(
        **{**cfg.__dict__, "profile": None})


def test_variant_mapping():
    base = load_config().train
    assert variant_config(base, "baseline-sage").encoder == "sage"
    assert variant_config(base, "baseline-gcn").lam == 0.0
    assert variant_config(base, "np").variant == "np"
    with pytest.raises(ValueError):
        variant_config(base, "bogus")


def test_repeat_seeds_stable():
    assert repeat_seeds(0, 3) == repeat_seeds(0, 3)
    assert len(set(repeat_seeds(0, 10))) == 10
    assert repeat_seeds(0, 2) != repeat_seeds(1, 2)


def test_generate_prints_feature_dimension(tmp_path, capsys):
    out = tmp_path / "data"
    assert main(["generate", "--out", str(out), "--set", "data.n=200"]) == 0
    text = capsys.readouterr().out
    assert "Feature dimension   26" in text
    assert {"edges.tsv", "features.csv", "params.json"} <= set(os.listdir(out))
    # the written directory loads back with true counterfactuals available
    cfg = load_config(overrides={"data.dir": str(out)})
    assert load_dataset(cfg).kind == "synthetic"


def test_exit_codes(tmp_path, tiny, capsys):
    assert main(["run", "--set", "train.nope=1"]) == 1
    assert main(["run", "--set", "novalue"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["evaluate", "--config", tiny, "--out", str(tmp_path / "empty")]) == 1
    assert main(["run", "--config", tiny, "--set", "data.dir=/does/not/exist"]) == 1
    assert main(["compare", str(tmp_path / "missing.csv")]) == 1
    # valid config, impossible data: a single sensitive group breaks the metrics
    assert main(["run", "--config", tiny, "--out", str(tmp_path / "r"), "--set", "data.p=0.0"]) == 2


def test_pipeline_verbs(tmp_path, tiny, capsys):
    out = str(tmp_path / "p")
    common = ["--config", tiny, "--out", out, "--seed", "3"]
    assert main(["pretrain-aug", *common]) == 0
    assert main(["train", *common]) == 0
    assert main(["evaluate", *common]) == 0
    assert {"augmenter.ckpt", "model.ckpt", "metrics.csv", "predictions.csv"} <= set(os.listdir(out))
    with open(os.path.join(out, "predictions.csv")) as fh:
        assert fh.readline().strip() == "node_id,prob,label"


def test_run_is_deterministic_and_compare(tmp_path, tiny, capsys):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (a, b):
        assert main(["run", "--config", tiny, "--out", out, "--seed", "7",
                     "--variant", "full", "--variant", "baseline-gcn"]) == 0
    for name in ("full.csv", "baseline-gcn.csv", "full.runs.jsonl"):
        with open(os.path.join(a, name), "rb") as x, open(os.path.join(b, name), "rb") as y:
            assert x.read() == y.read(), name
    capsys.readouterr()
    table = str(tmp_path / "t.md")
    assert main(["compare", os.path.join(a, "full.csv"), os.path.join(a, "baseline-gcn.csv"),
                 "--names", "fair,gcn", "--out", table]) == 0
    printed = capsys.readouterr().out
    assert printed.count("\n") == 4 and "| fair |" in printed
    assert open(table).read() == printed
    assert main(["compare", os.path.join(a, "full.csv"), "--names", "x,y"]) == 1
