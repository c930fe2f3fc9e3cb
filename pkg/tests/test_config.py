import pytest

from ecco.config import ConfigError, RunConfig, apply_overrides, load, parse_text, parse_value, to_text


def test_parse_value():
    assert parse_value(" 3 ") == 3
    assert parse_value("[1, 2]") == [1, 2]
    assert parse_value("true") is True
    assert parse_value("intersection") == "intersection"
    assert parse_value('"x y"') == "x y"


def test_text_round_trip():
    cfg = parse_text("""
        # comment
        run.seed = 7
        model.encode_channels = [4, 8]
        model.equivariant = false
        gen.family = arc   # trailing comment
        lab.k_theta = [4, 8]
        paths.dataset = "d.jsonl"
    """)
    assert cfg.seed == 7 and cfg.model.encode_channels == (4, 8) and cfg.model.equivariant is False
    assert cfg.gen.family == "arc" and cfg.lab.k_theta == (4, 8) and cfg.dataset == "d.jsonl"
    assert parse_text(to_text(cfg)) == cfg
    assert parse_text(to_text(RunConfig())) == RunConfig()


@pytest.mark.parametrize(
    "line",
    ["model.nope = 1", "nosection = 1", "a.b.c = 1", "model.t_in = 2.5", "model.equivariant = 1",
     "train.base_lr = \"fast\"", "gen.family = 3", "model.k_reg = 12", "no equals sign"],
)
def test_bad_settings(line):
    with pytest.raises(ConfigError):
        parse_text(line)


def test_overrides_are_recorded():
    cfg = apply_overrides(RunConfig(), ["train.iterations=5", "model.R=3"])
    assert cfg.train.iterations == 5 and cfg.model.R == 3.0
    assert cfg.overrides == ("train.iterations=5", "model.R=3")
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["train.iterations"])


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.txt")
    p = tmp_path / "c.txt"
    p.write_text("run.seed = 3\n")
    assert load(p).seed == 3
