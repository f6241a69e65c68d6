import pytest

from dcgaze.config import SCHEMA, ConfigError, RunConfig


def test_defaults_match_schema():
    cfg = RunConfig()
    assert cfg.feature_dim == 32
    assert cfg.grid_h == 7 and cfg.grid_w == 7
    assert cfg.transformer_layers == 6
    assert cfg.attention_heads == 8
    assert cfg.alpha == pytest.approx(0.1)
    assert cfg.beta == pytest.approx(0.1)
    assert cfg.drop_ratio == pytest.approx(5 / 32)
    assert cfg.tau == pytest.approx(0.07)
    assert cfg.grade_k == 5


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        RunConfig({"mystery_key": 1})
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.set("nope", 1)


def test_choice_validation():
    with pytest.raises(ConfigError):
        RunConfig({"fusion": "telepathy"})
    with pytest.raises(ConfigError):
        RunConfig({"grade_k": 4})


def test_file_parse_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# a comment\nfeature_dim = 16\nuse_afu = false\nalpha = 0.2\n")
    cfg = RunConfig.from_file(path, ["beta=0.3", "epochs=5"])
    assert cfg.feature_dim == 16
    assert cfg.use_afu is False
    assert cfg.alpha == pytest.approx(0.2)
    assert cfg.beta == pytest.approx(0.3)
    assert cfg.epochs == 5


def test_file_parse_errors(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("feature_dim 16\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)
    path.write_text("feature_dim = lots\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)


def test_bool_parsing():
    assert RunConfig({"use_afu": "true"}).use_afu is True
    assert RunConfig({"use_afu": "0"}).use_afu is False
    with pytest.raises(ConfigError):
        RunConfig({"use_afu": "perhaps"})


def test_echo_roundtrip(tmp_path):
    cfg = RunConfig({"feature_dim": 16, "fusion": "concat"})
    out = tmp_path / "echo.txt"
    cfg.echo(out)
    again = RunConfig.from_file(out)
    assert again.as_dict() == cfg.as_dict()


def test_digest_stable_and_sensitive():
    a = RunConfig({"seed": 1})
    b = RunConfig({"seed": 1})
    c = RunConfig({"seed": 2})
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_every_key_has_help():
    for key in SCHEMA.values():
        assert key.help
