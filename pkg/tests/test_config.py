import pytest

from loopmotion.config import Config, dump_config, load_config, parse_config_text
from loopmotion.errors import ConfigError


def test_defaults_round_trip(tmp_path):
    cfg = Config()
    path = tmp_path / "cfg.toml"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.hash() == cfg.hash()


def test_unknown_section_and_key_rejected():
    with pytest.raises(ConfigError):
        Config.from_dict({"warp_drive": {"power": 1}})
    with pytest.raises(ConfigError):
        Config.from_dict({"sim": {"quantumness": 3}})


def test_type_checking():
    with pytest.raises(ConfigError):
        Config.from_dict({"sim": {"substeps": "three"}})
    with pytest.raises(ConfigError):
        Config.from_dict({"sim": {"gravity_comp": 1}})
    cfg = Config.from_dict({"sim": {"kp": 500}})
    assert cfg.sim.kp == 500.0 and isinstance(cfg.sim.kp, float)


def test_hash_changes_with_values():
    a, b = Config(), Config()
    b.sim.kp = 123.0
    assert a.hash() != b.hash()
    assert len(a.hash()) == 12


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[sim]\nkp = 300\n")
    cfg = load_config(path, ["sim.kp=555", "schedule.kind=\"linear\""])
    assert cfg.sim.kp == 555.0
    assert cfg.schedule.kind == "linear"


def test_override_validation():
    cfg = Config()
    with pytest.raises(ConfigError):
        cfg.apply_overrides(["nonsense"])
    with pytest.raises(ConfigError):
        cfg.apply_overrides(["sim.nothing=1"])
    with pytest.raises(ConfigError):
        cfg.apply_overrides(["nowhere.kp=1"])


def test_parse_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_config_text("[sim]\nthis is not a key value line\n")
    with pytest.raises(ConfigError):
        parse_config_text("key_outside_section = 1\n")


def test_comments_and_strings():
    data = parse_config_text('# top\n[schedule]\nkind = "cosine"  # tail\nsteps = 10\n')
    assert data == {"schedule": {"kind": "cosine", "steps": 10}}
