import pytest

from gaitforge.config import ConfigError, load_config, parse_config, parse_mask, parse_range
from gaitforge.policy import heuristic_mask


def test_defaults():
    cfg = parse_config("", env={})
    assert cfg.seed == 0 and cfg.train.task == "slope" and cfg.eval.trials == 5


def test_sections_reach_modules():
    cfg = parse_config("""
[experiment]
seed = 3
workers = 2
[robot]
torque_limits = 150, 150, 150, 150, 150, 150, 150, 150, 150, 150, 150, 150
[physics]
contact_stiffness = 6e4
[policy]
task = stair
[trainer]
iterations = 7
slopes_deg = -7, 0, 7
[reward]
progress = 10
""", env={})
    assert cfg.train.seed == 3 and cfg.train.workers == 2 and cfg.train.iterations == 7
    assert cfg.model.torque_limits[0] == 150.0 and cfg.physics.contact_stiffness == 6e4
    assert cfg.train.task == "stair" and cfg.weights.progress == 10.0
    assert cfg.train.slopes_deg == (-7.0, 0.0, 7.0)


def test_env_overrides_workers():
    assert parse_config("[experiment]\nworkers = 2\n", env={"GAITFORGE_WORKERS": "1"}).workers == 1


@pytest.mark.parametrize("text", ["[mystery]\na = 1\n", "[trainer]\nbogus = 1\n",
                                  "[physics]\ndt = fast\n", "[trainer]\ntop_b = 20\n",
                                  "[experiment]\nworkers = 0\n", "no section"])
def test_rejects_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text, env={})


def test_mask_override():
    rows = ["".join("1" if b else "0" for b in r) for r in heuristic_mask("slope")]
    cfg = parse_config("[policy]\nmask = " + ", ".join(rows) + "\n", env={})
    assert cfg.train.mask == tuple(map(tuple, heuristic_mask("slope")))
    with pytest.raises(ConfigError):
        parse_mask("0101")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="nope.ini"):
        load_config(tmp_path / "nope.ini")


def test_parse_range():
    assert parse_range("0.1:0.1:0.5") == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert parse_range("0.2, 0.4") == [0.2, 0.4]
    for bad in ("0.1:0.1", "0.5:0.1:0.1", "a:b:c", "", "0.1:0:0.5"):
        with pytest.raises(ConfigError):
            parse_range(bad)
