import pytest

from disentangle.experiments import DEFAULTS, EXPERIMENTS, ConfigError, cells, resolve_config, run


def test_defaults_resolve():
    for name in EXPERIMENTS:
        assert resolve_config(name) == DEFAULTS[name]


def test_precedence_flags_over_file():
    cfg = resolve_config("mod-add", {"p": 11, "hidden": 8}, {"p": "13"})
    assert cfg["p"] == 13 and cfg["hidden"] == 8
    assert DEFAULTS["mod-add"]["p"] == 97


def test_list_and_bool_coercion():
    cfg = resolve_config("flow", None, {"spectrum": "3,1", "r": "2", "symmetric": "true", "seeds": "4,5"})
    assert cfg["spectrum"] == [3.0, 1.0] and cfg["symmetric"] is True and cfg["seeds"] == [4, 5]
    assert resolve_config("flow", None, {"t_end": "20"})["t_end"] == 20.0


@pytest.mark.parametrize("experiment,bad", [
    ("mod-add", {"p": 91}),
    ("mod-add", {"families": ["bilinear", "mlp"]}),
    ("mod-add", {"nope": 1}),
    ("mod-add", {"hidden": 0}),
    ("mod-add", {"seeds": []}),
    ("mod-add", {"hidden": 2.5}),
    ("flow", {"spectrum": [1.0, 2.0]}),
    ("flow", {"unlearn": 7}),
    ("ortho-unlearn", {"alphas": [1.5]}),
    ("entangled", {"ranks": [0]}),
    ("flow", {"symmetric": "maybe"}),
])
def test_invalid_configs(experiment, bad):
    with pytest.raises(ConfigError):
        resolve_config(experiment, bad)


def test_unknown_experiment():
    with pytest.raises(ConfigError):
        resolve_config("nope")


def test_cell_counts():
    assert len(cells("mod-add", resolve_config("mod-add"))) == 6
    assert len(cells("replicate-113", resolve_config("replicate-113"))) == 12
    assert len(cells("quat", resolve_config("quat"))) == 10
    assert len(cells("ortho-unlearn", resolve_config("ortho-unlearn"))) == 12
    assert len(cells("entangled", resolve_config("entangled"))) == 18
    assert cells("flow", resolve_config("flow")) == [(0,)]
    assert cells("mod-mul", resolve_config("mod-mul"))[0] == ("mul", "bilinear", 0)


def test_tiny_mod_add_run(tmp_path):
    cfg = resolve_config("mod-add", {"p": 7, "hidden": 8, "d": 4, "max_epochs": 2,
                                     "families": ["bilinear"], "seeds": [0]})
    report = run("mod-add", cfg, tmp_path)
    assert not report["failed"]
    assert (tmp_path / "report.json").exists()
    for f in report["files"]:
        assert (tmp_path / f).exists()
    assert any(f.endswith(".csv") for f in report["files"])
    assert any(f.endswith(".svg") for f in report["files"])


def test_parallel_matches_serial(tmp_path):
    cfg = resolve_config("mod-add", {"p": 5, "hidden": 4, "d": 4, "max_epochs": 2, "seeds": [0, 1]})
    run("mod-add", cfg, tmp_path / "a", jobs=1, plots=False)
    run("mod-add", cfg, tmp_path / "b", jobs=2, plots=False)
    for f in sorted((tmp_path / "a").glob("*.csv")):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
