import json

import pytest

from bamld.cli import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from bamld.config import (OUT_DIR_ENV, PROFILES, ConfigError, ExperimentConfig, dump_resolved, load_config,
                          resolve, with_overrides)

TINY = {
    "experiment": "rmse_fig2", "seeds": [0], "pool_size": 3, "samples_per_task": 5, "budget": 1,
    "methods": ["uniform"], "net_hidden": [4], "particles": 2, "svgd_steps": 2, "mc_samples": 4,
    "n_test_tasks": 2, "n_adapt": 1, "n_eval": 3,
}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(data if isinstance(data, str) else json.dumps(data))
    return p


def test_defaults_validate():
    cfg = ExperimentConfig()
    assert cfg.methods == ("bamld", "uncertainty", "diversity", "uniform")


def test_profile_then_file_then_override():
    cfg = resolve({"mc_samples": 64}, "desk", mc_samples=None, seeds=(3,))
    assert cfg.svgd_steps == PROFILES["desk"]["svgd_steps"]
    assert cfg.mc_samples == 64 and cfg.seeds == (3,)
    assert resolve({}, "paper").svgd_steps == 10000
    assert resolve({"mc_samples": 64}, "desk", mc_samples=32).mc_samples == 32


@pytest.mark.parametrize("raw, field", [
    ({"budget": 0}, "budget"),
    ({"budget": 30}, "budget"),
    ({"methods": ["bamld", "random"]}, "methods"),
    ({"seeds": [1, 1]}, "seeds"),
    ({"experiment": "clusters_fig4", "clusters": [3]}, "clusters"),
    ({"net_hidden": 8}, "net_hidden"),
    ({"learning_rate": 0.1}, "learning_rate"),
    ({"profile": "huge"}, "profile"),
])
def test_errors_name_the_offending_field(raw, field):
    with pytest.raises(ConfigError) as info:
        resolve(raw)
    assert info.value.field == field


def test_json_error_reports_line(tmp_path):
    p = write(tmp_path, '{\n  "budget": 3,\n  "seeds": [0,\n}')
    with pytest.raises(ConfigError, match="line"):
        load_config(p)
    with pytest.raises(ConfigError, match="no such file"):
        load_config(tmp_path / "missing.json")
    with pytest.raises(ConfigError, match="object"):
        load_config(write(tmp_path, "[1, 2]", "list.json"))


def test_env_var_sets_default_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env"))
    assert resolve({}).output_dir == str(tmp_path / "env")
    assert resolve({"output_dir": "file"}).output_dir == "file"
    assert resolve({}, output_dir="flag").output_dir == "flag"


def test_resolved_echo_reproduces_config(tmp_path):
    cfg = resolve(TINY, "desk")
    dump_resolved(cfg, tmp_path / "echo.json")
    assert load_config(tmp_path / "echo.json") == cfg


def test_with_overrides_validates():
    cfg = resolve(TINY)
    assert with_overrides(cfg, seeds=[1, 2]).seeds == (1, 2)
    with pytest.raises(ConfigError):
        with_overrides(cfg, budget=99)


def test_cli_usage_errors_exit_one(capsys):
    assert main([]) == EXIT_CONFIG
    assert main(["run"]) == EXIT_CONFIG
    assert main(["run", "--config", "x.json", "--seeds", "a,b"]) == EXIT_CONFIG


def test_cli_bad_config_exits_one(tmp_path, capsys):
    p = write(tmp_path, {**TINY, "budget": -1})
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "budget" in capsys.readouterr().err


def test_cli_run_writes_outputs(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "from_env"))
    p = write(tmp_path, TINY)
    assert main(["run", "--config", str(p), "--seeds", "4"]) == EXIT_OK
    out = tmp_path / "from_env"
    assert (out / "results.csv").exists() and (out / "config_resolved.json").exists()
    assert json.loads((out / "config_resolved.json").read_text())["seeds"] == [4]


def test_cli_runtime_failure_exits_two(tmp_path, monkeypatch, capsys):
    import bamld.harness

    def boom(cfg, plot=True):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(bamld.harness, "run_experiment", boom)
    p = write(tmp_path, TINY)
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == EXIT_RUNTIME
    assert "FloatingPointError" in capsys.readouterr().err


def test_cli_failed_properties_exit_three(tmp_path, monkeypatch, capsys):
    import bamld.properties

    bad = bamld.properties.PropertyResult("always_false", False, 1.0, 0.0, "forced")
    monkeypatch.setattr(bamld.properties, "run_all", lambda: [bad])
    assert main(["verify", "--suite", "all"]) == EXIT_ACCEPTANCE
    assert "always_false" in capsys.readouterr().out


def test_cli_plot_errors_exit_one(tmp_path, capsys):
    csv = write(tmp_path, "not,a,header\n", "r.csv")
    assert main(["plot", "--csv", str(csv), "--kind", "rmse_fig2"]) == EXIT_CONFIG
    assert main(["plot", "--csv", str(tmp_path / "none.csv"), "--kind", "rmse_fig2"]) == EXIT_CONFIG
