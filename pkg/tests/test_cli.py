import hashlib
import json

import pytest

from schrotree import __version__
from schrotree.cli import EXIT_BUDGET, EXIT_CONFIG, EXIT_FAIL, EXIT_OK, load_config, resolve, run
from schrotree.errors import ConfigError


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_critical_subcommand(tmp_path):
    assert run(["critical", "--q", "2", "--nmax", "12", "--out", str(tmp_path)]) == EXIT_OK
    csv = tmp_path / "critical.csv"
    assert csv.exists()
    assert csv.read_text().splitlines()[0] == "t,n,log_abs,phase,log_ratio,log_ratio_eps,quad_rel_error"
    m = manifest(tmp_path)
    assert m["command"] == "critical" and m["version"] == __version__
    assert m["config"]["critical"]["nmax"] == 12
    assert m["passed"] and all(c["passed"] for c in m["checks"]["critical"])
    assert m["artifacts"]["critical.csv"] == hashlib.sha256(csv.read_bytes()).hexdigest()
    assert "dense_budget" in m["constants"]


def test_plot_flag_writes_svg(tmp_path):
    assert run(["critical", "--nmax", "6", "--plot", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "critical.svg").read_text().startswith("<svg")


def test_unknown_subcommand_exits_with_config_code():
    with pytest.raises(SystemExit) as exc:
        run(["bogus"])
    assert exc.value.code == EXIT_CONFIG


def test_bad_flag_type():
    with pytest.raises(SystemExit) as exc:
        run(["critical", "--nmax", "many"])
    assert exc.value.code == EXIT_CONFIG


@pytest.mark.parametrize("text", [
    "[nonsense]\nx = 1\n",
    "[critical]\nnmax = 'twelve'\n",
    "[critical]\nunknown_key = 1\n",
    "critical = 3\n",
    "[critical\n",
])
def test_config_errors(tmp_path, text):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(text)
    assert run(["critical", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert run(["critical", "--config", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_runner_value_error_maps_to_config_code(tmp_path):
    assert run(["counterexample", "--omega", "bogus", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_precedence_defaults_file_flags(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[critical]\nnmax = 6\neps = 1.0\n")
    file_cfg = load_config(cfg)
    assert resolve("critical", file_cfg, {})["critical"]["nmax"] == 6
    got = resolve("critical", file_cfg, {"nmax": "8", "eps": None})["critical"]
    assert got["nmax"] == 8 and got["eps"] == 1.0 and got["tol"] == 1e-10


def test_list_flags_and_seed_override():
    assert resolve("commutator", {}, {"radii": "6,8"})["commutator"]["radii"] == [6, 8]
    all_cfg = resolve("all", {}, {"seed": 9})
    assert all_cfg["evolve"]["seed"] == 9 and all_cfg["carleman"]["seed"] == 9
    assert "seed" not in all_cfg["critical"]
    with pytest.raises(ConfigError, match="commutator.radii"):
        resolve("commutator", {}, {"radii": "6,x"})


def test_strict_mode_fails_on_check(tmp_path):
    args = ["evolve", "--N", "4", "--tol", "1e-3", "--out"]
    assert run(args + [str(tmp_path / "lax")]) == EXIT_OK
    assert not manifest(tmp_path / "lax")["passed"]
    assert run(args + [str(tmp_path / "strict"), "--strict"]) == EXIT_FAIL


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SCHROTREE_OUTPUT", str(tmp_path))
    assert run(["geometry", "--ell_max", "3"]) == EXIT_OK
    assert (tmp_path / "geometry" / "horocycles.csv").exists()


def test_budget_exit_code(tmp_path):
    assert run(["commutator", "--radii", "22", "--out", str(tmp_path)]) == EXIT_BUDGET


def test_geometry_rows(tmp_path):
    run(["geometry", "--q", "2", "--ell_max", "2", "--out", str(tmp_path)])
    rows = (tmp_path / "horocycles.csv").read_text().splitlines()
    assert rows[0] == "q,ell,k,closed_form,brute_force"
    assert len(rows) == 1 + 1 + 3 + 5
