import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraconc import cli
from fraconc.experiments import ConfigError, load_config, parse_override
from fraconc.io import (
    cache_key,
    cached_ground_state,
    load_ground_state,
    read_csv,
    save_ground_state,
    write_csv,
    write_json,
)
from fraconc.kernels import Params

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=20))
@settings(max_examples=30, deadline=None)
def test_csv_roundtrip_exact(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("csv") / "t.csv"
    write_csv(p, ("a", "b"), rows)
    cols, back = read_csv(p)
    assert cols == ["a", "b"]
    assert [tuple(r) for r in back] == [tuple(float(v) for v in r) for r in rows]
    assert p.read_text().splitlines()[0] == "# fraconc-v1"


def test_csv_rejects_untagged(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(p)


def test_json_numpy_types(tmp_path):
    write_json(tmp_path / "r.json", {"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True), "d": float("nan")})
    d = json.loads((tmp_path / "r.json").read_text())
    assert d == {"a": 1.5, "b": [0, 1, 2], "c": True, "d": None}


def test_cache_key_sensitivity():
    P = Params()
    k = cache_key(P, 0.05, 40.0)
    assert k == cache_key(P.with_eps(0.2), 0.05, 40.0)  # eps is not part of the key
    assert k != cache_key(P, 0.025, 40.0)
    assert k != cache_key(P, 0.05, 20.0)
    assert k != cache_key(Params(s=0.3), 0.05, 40.0)
    assert k != cache_key(Params(p=1.5), 0.05, 40.0)


def test_ground_state_cache_roundtrip(tmp_path, ground, params, grid):
    assert load_ground_state(params, grid, tmp_path) is None
    save_ground_state(ground, tmp_path)
    back = load_ground_state(params, grid, tmp_path)
    np.testing.assert_array_equal(back.w.extension, ground.w.extension)
    assert back.w.exterior == ground.w.exterior
    assert back.energy == ground.energy and back.alpha == ground.alpha
    again = cached_ground_state(params, grid, tmp_path)
    np.testing.assert_array_equal(again.w.values, ground.w.values)


# -- configuration ---------------------------------------------------------------


def test_defaults_and_overrides():
    cfg = load_config(None, ["grid.h=0.1", "sweeps.eps_list=[0.2,0.1]"], env={})
    assert cfg.h == 0.1 and cfg.eps_list == [0.2, 0.1]
    assert cfg.params.s == 0.4 and cfg.L == 40.0


def test_env_cache_dir():
    cfg = load_config(None, [], env={"FRACONC_CACHE": "/tmp/somewhere"})
    assert str(cfg.cache_dir) == "/tmp/somewhere"


@pytest.mark.parametrize("ov", [
    "grid.h=-0.05",
    "sweeps.eps_list=[0.1,0.2]",
    "tolerances.newton=0",
    "params.s=0.7",
    "nosuch.key=1",
    "grid.nosuch=1",
    "sweeps.delta=2",
    "noequals",
])
def test_bad_config(ov):
    with pytest.raises(ConfigError):
        load_config(None, [ov], env={})


def test_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"grid": {"h": 0.1}}))
    assert load_config(str(p), env={}).h == 0.1
    p.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(str(p), env={})
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p), env={})


def test_parse_override_json_or_text():
    assert parse_override("a.b=[1, 2]") == ("a.b", [1, 2])
    assert parse_override("out=dir") == ("out", "dir")


# -- command line ------------------------------------------------------------------


def test_cli_config_error_exit_code(capsys):
    assert cli.main(["gamma", "--override", "grid.h=0"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"


def test_cli_missing_config_file(capsys, tmp_path):
    assert cli.main(["gamma", "--config", str(tmp_path / "none.json")]) == 2


def test_cli_bad_threads(capsys):
    assert cli.main(["gamma", "--threads", "0"]) == 2


def test_cli_unknown_subcommand():
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_cli_ground_and_report(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FRACONC_CACHE", str(tmp_path / "cache"))
    out = tmp_path / "out"
    assert cli.main(["ground", "--out", str(out), "--threads", "1"]) == 0
    cols, rows = read_csv(out / "ground.csv")
    assert cols == ["x", "w"] and rows[0][0] == 0.0
    assert any((tmp_path / "cache").iterdir())  # ground state was cached
    rep = json.loads((out / "ground.json").read_text())
    assert all(rep["pass_flags"].values())
    assert cli.main(["report", "--out", str(out)]) == 0
    assert "PASS  ground.residual" in capsys.readouterr().out


def test_cli_report_without_runs(tmp_path, capsys):
    assert cli.main(["report", "--out", str(tmp_path)]) == 2


def test_effective_threads_never_exceeds_pool():
    assert cli.effective_threads(1) == 1
    assert cli.effective_threads(10_000) < 10_000
