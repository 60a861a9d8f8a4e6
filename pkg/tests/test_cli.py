import json
import math
import os

import numpy as np
import pytest

from szego_lab import cli
from szego_lab.cli import ConfigError, run, validate

FREE = "lambda=0.0\nomega=0.618\nradius=1.0\n"
COS = "lambda=0.3\nomega=0.618\nradius=1.0\nh.1=0.5,0\nh.-1=0.5,0\n"
FAST_SPECTRUM = FREE + "gridSize=64\nhorizon=256\nphaseCount=2\n"


# --- validate ---------------------------------------------------------------

def test_defaults_filled():
    cfg = validate(FREE, "spectrum")
    assert cfg.params["gridSize"] == 512
    assert cfg.params["horizon"] == 4096
    assert cfg.params["threads"] == 0


def test_canonical_hash_ignores_ordering_and_comments():
    a = validate(FREE + "gridSize=64\nhorizon=256\n", "spectrum")
    b = validate("# comment\nhorizon = 256\nradius=1.0\n"
                 "gridSize=64\nomega=0.618\nlambda=0.0\n", "spectrum")
    assert a.configHash == b.configHash
    assert a.canonicalText == b.canonicalText


def test_unknown_key_diagnostic_names_key():
    with pytest.raises(ConfigError, match="frobnicate"):
        validate(FREE + "frobnicate=3\n", "spectrum")


def test_out_of_range_value_names_key():
    with pytest.raises(ConfigError, match="nIter"):
        validate(COS + "nIter=5\n", "lyapunov")


def test_coupling_out_of_range_is_config_error():
    with pytest.raises(ConfigError, match="model"):
        validate("lambda=1.5\nomega=0.618\nradius=1.0\n", "spectrum")


def test_duplicate_key_rejected_with_line_number():
    with pytest.raises(ConfigError, match="line 4"):
        validate(FREE + "radius=2.0\n", "spectrum")


def test_command_mismatch_rejected():
    with pytest.raises(ConfigError, match="command"):
        validate(FREE + "command=dos\n", "spectrum")


def test_command_from_config_key():
    cfg = validate(FREE + "command=spectrum\n")
    assert cfg.command == "spectrum"


def test_missing_command_rejected():
    with pytest.raises(ConfigError, match="no command"):
        validate(FREE)


def test_estimator_value_checked():
    with pytest.raises(ConfigError, match="estimator"):
        validate(COS + "estimator=magic\n", "dos")
    cfg = validate(COS + "estimator=zeros\n", "dos")
    assert cfg.params["estimator"] == "zeros"


def test_non_key_value_line_rejected():
    with pytest.raises(ConfigError, match="line 1"):
        validate("this is not a config\n", "spectrum")


# --- run: payloads, files, cache -------------------------------------------

def test_spectrum_free_full_circle(tmp_path):
    cfg = validate(FAST_SPECTRUM, "spectrum")
    env = run(cfg, out_dir=str(tmp_path))
    assert env.payload["totalLength"] == pytest.approx(2 * math.pi, abs=1e-9)
    for name in ("spectrum.csv", "spectrum.png", "spectrum-result.json"):
        assert (tmp_path / name).exists()
    saved = json.loads((tmp_path / "spectrum-result.json").read_text())
    assert saved["configHash"] == cfg.configHash
    assert saved["payload"] == env.payload


def test_cache_replay_is_byte_identical(tmp_path):
    cfg = validate(FAST_SPECTRUM, "spectrum")
    first = run(cfg, out_dir=str(tmp_path))
    cache = tmp_path / ".cache" / (cfg.configHash + ".json")
    assert cache.exists()
    second = run(cfg, out_dir=str(tmp_path))
    assert json.dumps(first.payload, sort_keys=True) == \
        json.dumps(second.payload, sort_keys=True)
    # replay still rewrites the delimited output
    assert (tmp_path / "spectrum.csv").exists()


def test_corrupt_cache_recovers(tmp_path, capsys):
    cfg = validate(FAST_SPECTRUM, "spectrum")
    first = run(cfg, out_dir=str(tmp_path))
    cache = tmp_path / ".cache" / (cfg.configHash + ".json")
    cache.write_text("{ not json")
    second = run(cfg, out_dir=str(tmp_path))
    assert "cache entry unreadable" in capsys.readouterr().err
    assert second.payload == first.payload


def test_no_cache_skips_cache_dir_entry(tmp_path):
    cfg = validate(FAST_SPECTRUM, "spectrum")
    run(cfg, out_dir=str(tmp_path), use_cache=False)
    assert not (tmp_path / ".cache" / (cfg.configHash + ".json")).exists()


def test_suite_payload_rows(tmp_path):
    cfg = validate(FREE, "suite")
    env = run(cfg, out_dir=str(tmp_path))
    names = {r["name"] for r in env.payload["rows"]}
    assert {"truncationUnitary", "outerLowerBound", "rotationInRange",
            "dosMass", "freeFullCircle"} <= names
    assert env.payload["allPass"]
    text = (tmp_path / "suite.csv").read_text()
    assert text.startswith("check,pass,detail")


def test_dos_payload_and_files(tmp_path):
    cfg = validate(COS + "size=64\nphaseSamples=1\n", "dos")
    env = run(cfg, out_dir=str(tmp_path))
    cdf = env.payload["dos"]["cdf"]
    assert cdf[-1] == pytest.approx(1.0, abs=1e-6)
    assert (tmp_path / "dos.csv").exists()
    assert (tmp_path / "dos.png").exists()


# --- main: exit codes -------------------------------------------------------

def _write_config(tmp_path, text):
    p = tmp_path / "cfg.txt"
    p.write_text(text)
    return str(p)


def test_main_success_exit_zero(tmp_path, capsys):
    path = _write_config(tmp_path, FAST_SPECTRUM)
    rc = cli.main(["spectrum", "--config", path, "--out",
                   str(tmp_path / "out")])
    assert rc == 0
    assert "spectrum" in capsys.readouterr().out


def test_main_missing_config_exit_two(tmp_path, capsys):
    rc = cli.main(["spectrum", "--config", str(tmp_path / "absent.txt")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_main_bad_key_exit_two(tmp_path, capsys):
    path = _write_config(tmp_path, FREE + "bogus=1\n")
    rc = cli.main(["spectrum", "--config", path, "--out",
                   str(tmp_path / "out")])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


def test_main_threads_flag_accepted(tmp_path):
    path = _write_config(tmp_path, FAST_SPECTRUM)
    rc = cli.main(["spectrum", "--config", path, "--out",
                   str(tmp_path / "out"), "--threads", "2", "--no-cache"])
    assert rc == 0


def test_main_computation_error_exit_three(tmp_path, capsys, monkeypatch):
    def boom(cfg):
        raise RuntimeError("synthetic failure")
    monkeypatch.setitem(cli._DISPATCH, "spectrum", boom)
    path = _write_config(tmp_path, FAST_SPECTRUM)
    rc = cli.main(["spectrum", "--config", path, "--out",
                   str(tmp_path / "out")])
    assert rc == 3
    assert "computation error" in capsys.readouterr().err


def test_main_suite_failure_exit_four(tmp_path, capsys, monkeypatch):
    def failing_suite(cfg):
        return {"rows": [{"name": "synthetic", "ok": False, "detail": "x"}],
                "allPass": False}
    monkeypatch.setitem(cli._DISPATCH, "suite", failing_suite)
    path = _write_config(tmp_path, FREE)
    rc = cli.main(["suite", "--config", path, "--out",
                   str(tmp_path / "out"), "--no-cache"])
    assert rc == 4
    assert "synthetic" in capsys.readouterr().err
