import csv
import hashlib
import json
import os
from pathlib import Path

import pytest

from impedlab import cli
from impedlab import config as config_module
from impedlab.config import canonical_config, load_config, parse_config
from impedlab.errors import ConfigInvalid, StageFailed

CONFIGS = Path(config_module.__file__).with_name("configs")
SMALL = {
    "schema_version": 1,
    "name": "small",
    "wave": {"k": 1.0},
    "surface": {"kind": "sphere", "radius": 1.0},
    "impedance": {"model": "constant", "value": 1.0},
    "mesh": {"n_theta": 12, "n_phi": 24},
    "inverse": {"far_grid": [24, 48]},
}


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _run(tmp_path, *args, data=SMALL, out="out"):
    cfg = _write(tmp_path, data)
    status = cli.main([*args, "--config", cfg, "--out", str(tmp_path / out)])
    return status, tmp_path / out


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# --- configuration -----------------------------------------------------------

@pytest.mark.parametrize("name", ["sphere_full_coat", "sphere_polar_cap", "stability_sweep"])
def test_shipped_configs_load(name):
    cfg = canonical_config(name)
    assert cfg.schema_version == 1


def test_unknown_key_is_located():
    bad = dict(SMALL, mesh={"n_theta": 12, "n_phi": 24, "spacing": 3})
    with pytest.raises(ConfigInvalid, match=r"mesh\.spacing"):
        parse_config(bad)


def test_wrong_schema_version():
    with pytest.raises(ConfigInvalid, match="schema_version"):
        parse_config(dict(SMALL, schema_version=2))


def test_bad_json_reports_position(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"schema_version": 1,\n "wave": }')
    with pytest.raises(ConfigInvalid, match=r":2:\d+"):
        load_config(p)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigInvalid, match="no such file"):
        load_config(tmp_path / "absent.json")


def test_constant_impedance_needs_value():
    with pytest.raises(ConfigInvalid, match="value"):
        parse_config(dict(SMALL, impedance={"model": "constant"}))


def test_config_is_frozen():
    cfg = parse_config(SMALL)
    with pytest.raises(Exception):
        cfg.seed = 3


# --- formatting and writes ---------------------------------------------------

@pytest.mark.parametrize("x", [0.1, 1 / 3, 1e-300, -2.5e17, 12345678901234567.0])
def test_fmt_round_trips(x):
    assert float(cli.fmt(x)) == x


def test_atomic_write_leaves_no_temporaries(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    cli._atomic_write(target, b"abc")
    cli._atomic_write(target, b"xyz")
    assert target.read_bytes() == b"xyz"
    assert sorted(p.name for p in target.parent.iterdir()) == ["f.txt"]


# --- commands ----------------------------------------------------------------

def test_solve_writes_one_row_per_node(tmp_path):
    status, out = _run(tmp_path, "solve")
    assert status == 0
    rows = _rows(out / "trace.csv")
    assert len(rows) == 12 * 24
    assert list(rows[0]) == list(cli.TRACE_HEADER)
    rec = json.loads((out / "solution.json").read_text())
    assert rec["n_nodes"] == 12 * 24


def test_manifest_lists_every_output(tmp_path):
    status, out = _run(tmp_path, "solve")
    manifest = json.loads((out / "manifest.json").read_text())
    written = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(manifest["outputs"]) == written
    for name, entry in manifest["outputs"].items():
        data = (out / name).read_bytes()
        assert entry["sha256"] == hashlib.sha256(data).hexdigest()
        assert entry["bytes"] == len(data)
    assert manifest["command"] == "solve"
    assert manifest["config"]["name"] == "small"
    assert "solve" in manifest["timings"]


def test_csv_uses_unix_newlines(tmp_path):
    _, out = _run(tmp_path, "farfield")
    data = (out / "farfield.csv").read_bytes()
    assert b"\r" not in data and data.endswith(b"\n")
    assert len(_rows(out / "farfield.csv")) == 24 * 48


def test_noiseless_reconstruct(tmp_path):
    status, out = _run(tmp_path, "reconstruct")
    assert status == 0
    summary = json.loads((out / "reconstruction.json").read_text())
    assert summary["sup_error"] < 1e-2 and summary["pass"]
    assert summary["trusted_fraction"] == 1.0


def test_oracle_compare(tmp_path):
    status, out = _run(tmp_path, "oracle-compare")
    assert status == 0
    assert json.loads((out / "oracle_compare.json").read_text())["far_field_rel_L2"] < 1e-6


def test_oracle_compare_rejects_mixed_case(tmp_path, capsys):
    data = dict(SMALL, partition={"kind": "polar_cap", "cap_angle": 0.8})
    status, _ = _run(tmp_path, "oracle-compare", data=data)
    assert status == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigInvalid"


def test_verify_psi0(tmp_path):
    status, out = _run(tmp_path, "verify", "psi0")
    assert status == 0
    rows = _rows(out / "psi0.csv")
    assert {r["case"] for r in rows} == {"k<lambda", "k>lambda", "k=lambda"}


@pytest.mark.parametrize("which", ["lowerbound", "sdoubling", "ap"])
def test_verify_probes(tmp_path, which):
    status, out = _run(tmp_path, "verify", which)
    assert status == 0
    assert json.loads((out / f"{which}.json").read_text())["pass"]


def test_seed_override_recorded(tmp_path):
    cfg = _write(tmp_path, SMALL)
    cli.main(["verify", "psi0", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "17"])
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 17


# --- failures ----------------------------------------------------------------

def test_invalid_config_exit_code(tmp_path, capsys):
    status, out = _run(tmp_path, "solve", data=dict(SMALL, bogus=1))
    assert status == 2
    rec = json.loads(capsys.readouterr().err)
    assert rec["error"] == "ConfigInvalid" and "bogus" in rec["message"]
    assert not out.exists()


def test_stage_failure_is_wrapped(tmp_path, capsys):
    data = dict(SMALL, inverse={"R1": 0.5, "far_grid": [24, 48]})
    status, _ = _run(tmp_path, "reconstruct", data=data)
    assert status == 2
    rec = json.loads(capsys.readouterr().err)
    assert rec["error"] == "StageFailed"
    assert rec["stage"] == "reconstruct"
    assert rec["cause"] == "RadiusInsideObstacle"


def test_stage_context_wraps_only_package_errors(tmp_path):
    run = cli.Run(tmp_path, parse_config(SMALL), "solve")
    with pytest.raises(StageFailed) as info:
        with run.stage("x"):
            raise ConfigInvalid("boom")
    assert info.value.stage == "x" and isinstance(info.value.cause, ConfigInvalid)
    with pytest.raises(KeyError):
        with run.stage("y"):
            raise KeyError("other")
    assert set(run.timings) == {"x", "y"}


# --- threads -----------------------------------------------------------------

def test_threads_flag_sets_blas_env(monkeypatch):
    for var in cli._THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    cli._set_threads(3)
    assert all(os.environ[v] == "3" for v in cli._THREAD_VARS)


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("IMPEDLAB_THREADS", "2")
    for var in cli._THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    cli._set_threads(None)
    assert all(os.environ[v] == "2" for v in cli._THREAD_VARS)


def test_nonpositive_threads_rejected():
    with pytest.raises(ConfigInvalid):
        cli._set_threads(0)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--version"])
    assert info.value.code == 0
    assert "0.1.0" in capsys.readouterr().out
