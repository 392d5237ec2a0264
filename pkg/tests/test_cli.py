import json
import os
import subprocess
import sys

import pytest

from flatcusp import cli

SMALL = """\
[table]
beta = 3.0

[corner]
count = 40
n_lo = 100
n_hi = 1000
dump = 1
"""


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _strip(doc):
    doc = dict(doc)
    doc.pop("timestamp", None)
    doc.pop("elapsed_s", None)
    return doc


def test_table_default(tmp_path, capsys):
    assert cli.main(["table", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "table.json").read_text())
    assert doc["command"] == "table"
    assert doc["results"]["invariants"]["ok"]
    assert len(doc["config_hash"]) == 16
    assert "total_length" in capsys.readouterr().out


def test_beta_two_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, "[table]\nbeta = 2\n")
    assert cli.main(["table", "--config", cfg, "--out", str(tmp_path)]) != 0
    err = capsys.readouterr().err
    assert "beta must exceed 2" in err
    assert not (tmp_path / "table.json").exists()


def test_malformed_config_names_field(tmp_path, capsys):
    cfg = _write(tmp_path, "[table]\nbeta = 3\neps0 = lots\n")
    assert cli.main(["table", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "table.eps0" in err and f"{cfg}:3" in err


def test_unknown_key_rejected(tmp_path):
    cfg = _write(tmp_path, "[corner]\ncounts = 3\n")
    with pytest.raises(cli.ConfigError, match="corner.counts"):
        cli.load_config(cfg)


def test_bare_file_is_table_section(tmp_path):
    cfg = cli.load_config(_write(tmp_path, "beta = 4.5\n"))
    assert cfg.table.beta == 4.5
    assert cfg.hash() != cli.ExperimentConfig().hash()


def test_overrides_and_validation():
    cfg = cli.load_config(None, {("run", "seed"): 7})
    assert cfg.run.seed == 7
    with pytest.raises(cli.ConfigError):
        cli.load_config(None, {("correlations", "n_max"): 500})
    with pytest.raises(cli.ConfigError):
        cli.load_config(None, {("run", "precision"): "quad"})


def test_corner_reduced_and_compare(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "o"
    assert cli.main(["corner", "--config", cfg, "--out", str(out), "--reduced"]) == 0
    doc = json.loads((out / "corner.json").read_text())
    assert doc["results"]["mode"] == "reduced"
    assert cli.main(["corner", "--config", cfg, "--out", str(out), "--compare"]) == 0
    doc = json.loads((out / "corner.json").read_text())
    assert doc["results"]["mode"] == "exact"
    cmp = doc["results"]["compare"]
    assert cmp["max_rel_entering"] < 1e-4
    assert cmp["length_mismatches"] <= 2
    assert "compare max rel" in capsys.readouterr().out


def test_rerun_is_identical(tmp_path):
    cfg = _write(tmp_path, SMALL)
    docs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert cli.main(["corner", "--config", cfg, "--out", str(out)]) == 0
        docs.append(json.loads((out / "corner.json").read_text()))
    a, b = _strip(docs[0]), _strip(docs[1])
    a["config"]["run"].pop("output")
    b["config"]["run"].pop("output")
    assert a == b
    csvs = [(tmp_path / f"o{k}" / "corner_series.csv").read_bytes() for k in range(2)]
    assert csvs[0] == csvs[1]
    man = json.loads((tmp_path / "o0" / "MANIFEST.json").read_text())
    files = {e["file"]: e for e in man["artifacts"]}
    assert "corner.json" in files
    e = files["corner.json"]
    assert e["command"] == "corner" and e["seed"] == 1 and len(e["sha256"]) == 64
    assert e["config_hash"] == docs[0]["config_hash"]


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "flatcusp", "table", "--out", str(tmp_path)],
                       capture_output=True, text=True, timeout=300)
    assert r.returncode == 0, r.stderr
    assert os.path.exists(tmp_path / "MANIFEST.json")
