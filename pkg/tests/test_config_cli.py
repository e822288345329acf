import json
import math
from pathlib import Path

import numpy as np
import pytest

from memsim.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, TRACE_HEADER, main, read_trace
from memsim.config import (
    SchemaError,
    build_emulator,
    config_hash,
    emulator_to_document,
    parse_config,
)
from memsim.core import ConfigError, EmulatorConfig, Fidelity, Topology
from memsim.fingerprints import loop_metrics
from memsim.engine import steady_window

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = {"emulator": {}, "source": {"frequency": 1e6}, "run": {}}


def dump(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_minimal_defaults():
    exp = parse_config(json.dumps(MINIMAL).encode())
    assert exp.experiment == "run"
    assert exp.emulator.topology is Topology.GROUNDED
    assert exp.emulator.fidelity is Fidelity.SIMPLIFIED
    assert exp.emulator.C2 == EmulatorConfig().C2
    assert exp.source.tones[0].amplitude == 0.14


def test_range_error_path():
    doc = json.loads(json.dumps(MINIMAL))
    doc["emulator"]["C2"] = -1
    with pytest.raises(SchemaError) as exc:
        parse_config(json.dumps(doc))
    assert ("/emulator/C2", "must be > 0") in exc.value.problems


def test_unknown_key_and_block_count():
    with pytest.raises(SchemaError, match="unknown key"):
        parse_config(json.dumps({**MINIMAL, "emulator": {"C3": 1e-12}}))
    with pytest.raises(SchemaError, match="exactly one experiment"):
        parse_config(json.dumps({**MINIMAL, "sweep": {"frequencies": [1, 2, 3]}}))
    with pytest.raises(SchemaError, match="must be of type"):
        parse_config(json.dumps({**MINIMAL, "emulator": {"R1": "10"}}))


def test_parse_errors():
    with pytest.raises(ConfigError, match="line 1, column"):
        parse_config(b"{\"emulator\": ")
    with pytest.raises(ConfigError, match="non-finite"):
        parse_config('{"emulator": {"R1": NaN}, "source": {"frequency": 1}, "run": {}}')
    with pytest.raises(ConfigError, match="UTF-8"):
        parse_config(b"\xff\xfe")
    with pytest.raises(SchemaError, match="/source"):
        parse_config(json.dumps({"emulator": {}, "run": {}}))


def test_operating_point_document_round_trip():
    doc = json.loads((CONFIGS / "fig6_run.json").read_text())
    exp = parse_config(json.dumps(doc))
    e = exp.emulator
    assert (e.R1, e.C2, e.ota4.Vb) == (10.0, 1.5e-10, 0.45)
    assert exp.source.tones[0].amplitude == 0.14
    again = build_emulator(emulator_to_document(e))
    assert again == e
    assert parse_config(json.dumps(doc)).config_hash == exp.config_hash


def test_hash_changes_with_edit():
    h0 = config_hash(MINIMAL)
    edited = json.loads(json.dumps(MINIMAL))
    edited["emulator"]["R1"] = 11.0
    assert config_hash(edited) != h0
    # key order does not matter
    assert config_hash(dict(reversed(list(MINIMAL.items())))) == h0


def test_ignored_junction_rows():
    doc = {"emulator": {}, "source": {"frequency": 1e6},
           "mc": {"n_runs": 2, "deviations": {"Cjn": [1e-4, 1e-5]}}}
    assert parse_config(json.dumps(doc)).ignored == ("Cjn",)


def run_cli(tmp_path, cmd, doc_or_path, out="out", *extra):
    cfg = doc_or_path if isinstance(doc_or_path, Path) else dump(tmp_path, doc_or_path)
    code = main([cmd, "--config", str(cfg), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def test_run_outputs_and_determinism(tmp_path):
    code, out = run_cli(tmp_path, "run", CONFIGS / "fig6_run.json", "a")
    assert code == EXIT_OK
    code, out2 = run_cli(tmp_path, "run", CONFIGS / "fig6_run.json", "b")
    for name in ("trace.csv", "summary.json"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()
    raw = (out / "trace.csv").read_bytes()
    assert b"\r" not in raw
    assert raw.split(b"\n")[0].decode() == ",".join(TRACE_HEADER)
    summ = json.loads((out / "summary.json").read_text())
    assert summ["tool"] == "memsim" and len(summ["config_hash"]) == 64 and summ["version"]


def test_csv_round_trip_reproduces_metrics(tmp_path):
    code, out = run_cli(tmp_path, "run", CONFIGS / "fig6_run.json")
    summ = json.loads((out / "summary.json").read_text())
    tr = read_trace(out / "trace.csv")
    m = loop_metrics(steady_window(tr, 1e6, 1)).as_dict()
    assert m == summ["metrics"]["loop"]


def test_sweep_rows(tmp_path):
    doc = {"emulator": {}, "source": {"amplitude": 0.14, "frequency": 5e5},
           "sweep": {"frequencies": [5e5, 1e6, 2e6, 4e6, 8e6]}}
    code, out = run_cli(tmp_path, "sweep", doc)
    assert code == EXIT_OK
    rows = np.loadtxt(out / "sweep.csv", delimiter=",", skiprows=1)
    assert rows.shape == (5, 3)
    assert (out / "sweep.csv").read_text().splitlines()[0] == "f_Hz,area_normalized,pinch_residual"


def test_mc_seed_override(tmp_path):
    doc = {"emulator": {"fidelity": "full_ideal"}, "source": {"frequency": 1e6},
           "mc": {"n_runs": 6, "seed": 1}}
    code, a = run_cli(tmp_path, "mc", doc, "a")
    assert code == EXIT_OK
    _, b = run_cli(tmp_path, "mc", doc, "b", "--seed", "2", "--threads", "2")
    ra = np.loadtxt(a / "mc_records.csv", delimiter=",", skiprows=1)
    rb = np.loadtxt(b / "mc_records.csv", delimiter=",", skiprows=1)
    assert ra.shape == (6, 10) and not np.array_equal(ra, rb)
    assert (a / "hist_Vth.csv").exists() and (a / "hist_k.csv").exists()
    ha = json.loads((a / "summary.json").read_text())["config_hash"]
    hb = json.loads((b / "summary.json").read_text())["config_hash"]
    assert ha != hb


def test_exit_codes(tmp_path, monkeypatch):
    bad = {**MINIMAL, "emulator": {"C2": -1}}
    assert run_cli(tmp_path, "run", bad)[0] == EXIT_CONFIG
    assert run_cli(tmp_path, "sweep", MINIMAL)[0] == EXIT_CONFIG
    assert run_cli(tmp_path, "run", tmp_path / "missing.json")[0] == EXIT_IO
    assert run_cli(tmp_path, "run", MINIMAL, "x", "--seed", "3")[0] == EXIT_CONFIG
    huge = {**MINIMAL, "source": {"amplitude": 1e300, "frequency": 1e6}}
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert run_cli(tmp_path, "run", huge)[0] == EXIT_NUMERIC
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run_cli(tmp_path, "run", MINIMAL, "file/sub")[0] == EXIT_IO
    monkeypatch.setenv("MEMSIM_THREADS", "two")
    assert run_cli(tmp_path, "run", MINIMAL)[0] == EXIT_CONFIG


@pytest.mark.parametrize("name,cmd", [("compose_parallel.json", "compose"),
                                      ("compose_series.json", "compose")])
def test_shipped_compose_configs(tmp_path, name, cmd):
    code, out = run_cli(tmp_path, cmd, CONFIGS / name)
    assert code == EXIT_OK
    loop = json.loads((out / "summary.json").read_text())["metrics"]["loop"]
    assert loop["pinch_residual"] < 1e-9
