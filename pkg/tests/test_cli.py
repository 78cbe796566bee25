import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freelab import cli
from freelab import paths


def _write(tmp_path, cfg, name="cfg.json"):
    f = tmp_path / name
    f.write_text(json.dumps(cfg))
    return f


KESTEN = {"schema_version": 1, "kind": "free-norm", "coefficients": "kesten(2)",
          "params": {"expect": 12 ** 0.5}, "tolerances": {"width": 0.05}}


def test_free_norm_bracket(tmp_path):
    out = tmp_path / "r.jsonl"
    assert cli.main(["run", str(_write(tmp_path, KESTEN)), "--out", str(out)]) == 0
    rec = cli.read_records(out)[0]
    lo, hi = rec["outputs"]["lower"], rec["outputs"]["upper"]
    assert 3.42 <= lo <= 12 ** 0.5 <= hi <= 3.52 and hi - lo <= 0.05
    assert rec["passed"] and rec["schema_version"] == 1 and rec["build_id"].startswith("v")


def test_nb_decomp_example():
    cfg = {"schema_version": 1, "kind": "nb-decomp-check", "coefficients": "random-selfadjoint(2, 1)",
           "params": {"ell": 6}}
    rec = cli.run(cfg)[0]
    assert rec["passed"] and rec["outputs"]["free_residual"] <= 1e-12


def test_weingarten_example():
    cfg = {"schema_version": 1, "kind": "weingarten-check",
           "params": {"k": 2, "N": 8, "samples": 100_000, "specs": 10, "unbalanced": 10, "table_k": 3}}
    rec = cli.run(cfg)[0]
    assert rec["passed"], rec["verdicts"]


@pytest.mark.parametrize("bad", [
    {"schema_version": 1, "kind": "free-norm", "coefficients": "kesten(2)", "extra": 1},
    {"schema_version": 1, "kind": "free-norm", "coefficients": "kesten(2)", "params": {"Q": 1}},
    {"schema_version": 2, "kind": "free-norm", "coefficients": "kesten(2)"},
    {"schema_version": 1, "kind": "no-such-kind"},
    {"schema_version": 1, "kind": "free-norm"},
    {"schema_version": 1, "kind": "free-norm", "coefficients": "kesten(2)", "params": {"seconds": "x"}},
])
def test_schema_rejects(bad):
    with pytest.raises(cli.ConfigError):
        cli.run(bad)


def test_bad_preset_is_structured_error():
    rec = cli.run({"schema_version": 1, "kind": "free-norm", "coefficients": "nope(1)"})[0]
    assert not rec["passed"] and rec["error"]["type"] == "ConfigError"


def test_presets():
    assert cli.parse_preset("kesten(3)").d == 3
    assert cli.parse_preset("random-selfadjoint(2, 7)", d=3).n == 2
    assert cli.parse_preset("bistochastic(3, 1)").n == 3
    assert cli.parse_preset("unitary-tensor(2, 2, 0)").n == 4
    with pytest.raises(cli.ConfigError):
        cli.parse_preset("kesten(1, 2)")


def test_inline_and_file_coefficients(tmp_path):
    a = np.zeros((5, 1, 1))
    a[1:] = 1.0
    inline = {"re": a.tolist()}
    (tmp_path / "c.json").write_text(json.dumps(inline))
    for src in ({"inline": inline}, {"file": "c.json"}):
        cfg = dict(KESTEN, coefficients=src)
        f = _write(tmp_path, cfg)
        rec = cli.run(json.loads(f.read_text()), base=tmp_path)[0]
        assert rec["passed"]


def test_exit_code_tracks_verdicts(tmp_path):
    bad = dict(KESTEN, params={"expect": 3.0})
    assert cli.main(["run", str(_write(tmp_path, bad)), "--out", str(tmp_path / "x")]) == 1
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 2


def test_capacity_cap(monkeypatch):
    cfg = {"schema_version": 1, "kind": "nb-decomp-check", "coefficients": "kesten(2)",
           "params": {"N": 4000, "ell": 2}}
    monkeypatch.setenv("LAB_CAPACITY_MB", "50")
    rec = cli.run(cfg)[0]
    assert rec["error"]["type"] == "CapacityError" and not rec["passed"]


def test_seed_isolation_and_derivation():
    assert cli.derive_seed(0, 0) != cli.derive_seed(0, 1)
    assert cli.derive_seed(5, 3) == cli.derive_seed(5, 3)
    cfg = {"schema_version": 1, "kind": "concentration", "coefficients": "kesten(1)", "seed": 4,
           "params": {"Ns": [20, 40], "samples": 3}, "items": [{}, {}]}
    r0, r1 = cli.run(cfg)
    assert r0["seed"] != r1["seed"]
    assert r0["outputs"]["table"] != r1["outputs"]["table"]


def test_jobs_match_serial():
    cfg = {"schema_version": 1, "kind": "nb-decomp-check", "coefficients": "kesten(2)",
           "params": {"ell": 3}, "items": [{"N": 6}, {"N": 8}]}
    a = cli.run(cfg)
    b = cli.run(cfg, jobs=2)
    assert [x["outputs"] for x in a] == [x["outputs"] for x in b]


def test_replay_identical_and_seed_flag(tmp_path):
    cfg = {"schema_version": 1, "kind": "trace-compare", "coefficients": "kesten(2)",
           "params": {"ell": 2, "ms": [1, 2], "N": 4, "samples": 20}}
    rec = cli.run(cfg)[0]
    res = cli.replay(rec)
    assert res["comparable"] and res["identical"] and res["passed"]
    other = cli.replay(rec, seed=99)
    assert not other["comparable"] and not other["passed"]


def test_diff_outputs_tolerance():
    old = {"table": [{"mc": 1.0, "se": 0.1}]}
    new = {"table": [{"mc": 1.05, "se": 0.1}]}
    assert cli.diff_outputs(old, new, exact=False) == []
    assert cli.diff_outputs(old, new, exact=True)


def test_report_empty_and_census(tmp_path):
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    assert cli.report_csv([], ["lower"]) == "kind,item,seed,config_hash,passed,lower\n"
    rec = cli.run({"schema_version": 1, "kind": "path-census", "params": {"m": 3}})[0]
    text = cli.report_csv([cli.parse(cli.serialize(rec))], ["table"])
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == paths.CENSUS_FIELDS
    ref = tmp_path / "census.csv"
    paths.census_to_csv([r for m in (1, 2, 3) for r in paths.class_census(2, m)], ref)
    assert text == ref.read_text().replace("\r\n", "\n")


def test_norm_vs_n_table():
    rec = cli.run({"schema_version": 1, "kind": "concentration", "coefficients": "kesten(1)",
                   "params": {"Ns": [100, 200, 400], "samples": 4}})[0]
    header, rows = cli.report_rows([rec], ["table"])
    assert {"N", "mean", "std"} <= set(header) and [r[header.index("N")] for r in rows] == [100, 200, 400]
    summary = json.loads(cli.report_json([rec], ["slope"]))
    assert summary["records"] == 1 and summary["columns"][-1] == "slope"


@settings(max_examples=30, deadline=None)
@given(st.recursive(st.none() | st.booleans() | st.integers(-2 ** 60, 2 ** 60)
                    | st.floats(allow_nan=False) | st.text(max_size=8),
                    lambda ch: st.lists(ch, max_size=4) | st.dictionaries(st.text(max_size=5), ch, max_size=4),
                    max_leaves=20))
def test_record_roundtrip_bytes(outputs):
    rec = {"schema_version": 1, "kind": "free-norm", "outputs": outputs}
    line = cli.serialize(rec)
    assert cli.serialize(cli.parse(line)) == line


def test_cli_report_and_replay_commands(tmp_path, capsys):
    out = tmp_path / "r.jsonl"
    cli.main(["run", str(_write(tmp_path, KESTEN)), "--out", str(out)])
    assert cli.main(["replay", str(out)]) == 0
    assert cli.main(["report", str(out), "--select", "lower,upper", "--output", str(tmp_path / "o.csv")]) == 0
    rows = list(csv.reader(open(tmp_path / "o.csv")))
    assert rows[0][-2:] == ["lower", "upper"] and len(rows) == 2
