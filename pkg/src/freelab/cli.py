"""``lab``: config-driven experiment runner with JSON-lines records.

Config (``schema_version`` 1)::

    {"schema_version": 1, "kind": "free-norm", "seed": 0,
     "coefficients": "kesten(2)",
     "params": {...}, "tolerances": {...}, "items": [{...}, ...]}

``coefficients`` is a preset string, ``{"inline": {"re": [...], "im": [...]}}``
or ``{"file": "path.json"}`` (same inline layout, relative to the config).
``items`` lists parameter overrides; each item becomes one record.  Item
seeds are ``derive_seed(seed, index)``: the first 8 bytes (big endian) of
``sha256("freelab:<seed>:<index>")``.

Exit status: 0 when every verdict passes, 1 when some verdict fails or an
item errors, 2 for unusable input.
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import copy
import csv
import hashlib
import io
import json
import math
import os
import re
import subprocess
import sys
import time
from functools import lru_cache
from pathlib import Path

import jsonschema
import numpy as np

from . import starops as so
from .experiments import KINDS, Verdict, capacity_bytes

SCHEMA_VERSION = 1
DEFAULT_CAPACITY_MB = 4096
BASE_COLUMNS = ["kind", "item", "seed", "config_hash", "passed"]


class ConfigError(ValueError):
    pass


class CapacityError(MemoryError):
    pass


# ---------------------------------------------------------------------------
# schema


def _json_type(default):
    if isinstance(default, bool):
        return {"type": "boolean"}
    if isinstance(default, int):
        return {"type": "integer"}
    if isinstance(default, float):
        return {"type": "number"}
    if isinstance(default, str):
        return {"type": "string"}
    if isinstance(default, list):
        return {"type": "array"}
    return {"type": ["number", "null"]}


def config_schema(kind: str) -> dict:
    spec = KINDS[kind]
    obj = lambda d: {"type": "object", "additionalProperties": False,  # noqa: E731
                     "properties": {k: _json_type(v) for k, v in d.items()}}
    coeffs = {"oneOf": [
        {"type": "string"},
        {"type": "object", "additionalProperties": False, "required": ["inline"],
         "properties": {"inline": {"type": "object"}}},
        {"type": "object", "additionalProperties": False, "required": ["file"],
         "properties": {"file": {"type": "string"}}},
    ]}
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["schema_version", "kind"] + (["coefficients"] if spec.needs_coeffs else []),
        "properties": {
            "schema_version": {"const": SCHEMA_VERSION},
            "kind": {"enum": sorted(KINDS)},
            "seed": {"type": "integer", "minimum": 0},
            "description": {"type": "string"},
            "coefficients": coeffs,
            "params": obj(spec.params),
            "tolerances": obj(spec.tolerances),
            "items": {"type": "array", "items": obj(spec.params)},
        },
    }


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg, dict) or cfg.get("kind") not in KINDS:
        raise ConfigError(f"unknown experiment kind {cfg.get('kind') if isinstance(cfg, dict) else cfg!r}")
    try:
        jsonschema.validate(cfg, config_schema(cfg["kind"]))
    except jsonschema.ValidationError as e:
        path = "/".join(map(str, e.absolute_path)) or "<root>"
        raise ConfigError(f"{path}: {e.message}") from None


# ---------------------------------------------------------------------------
# coefficients


_PRESET = re.compile(r"^\s*([a-z-]+)\s*\(([^)]*)\)\s*$")


def parse_preset(text: str, d: int = 2) -> so.CoefficientFamily:
    """``kesten(d)``, ``random-selfadjoint(n, seed)``, ``bistochastic(n, seed)``,
    ``unitary-tensor(m, n, seed)``; ``d`` applies where the preset has none."""
    m = _PRESET.match(text)
    if not m:
        raise ConfigError(f"malformed preset {text!r}")
    name = m.group(1)
    try:
        args = [int(a) for a in m.group(2).split(",") if a.strip()]
    except ValueError:
        raise ConfigError(f"preset arguments must be integers: {text!r}") from None
    table = {
        "kesten": (1, lambda a: so.kesten(a[0])),
        "random-selfadjoint": (2, lambda a: so.random_selfadjoint(d, a[0], seed=a[1])),
        "bistochastic": (2, lambda a: so.bistochastic(d, a[0], seed=a[1])),
        "unitary-tensor": (3, lambda a: so.unitary_tensor(d, a[0], a[1], seed=a[2])),
    }
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(table)}")
    arity, make = table[name]
    if len(args) != arity:
        raise ConfigError(f"preset {name} takes {arity} argument(s)")
    return make(args)


def _inline(obj: dict) -> so.CoefficientFamily:
    try:
        a = np.asarray(obj["re"], dtype=float)
        if "im" in obj:
            a = a + 1j * np.asarray(obj["im"], dtype=float)
        return so.CoefficientFamily(a)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"bad inline coefficients: {e}") from None


def load_coefficients(src, base: Path | None = None, d: int = 2):
    if src is None:
        return None
    if isinstance(src, str):
        return parse_preset(src, d)
    if "inline" in src:
        return _inline(src["inline"])
    path = Path(src["file"])
    if base is not None and not path.is_absolute():
        path = base / path
    try:
        return _inline(json.loads(path.read_text()))
    except OSError as e:
        raise ConfigError(f"cannot read coefficients: {e}") from None


# ---------------------------------------------------------------------------
# records


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def serialize(record: dict) -> str:
    """One JSON line; key order is kept so tables retain their column order."""
    return json.dumps(record, separators=(",", ":"), allow_nan=True)


def parse(line: str) -> dict:
    return json.loads(line)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()[:16]


def derive_seed(master: int, index: int) -> int:
    return int.from_bytes(hashlib.sha256(f"freelab:{master}:{index}".encode()).digest()[:8], "big")


@lru_cache(maxsize=1)
def build_id() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        ver = version("artifact")
    except PackageNotFoundError:
        ver = "0"
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                              text=True, timeout=5, cwd=Path(__file__).resolve().parent).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"v{ver}-{desc}" if desc else f"v{ver}"


def jsonable(x):
    """Plain JSON types (complex as ``[re, im]``, fractions as strings)."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, Verdict):
        return jsonable(x.to_dict())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if x is None or isinstance(x, str):
        return x
    return str(x)


def capacity_limit() -> int:
    mb = os.environ.get("LAB_CAPACITY_MB")
    try:
        return int(float(mb) * 2 ** 20) if mb else DEFAULT_CAPACITY_MB * 2 ** 20
    except ValueError:
        raise ConfigError(f"LAB_CAPACITY_MB must be a number, got {mb!r}") from None


def expand(cfg: dict) -> list:
    """Effective per-item configs (defaults filled, ``items`` merged)."""
    spec = KINDS[cfg["kind"]]
    base = {k: v for k, v in cfg.items() if k not in ("items", "description")}
    base["seed"] = cfg.get("seed", 0)
    params = dict(spec.params)
    params.update(cfg.get("params", {}))
    tol = dict(spec.tolerances)
    tol.update(cfg.get("tolerances", {}))
    out = []
    for over in cfg.get("items") or [{}]:
        item = copy.deepcopy(base)
        item["params"] = {**params, **over}
        item["tolerances"] = tol
        out.append(item)
    return out


def run_item(cfg: dict, seed: int, index: int = 0, master_seed: int | None = None,
             base: Path | None = None) -> dict:
    """Execute one effective config and return its record (errors are captured)."""
    spec = KINDS[cfg["kind"]]
    t0 = time.perf_counter()
    outputs, verdicts, error = {}, [], None
    try:
        P = cfg["params"]
        coeffs = load_coefficients(cfg.get("coefficients"), base, P.get("d", 2))
        n = coeffs.n if coeffs is not None else 1
        d = coeffs.d if coeffs is not None else P.get("d", 2)
        need = capacity_bytes(cfg["kind"], P, n, d)
        if need > capacity_limit():
            raise CapacityError(f"estimated {need / 2 ** 20:.0f} MB exceeds LAB_CAPACITY_MB")
        outputs, verdicts = spec.fn(coeffs, P, cfg["tolerances"], seed)
    except (ConfigError, CapacityError, ValueError, np.linalg.LinAlgError, RuntimeError,
            MemoryError, ArithmeticError) as e:
        error = {"type": type(e).__name__, "message": str(e)}
        verdicts = [Verdict("completed", False)]
    rec = {
        "schema_version": SCHEMA_VERSION,
        "kind": cfg["kind"],
        "config": cfg,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.get("seed", 0) if master_seed is None else master_seed,
        "item": index,
        "seed": seed,
        "build_id": build_id(),
        "exact": spec.exact,
        "wall_time": time.perf_counter() - t0,
        "outputs": outputs,
        "verdicts": verdicts,
        "passed": error is None and all(v.passed for v in verdicts),
        "error": error,
    }
    return jsonable(rec)


def _run_star(args):
    return run_item(*args)


def run(cfg: dict, seed: int | None = None, jobs: int = 1, base: Path | None = None) -> list:
    """Validate, expand and execute a config; returns the records in item order."""
    validate_config(cfg)
    master = cfg.get("seed", 0) if seed is None else seed
    cfg = {**cfg, "seed": master}
    items = expand(cfg)
    tasks = [(item, derive_seed(master, i), i, master, base) for i, item in enumerate(items)]
    if jobs > 1 and len(tasks) > 1:
        with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_star, tasks))
    return [_run_star(t) for t in tasks]


# ---------------------------------------------------------------------------
# replay


def _flatten(obj, prefix="") -> dict:
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}{k}."))
    elif isinstance(obj, list) and obj and all(isinstance(r, dict) for r in obj):
        for i, r in enumerate(obj):
            out.update(_flatten(r, f"{prefix}{i}."))
    else:
        out[prefix[:-1]] = obj
    return out


def diff_outputs(old: dict, new: dict, exact: bool, rtol: float = 1e-8) -> list:
    """Mismatching leaves; inexact pipelines allow the stored ``se`` (or ``rtol``)."""
    a, b = _flatten(old), _flatten(new)
    bad = []
    for key in sorted(set(a) | set(b)):
        x, y = a.get(key), b.get(key)
        if x == y or (isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y)):
            continue
        num = isinstance(x, (int, float)) and isinstance(y, (int, float)) and \
            not isinstance(x, bool) and not isinstance(y, bool)
        if num and not exact:
            se = a.get(key.rsplit(".", 1)[0] + ".se") if "." in key else None
            allow = max(rtol * max(1.0, abs(x)), se if isinstance(se, (int, float)) else 0.0)
            if abs(x - y) <= allow:
                continue
        bad.append({"key": key, "stored": x, "replayed": y})
    return bad


def replay(record: dict, seed: int | None = None, base: Path | None = None) -> dict:
    """Re-execute a record's config; a different master seed is not comparable."""
    master = record["master_seed"] if seed is None else seed
    comparable = master == record["master_seed"]
    item_seed = derive_seed(master, record["item"])
    cfg = dict(record["config"], seed=master)
    new = run_item(cfg, item_seed, record["item"], master, base)
    mism = diff_outputs(record["outputs"], new["outputs"], record["exact"]) if comparable else []
    return {"comparable": comparable, "identical": comparable and new["outputs"] == record["outputs"],
            "mismatches": mism, "passed": comparable and not mism and new["passed"] == record["passed"],
            "record": new}


# ---------------------------------------------------------------------------
# report


def read_records(path) -> list:
    with open(path) as fh:
        return [parse(line) for line in fh if line.strip()]


def _get(obj, dotted: str):
    for part in dotted.split("."):
        if not isinstance(obj, dict) or part not in obj:
            return None
        obj = obj[part]
    return obj


def _is_table(v) -> bool:
    return isinstance(v, list) and bool(v) and all(isinstance(r, dict) for r in v)


def report_rows(records: list, select: list) -> tuple:
    """Header and rows for CSV output.

    Selecting exactly one table key yields that table's own columns (one row
    per table row); otherwise each record is one row of base columns plus the
    selected outputs, with a selected table exploded into extra columns.
    """
    tables = [k for k in select if any(_is_table(_get(r["outputs"], k)) for r in records)]
    scalars = [k for k in select if k not in tables]
    if len(tables) > 1:
        raise ConfigError("select at most one table key")
    if tables and not scalars:
        key = tables[0]
        header = []
        for r in records:
            for row in _get(r["outputs"], key) or []:
                header += [c for c in row if c not in header]
        rows = [[row.get(c) for c in header] for r in records for row in _get(r["outputs"], key) or []]
        return header, rows
    header = BASE_COLUMNS + scalars
    if not tables:
        return header, [[r.get(c) for c in BASE_COLUMNS] + [_get(r["outputs"], k) for k in scalars]
                        for r in records]
    key = tables[0]
    tcols = []
    for r in records:
        for row in _get(r["outputs"], key) or []:
            tcols += [c for c in row if c not in tcols]
    rows = []
    for r in records:
        head = [r.get(c) for c in BASE_COLUMNS] + [_get(r["outputs"], k) for k in scalars]
        for row in _get(r["outputs"], key) or []:
            rows.append(head + [row.get(c) for c in tcols])
    return header + tcols, rows


def _cell(v):
    if isinstance(v, (dict, list)):
        return canonical(v)
    return v


def report_csv(records: list, select: list) -> str:
    header, rows = report_rows(records, select)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def report_json(records: list, select: list) -> str:
    by_kind = {}
    for r in records:
        k = by_kind.setdefault(r["kind"], {"records": 0, "passed": 0})
        k["records"] += 1
        k["passed"] += bool(r["passed"])
    header, rows = report_rows(records, select) if select else ([], [])
    summary = {"records": len(records), "passed": sum(bool(r["passed"]) for r in records),
               "by_kind": by_kind, "columns": header, "rows": rows}
    return json.dumps(jsonable(summary), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# entry point


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from None


def _emit(text: str, out: str | None, append: bool = False) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "a" if append else "w") as fh:
            fh.write(text)


def _summary_line(rec: dict) -> str:
    tag = "PASS" if rec["passed"] else "FAIL"
    detail = ", ".join(f"{v['name']}={'ok' if v['passed'] else 'fail'}" for v in rec["verdicts"])
    if rec.get("error"):
        detail = f"{rec['error']['type']}: {rec['error']['message']}"
    return f"{tag} {rec['kind']}[{rec['item']}] {detail}\n"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lab", description="Run and report freelab experiments.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="execute a config and append JSON-lines records")
    r.add_argument("config")
    r.add_argument("--out", help="records file (appended); stdout when omitted")
    r.add_argument("--seed", type=int, help="override the master seed")
    r.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("replay", help="re-execute stored records and diff the outputs")
    p.add_argument("record", help="JSON-lines file holding one or more records")
    p.add_argument("--seed", type=int, help="replay with another master seed (not comparable)")
    p.add_argument("--index", type=int, help="replay only this line (0-based)")
    q = sub.add_parser("report", help="flatten records into CSV or a JSON summary")
    q.add_argument("records")
    q.add_argument("--format", choices=["csv", "json"], default="csv")
    q.add_argument("--select", default="", help="comma-separated output keys (dotted)")
    q.add_argument("--output", help="write here instead of stdout")
    a = ap.parse_args(argv)
    try:
        if a.cmd == "run":
            cfg = _load_json(a.config)
            recs = run(cfg, a.seed, a.jobs, Path(a.config).resolve().parent)
            _emit("".join(serialize(x) + "\n" for x in recs), a.out, append=True)
            for x in recs:
                sys.stderr.write(_summary_line(x))
            return 0 if all(x["passed"] for x in recs) else 1
        if a.cmd == "replay":
            recs = read_records(a.record)
            if a.index is not None:
                recs = [recs[a.index]]
            ok = True
            for rec in recs:
                res = replay(rec, a.seed, Path(a.record).resolve().parent)
                res.pop("record")
                sys.stdout.write(canonical(jsonable(res)) + "\n")
                ok &= res["passed"]
            return 0 if ok else 1
        recs = read_records(a.records) if os.path.getsize(a.records) else []
        select = [s for s in a.select.split(",") if s]
        text = report_csv(recs, select) if a.format == "csv" else report_json(recs, select)
        _emit(text, a.output)
        return 0
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        sys.stderr.write(f"lab: error: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
