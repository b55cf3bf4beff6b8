#!/usr/bin/env python3
"""End-to-end checks of the sapphire_bench executable."""

import argparse
import json
import shutil
import subprocess
import sys
from pathlib import Path

import jsonschema


def run(bench, *args, cwd=None):
    return subprocess.run([str(bench), *args], cwd=cwd, capture_output=True, text=True)


def expect(cond, message):
    if not cond:
        raise AssertionError(message)


def fresh(path):
    shutil.rmtree(path, ignore_errors=True)
    path.mkdir(parents=True)
    return path


def write_spec(directory, spec, name="spec.json"):
    path = directory / name
    path.write_text(json.dumps(spec, indent=2))
    return path


def minimal_spec(source):
    spec = json.loads((source / "tools/specs/minimal.json").read_text())
    spec["output_dir"] = "out"
    return spec


def load_schema(source, name):
    return json.loads((source / "tools/schemas" / name).read_text())


def check_selftest(bench, source, work):
    r = run(bench, "selftest")
    expect(r.returncode == 0, f"selftest exited {r.returncode}\n{r.stdout}{r.stderr}")
    expect("4/4 suites passed" in r.stdout, r.stdout)
    expect(r.stdout.count("[PASS]") == 4, r.stdout)


def check_selftest_fault(bench, source, work):
    r = run(bench, "selftest", "--inject-fault", "soft-threshold-sign")
    expect(r.returncode == 1, f"fault run exited {r.returncode}\n{r.stdout}")
    expect("[FAIL] prox-oracle" in r.stdout, r.stdout)
    r = run(bench, "selftest", "--inject-fault", "no-such-fault")
    expect(r.returncode == 2, f"unknown fault exited {r.returncode}")


def check_run_minimal(bench, source, work):
    d = fresh(work / "minimal")
    spec = write_spec(d, minimal_spec(source))
    r = run(bench, "run", str(spec), "--no-timing")
    expect(r.returncode == 0, f"run exited {r.returncode}\n{r.stderr}")
    out = d / "out"
    csvs = sorted(p.name for p in out.glob("*.csv"))
    jsons = sorted(p.name for p in out.glob("*.json"))
    expect(csvs == ["ssn.csv"], f"trace files: {csvs}")
    expect(jsons == ["summary.json"], f"json files: {jsons}")
    header = (out / "ssn.csv").read_text().splitlines()[0]
    expect(header == "stage,passes,seconds,objective,relative_error,grad_map_norm,support_size,apg_iters",
           header)
    summary = json.loads((out / "summary.json").read_text())
    jsonschema.validate(summary, load_schema(source, "summary.schema.json"))
    cell = summary["problems"][0]["solvers"][0]
    expect(cell["status"] == "ok", cell)
    expect(cell["final_relative_error"] <= 1e-9, cell)

    r = run(bench, "compare", str(out))
    expect(r.returncode == 0, f"compare exited {r.returncode}\n{r.stderr}")
    expect((out / "compare.csv").exists(), "compare.csv missing")
    expect("ssn" in r.stdout, r.stdout)


def check_specs_validate(bench, source, work):
    schema = load_schema(source, "experiment.schema.json")
    specs = sorted((source / "tools/specs").glob("*.json"))
    expect(specs, "no example specs")
    for path in specs:
        jsonschema.validate(json.loads(path.read_text()), schema)
    bad = minimal_spec(source)
    bad["solvers"][0]["config"]["bogus"] = 1
    try:
        jsonschema.validate(bad, schema)
    except jsonschema.ValidationError:
        pass
    else:
        raise AssertionError("schema accepted an unknown config key")


def check_missing_dataset(bench, source, work):
    d = fresh(work / "missing")
    spec = minimal_spec(source)
    spec["problem"] = {"name": "gone", "dataset": {"path": "/nonexistent/sapphire/data.svm"}}
    path = write_spec(d, spec)
    r = run(bench, "run", str(path))
    expect(r.returncode == 2, f"exit {r.returncode}\n{r.stderr}")
    expect("/nonexistent/sapphire/data.svm" in r.stderr, r.stderr)


def check_invalid_spec(bench, source, work):
    d = fresh(work / "invalid")
    spec = minimal_spec(source)
    spec["solvers"][0]["config"]["bogus"] = 1
    path = write_spec(d, spec)
    r = run(bench, "run", str(path))
    expect(r.returncode == 2, f"exit {r.returncode}")
    expect("$.solvers[0].config.bogus" in r.stderr, r.stderr)
    r = run(bench, "run", str(path), "--override", "nope=1")
    expect(r.returncode == 2, f"exit {r.returncode}")


def check_compare_empty(bench, source, work):
    d = fresh(work / "empty")
    r = run(bench, "compare", str(d))
    expect(r.returncode == 2, f"exit {r.returncode}\n{r.stderr}")


def check_reproducible(bench, source, work):
    outputs = []
    for tag in ("a", "b"):
        d = fresh(work / f"repro-{tag}")
        spec = minimal_spec(source)
        spec["solvers"].append({"name": "svrg", "method": "prox-svrg"})
        path = write_spec(d, spec)
        r = run(bench, "run", str(path), "--no-timing", "--threads", "2" if tag == "b" else "1")
        expect(r.returncode == 0, f"exit {r.returncode}\n{r.stderr}")
        outputs.append({p.name: p.read_bytes() for p in (d / "out").iterdir() if p.is_file()})
    expect(outputs[0].keys() == outputs[1].keys(), f"{outputs[0].keys()} vs {outputs[1].keys()}")
    for name in outputs[0]:
        expect(outputs[0][name] == outputs[1][name], f"{name} differs between runs")


CHECKS = {
    "selftest": check_selftest,
    "selftest-fault": check_selftest_fault,
    "run-minimal": check_run_minimal,
    "specs-validate": check_specs_validate,
    "missing-dataset": check_missing_dataset,
    "invalid-spec": check_invalid_spec,
    "compare-empty": check_compare_empty,
    "reproducible": check_reproducible,
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--bench", required=True, type=Path)
    ap.add_argument("--source", required=True, type=Path)
    ap.add_argument("--work", required=True, type=Path)
    ap.add_argument("check", choices=sorted(CHECKS))
    args = ap.parse_args()
    try:
        CHECKS[args.check](args.bench, args.source, args.work)
    except AssertionError as e:
        print(f"FAILED {args.check}: {e}", file=sys.stderr)
        return 1
    print(f"ok {args.check}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
