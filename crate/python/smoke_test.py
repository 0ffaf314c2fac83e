"""Smoke test for the Python extension module.

Build and install the module first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/spatialrl-*.whl

Then run `python python/smoke_test.py` from the repository root. When the CLI
has been built (`cargo build -p spatialrl-cli`, or SPATIALRL_BIN pointing at
the binary), outputs are also compared byte-for-byte with the CLI.
"""

import json
import os
import pathlib
import subprocess
import sys

import jsonschema

import spatialrl

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "cli" / "tests" / "fixtures"
SCHEMAS = ROOT / "docs" / "schemas"


def schema(name):
    return json.loads((SCHEMAS / name).read_text())


def cli_binary():
    path = os.environ.get("SPATIALRL_BIN")
    candidates = [pathlib.Path(path)] if path else [ROOT / "target" / p / "spatialrl" for p in ("debug", "release")]
    return next((c for c in candidates if c.is_file()), None)


def check(name, cond):
    if not cond:
        raise AssertionError(name)
    print(f"ok  {name}")


def main():
    task = (FIXTURES / "four_cubes.json").read_text()
    bedroom = (FIXTURES / "bedroom.json").read_text()
    overlap = (FIXTURES / "bedroom_overlap.txt").read_text()
    dump = (FIXTURES / "four_cubes_dump.jsonl").read_text()
    golden = (FIXTURES / "four_cubes_advantage.golden.jsonl").read_text()

    engine = spatialrl.Engine()
    check("version string", isinstance(spatialrl.__version__, str))

    scored = engine.score(bedroom, overlap)
    check("score total", abs(scored["total"] - 0.86) < 1e-12)
    check("compose total", abs(engine.compose(0.62, 0.98, 0.115, 0.708)["total"] - 0.9454) < 1e-12)

    check("advantage matches golden file", engine.advantage_jsonl(dump) == golden)
    check("advantage accepts parsed groups", engine.advantage_jsonl([json.loads(dump)]) == golden)
    check("rollout matches fixture dump", spatialrl.Engine({"seed": 1}).rollout_jsonl(task) == dump)

    reports = engine.advantage(dump)
    validator = jsonschema.Draft202012Validator(schema("advantage_report.schema.json"))
    check("advantage report schema", all(validator.is_valid(r) for r in reports))
    group_validator = jsonschema.Draft202012Validator(schema("trajectory_group.schema.json"))
    check("trajectory group schema", group_validator.is_valid(engine.rollout(task)))

    # Coordinate-token advantages never increase when the physics weight rises.
    base = spatialrl.Engine({"advantage": {"w_phys": 0.0}}).advantage(dump)[0]
    weighted = spatialrl.Engine({"advantage": {"w_phys": 0.2}}).advantage(dump)[0]
    pairs = [
        (a["advantage"], b["advantage"])
        for ta, tb in zip(base["trajectories"], weighted["trajectories"])
        for a, b in zip(ta["tokens"], tb["tokens"])
        if a["label"]["kind"] == "coord"
    ]
    check("advantage weakly decreasing in w_phys", pairs and all(b <= a + 1e-12 for a, b in pairs))

    trained = engine.train_toy([task], steps=3)
    metric_validator = jsonschema.Draft202012Validator(schema("metric_record.schema.json"))
    records = [trained["baseline"], *trained["log"]]
    check("metric record schema", len(records) == 4 and all(metric_validator.is_valid(r) for r in records))
    check("checkpoint drives rollout", len(engine.rollout(task, trained["params"])["trajectories"]) == 4)

    check("parse stage", spatialrl.parse_rollout("no tags")["stage"] == "no_tags")
    try:
        engine.compose(2.0, 1.0, 0.0, 0.0)
        raise AssertionError("compose accepted render 2.0")
    except spatialrl.InputError:
        check("input errors raise InputError", True)
    try:
        spatialrl.Engine({"group": 1})
        raise AssertionError("group 1 accepted")
    except ValueError:
        check("InputError is a ValueError", True)

    binary = cli_binary()
    if binary is None:
        print("skip CLI comparison: spatialrl binary not built")
    else:
        cli = subprocess.run(
            [binary, "score", "--task", FIXTURES / "bedroom.json", "--rollout", FIXTURES / "bedroom_overlap.txt"],
            capture_output=True,
            text=True,
            check=True,
        )
        check("score_json identical to CLI", engine.score_json(bedroom, overlap) + "\n" == cli.stdout)
        cli = subprocess.run(
            [binary, "advantage", "--dump", FIXTURES / "four_cubes_dump.jsonl", "--w-phys", "0.5"],
            capture_output=True,
            text=True,
            check=True,
        )
        check("advantage_jsonl identical to CLI", spatialrl.Engine({"advantage": {"w_phys": 0.5}}).advantage_jsonl(dump) == cli.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
