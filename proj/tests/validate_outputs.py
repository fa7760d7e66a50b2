"""Schema checks for configs and for the files written by the CLI.

Usage: validate_outputs.py <otafl executable> <repository root> <scratch dir>
"""

import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema
from referencing import Registry, Resource


def load(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def main():
    cli, root, scratch = sys.argv[1], pathlib.Path(sys.argv[2]), pathlib.Path(sys.argv[3])
    shutil.rmtree(scratch, ignore_errors=True)
    scratch.mkdir(parents=True)

    config_schema = load(root / "configs" / "config.schema.json")
    summary_schema = load(root / "configs" / "summary.schema.json")
    registry = Registry().with_resources(
        [
            ("otafl/config.schema.json", Resource.from_contents(config_schema)),
            ("otafl/summary.schema.json", Resource.from_contents(summary_schema)),
        ]
    )
    check_config = jsonschema.Draft202012Validator(config_schema, registry=registry)
    check_summary = jsonschema.Draft202012Validator(summary_schema, registry=registry)

    presets = sorted(p for p in (root / "configs").glob("*.json") if not p.name.endswith(".schema.json"))
    assert presets, "no presets found"
    for p in presets:
        check_config.validate(load(p))

    cfg = load(root / "configs" / "desk.json")
    cfg["system"]["T"] = 3
    cfg["seeds"]["n_replicates"] = 2
    cfg["bound"] = {"report": True, "recursion_mc": 3}
    small = scratch / "small.json"
    small.write_text(json.dumps(cfg), encoding="utf-8")
    check_config.validate(cfg)

    out = scratch / "compare"
    subprocess.run(
        [cli, "compare", "--config", str(small), "--schemes", "jdu,sdu,rbf,ideal", "--out", str(out), "--trace"],
        check=True,
        stdout=subprocess.DEVNULL,
    )
    summary = load(out / "summary.json")
    check_summary.validate(summary)
    assert [s["scheme"] for s in summary["schemes"]] == ["jdu", "sdu", "rbf", "ideal"]
    assert summary["bound"]["admissible"] is True

    raw = (out / "metrics.csv").read_bytes()
    assert raw.startswith(
        b"replicate,round,scheme,global_loss,test_accuracy,h_value,phi_value,min_dl_snr_db,sum_alpha,wall_ms,aborted\n"
    )
    assert b"\r" not in raw
    assert raw.count(b"\n") == 1 + 4 * 2 * 4
    assert (out / "trace.csv").read_text(encoding="utf-8").startswith("replicate,round,scheme,iter,block,phi,step\n")

    report = subprocess.run([cli, "bound", "--config", str(small)], check=True, capture_output=True, text=True)
    wrapped = {"format_version": 1, "config": cfg, "schemes": summary["schemes"], "bound": json.loads(report.stdout)}
    check_summary.validate(wrapped)

    cfg["system"]["antennas"] = 4
    bad = scratch / "bad.json"
    bad.write_text(json.dumps(cfg), encoding="utf-8")
    try:
        check_config.validate(cfg)
        raise AssertionError("schema accepted an unknown key")
    except jsonschema.ValidationError:
        pass
    rc = subprocess.run([cli, "run", "--config", str(bad), "--out", str(scratch / "bad")], capture_output=True).returncode
    assert rc == 2, f"expected exit code 2 for an invalid config, got {rc}"

    shutil.rmtree(scratch, ignore_errors=True)
    print("schema validation passed")


if __name__ == "__main__":
    main()
