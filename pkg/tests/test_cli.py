import json
import subprocess
import sys

import pandas as pd
import pytest

from tourspend.cli import main
from tourspend.data import parse_attributes, parse_transactions
from tourspend.gravity import GravitySpec, build_gravity_rows, fit_gravity_model
from tourspend.io import sha256_file


def inputs(files):
    return ["--transactions", str(files["transactions"]), "--countries", str(files["countries"]),
            "--pairs", str(files["pairs"]), "--geo", str(files["geo"])]


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def check_manifest(out):
    doc = manifest(out)
    for entry in doc["outputs"]:
        assert sha256_file(out / entry["path"]) == entry["sha256"]
    return doc


def test_validate(synth_files, tmp_path, capsys):
    out = tmp_path / "v"
    assert main(["validate", *inputs(synth_files), "--out-dir", str(out)]) == 0
    report = json.loads((out / "validation.json").read_text())
    assert report["origins"] == 12
    assert report["destinations"] == ["COL", "GRC", "NLD"]
    assert report["origins_without_attributes"] == []
    assert json.loads(capsys.readouterr().out) == report
    doc = check_manifest(out)
    assert doc["command"] == "validate"
    assert doc["inputs"]["transactions"]["sha256"] == sha256_file(synth_files["transactions"])


def test_usage_errors_exit_2(synth_files, tmp_path):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["gravity", *inputs(synth_files)]) == 2  # --dest missing
    assert main(["gravity", *inputs(synth_files), "--dest", "COL", "--spec", "7"]) == 2
    assert main(["origin-space", *inputs(synth_files), "--k", "many"]) == 2


def test_data_errors_exit_1(synth_files, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("origin,dest_country,municipality_id,industry,quarter,usd,txn_count\n"
                   "USA,COL,BOG,Accommodations,2013Q2,-5,1\n")
    assert main(["validate", "--transactions", str(bad), "--out-dir", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["validate", "--transactions", str(tmp_path / "missing.csv"),
                 "--out-dir", str(tmp_path / "o")]) == 1
    assert main(["gravity", *inputs(synth_files), "--dest", "ZZZ", "--out-dir", str(tmp_path / "o")]) == 1


def test_gravity_output_matches_library(synth_files, tmp_path):
    out = tmp_path / "g"
    assert main(["gravity", *inputs(synth_files), "--dest", "NLD", "--spec", "2", "--out-dir", str(out)]) == 0
    doc = json.loads((out / "NLD_spec2.json").read_text())
    cube = parse_transactions(synth_files["transactions"])
    attrs = parse_attributes(synth_files["countries"], synth_files["pairs"])
    fit = fit_gravity_model(build_gravity_rows(cube, attrs, "NLD"), GravitySpec.numbered(2))
    got = {c["name"]: c["estimate"] for c in doc["coefficients"]}
    assert got == fit.coefficients
    table = pd.read_csv(out / "NLD_spec2.csv")
    assert table["term"].tolist()[:6] == ["log(POP)", "log(GDPPC)", "log(D)", "Common Language", "log(F+1)",
                                          "Constant"]
    check_manifest(out)


def test_describe_and_classify(synth_files, tmp_path):
    out = tmp_path / "d"
    assert main(["describe", *inputs(synth_files), "--dest", "COL", "--out-dir", str(out)]) == 0
    ranking = pd.read_csv(out / "COL" / "ranking_municipality.csv")
    assert ranking["share"].sum() == pytest.approx(1.0, abs=1e-9)
    geo = json.loads((out / "COL" / "municipalities.geojson").read_text())
    assert all("balance" in f["properties"] for f in geo["features"])
    check_manifest(out)

    out = tmp_path / "c"
    assert main(["classify", "--transactions", str(synth_files["transactions"]), "--out-dir", str(out)]) == 0
    lines = (out / "classification.csv").read_text().splitlines()
    assert lines[0] == "industry,class,pearson_r,pearson_p,spearman_r,spearman_p,combined_p"
    assert len(lines) == 16
    check_manifest(out)


def test_spaces_commands(synth_files, tmp_path):
    out = tmp_path / "o"
    assert main(["origin-space", *inputs(synth_files), "--k", "2", "--out-dir", str(out)]) == 0
    assert (out / "origin_space.graphml").exists()
    assert (out / "origin_space.dot").read_text().startswith('graph "origin_space"')
    doc = manifest(out)
    assert doc["parameters"]["k"] == 2
    out = tmp_path / "ds"
    assert main(["dest-space", *inputs(synth_files), "--dest", "COL", "--edge-threshold", "0.95",
                 "--out-dir", str(out)]) == 0
    part = pd.read_csv(out / "COL" / "partition.csv")
    assert list(part.columns) == ["municipality_id", "cluster"]
    check_manifest(out)


def test_synth_command(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text("[synth]\nn_origins = 6\nseed = 1\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--config", str(cfg), "--out-dir", str(a)]) == 0
    assert main(["synth", "--config", str(cfg), "--out-dir", str(b), "--seed", "1"]) == 0
    assert (a / "transactions.csv").read_bytes() == (b / "transactions.csv").read_bytes()
    assert manifest(a)["parameters"]["synth"]["n_origins"] == 6
    cfg.write_text("[synth]\nbogus = 1\n")
    assert main(["synth", "--config", str(cfg), "--out-dir", str(a)]) == 1
    cfg.write_text("[synth\n")
    assert main(["synth", "--config", str(cfg), "--out-dir", str(a)]) == 1


def tree_digests(root):
    return {p.relative_to(root).as_posix(): sha256_file(p) for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_deterministic(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[synth]\nn_origins = 14\n\n[params]\nk = 3\nedge_threshold = 0.95\n")
    one, two = tmp_path / "one", tmp_path / "two"
    assert main(["pipeline", "--config", str(cfg), "--seed", "7", "--out-dir", str(one)]) == 0
    assert main(["pipeline", "--config", str(cfg), "--seed", "7", "--out-dir", str(two)]) == 0
    assert tree_digests(one) == tree_digests(two)
    doc = check_manifest(one)
    paths = {e["path"] for e in doc["outputs"]}
    assert {"classify/classification.csv", "gravity/COL_spec1.json", "origin-space/origin_space.graphml",
            "validate/validation.json", "input/transactions.csv"} <= paths
    assert set(tree_digests(one)) == paths | {"manifest.json"}
    # NLD has no common-language pair at this seed, so its extended spec is listed as skipped
    skipped = json.loads((one / "gravity" / "skipped.json").read_text())
    assert "collinear" in skipped["NLD_spec2"]
    three = tmp_path / "three"
    assert main(["pipeline", "--config", str(cfg), "--seed", "8", "--out-dir", str(three)]) == 0
    assert tree_digests(one) != tree_digests(three)


def test_pipeline_needs_inputs(tmp_path):
    cfg = tmp_path / "empty.toml"
    cfg.write_text("[params]\nk = 2\n")
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path / "x")]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tourspend.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("tourspend ")
