import json
import os

import numpy as np
import pytest

from fleetrel.cli import main
from fleetrel.failure_model import case_study_designs, predict_relative_rate, published_model
from fleetrel.trace_model import DENSITIES, LabeledDesign, ServerDesign, write_jsonl

SMALL = {
    "fleet_size": 40,
    "fault_mix": {"socket": 0.05, "channel": 0.05, "bank": 0.1, "row": 0.1, "column": 0.1, "cell": 0.3,
                  "spurious": 0.3},
    "bursts": {
        "socket": {"scale": 30, "minimum": 20},
        "channel": {"scale": 30, "minimum": 20},
        "bank": {"scale": 5, "minimum": 5},
        "row": {"scale": 1, "minimum": 2},
        "column": {"scale": 1, "minimum": 2},
        "cell": {"scale": 3, "minimum": 2},
        "spurious": {"scale": 1, "minimum": 1},
    },
    "dram_max_errors": 500,
    "ssd_servers": 3000,
    "fiber_links": 20,
}


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def manifest(out):
    with open(os.path.join(out, "manifest.json"), encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def fleet(tmp_path_factory):
    base = tmp_path_factory.mktemp("fleet")
    cfg = base / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    out = base / "gen"
    assert main(["generate", "--seed", "7", "--config", str(cfg), "--out", str(out)]) == 0
    return base, out


def test_generate_outputs_and_manifest(fleet):
    _, out = fleet
    for name in ("mem_events.jsonl", "dram_truth.json", "ssd_snapshots.jsonl", "incidents.jsonl",
                 "fiber_tickets.txt", "network_population.json"):
        assert (out / name).exists(), name
    m = manifest(out)
    assert m["status"] == "ok" and m["seed"] == 7 and m["command"] == "generate"
    assert m["inputs"]["--config"]["path"] == "cfg.json"
    assert "paper-2015" in m["builtin_models"]
    assert "timestamp" not in json.dumps(m)


def test_generate_byte_identical(fleet, tmp_path):
    base, out = fleet
    again = tmp_path / "again"
    assert main(["generate", "--seed", "7", "--config", str(base / "cfg.json"), "--out", str(again)]) == 0
    for name in sorted(os.listdir(out)):
        assert read(out / name) == read(again / name), name


def test_generate_seed_changes_output(fleet, tmp_path):
    base, out = fleet
    other = tmp_path / "other"
    main(["generate", "--seed", "8", "--config", str(base / "cfg.json"), "--out", str(other)])
    assert read(out / "mem_events.jsonl") != read(other / "mem_events.jsonl")


def test_missing_seed_is_usage_error(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert "--seed" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["classify", "--input", "x", "--bogus", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_missing_input_file_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["classify", "--input", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert manifest(tmp_path)["status"] == "usage_error"


def test_data_error_exit_one_with_manifest(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"timestamp": 5}\n')
    out = tmp_path / "out"
    assert main(["classify", "--input", str(bad), "--out", str(out)]) == 1
    m = manifest(out)
    assert m["status"] == "error" and "line 1" in m["error"]
    assert "line 1" in capsys.readouterr().err


def test_classify(fleet, tmp_path):
    _, gen = fleet
    out = tmp_path / "cls"
    assert main(["classify", "--input", str(gen / "mem_events.jsonl"), "--out", str(out), "--svg"]) == 0
    lines = (out / "classified.jsonl").read_text().splitlines()
    assert len(lines) == len((gen / "mem_events.jsonl").read_text().splitlines())
    keys = [(json.loads(x)["timestamp"], json.loads(x)["server_id"]) for x in lines]
    assert keys == sorted(keys)
    header = (out / "class_shares.csv").read_text().splitlines()[0]
    assert header == "class,error_fraction,server_fraction"
    assert (out / "class_shares.svg").read_text().startswith("<svg")


def test_classify_json_format(fleet, tmp_path):
    _, gen = fleet
    out = tmp_path / "cls"
    main(["classify", "--input", str(gen / "mem_events.jsonl"), "--out", str(out), "--format", "json"])
    rows = json.loads((out / "class_shares.json").read_text())
    assert sum(r["error_fraction"] for r in rows) == pytest.approx(1.0)


def test_sim_offline_raw_and_classified_inputs(fleet, tmp_path):
    _, gen = fleet
    cls_out = tmp_path / "cls"
    main(["classify", "--input", str(gen / "mem_events.jsonl"), "--out", str(cls_out)])
    runs = []
    for name, src in (("a", cls_out / "classified.jsonl"), ("b", cls_out / "classified.jsonl"),
                      ("raw", gen / "mem_events.jsonl")):
        out = tmp_path / name
        assert main(["sim-offline", "--seed", "3", "--input", str(src), "--out", str(out)]) == 0
        runs.append(out)
    for name in ("offline_result.json", "timeline.csv", "manifest.json"):
        assert read(runs[0] / name) == read(runs[1] / name), name
    a = json.loads((runs[0] / "offline_result.json").read_text())
    raw = json.loads((runs[2] / "offline_result.json").read_text())
    assert a["observed"] == raw["observed"] and a["suppressed"] == raw["suppressed"]


def test_sim_offline_store(fleet, tmp_path):
    _, gen = fleet
    store = tmp_path / "store.jsonl"
    args = ["sim-offline", "--seed", "1", "--input", str(gen / "mem_events.jsonl"), "--fail-prob", "0",
            "--store", str(store)]
    main(args + ["--out", str(tmp_path / "first")])
    assert store.exists() and store.read_text()
    main(args + ["--out", str(tmp_path / "second")])
    second = json.loads((tmp_path / "second" / "offline_result.json").read_text())
    first = json.loads((tmp_path / "first" / "offline_result.json").read_text())
    assert second["suppressed"] >= first["suppressed"]


def test_sim_randomize_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["sim-randomize", "--seed", "5", "--pages", "32", "--steps", "20000", "--out", str(out),
                     "--svg"]) == 0
        outs.append(out)
    for name in ("randomize_result.json", "wear.csv", "wear.svg", "manifest.json"):
        assert read(outs[0] / name) == read(outs[1] / name), name
    res = json.loads((outs[0] / "randomize_result.json").read_text())
    assert res["pages_per_second"] == pytest.approx(776.7, abs=0.1)
    assert res["gini_reduction"] > 0.5


def test_sim_randomize_weights_input(tmp_path):
    w = tmp_path / "w.json"
    w.write_text(json.dumps([10, 1, 1, 1]))
    assert main(["sim-randomize", "--seed", "0", "--input", str(w), "--steps", "1000", "--out",
                 str(tmp_path / "o"), "--format", "json"]) == 0
    assert len(json.loads((tmp_path / "o" / "wear.json").read_text())) == 5
    w.write_text('{"not": "a list"}')
    assert main(["sim-randomize", "--seed", "0", "--input", str(w), "--out", str(tmp_path / "p")]) == 1


def design_file(tmp_path, name, design):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(design.to_dict()))
    return path


def test_predict_prints_rate(tmp_path, capsys):
    d = case_study_designs()
    low = design_file(tmp_path, "low", d["low-end"])
    high = design_file(tmp_path, "high", d["high-end"])
    assert main(["predict", "--design", str(low), "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "0.12"
    assert main(["predict", "--design", str(high), "--compare", str(low), "--rounded", "--out",
                 str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "0.78"
    res = json.loads((tmp_path / "prediction.json").read_text())
    assert res["comparison"]["ratio"] == pytest.approx(6.5)
    assert res["comparison"]["percent_reduction"] == pytest.approx(84.6, abs=0.1)


def test_predict_bad_design_is_data_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"capacity_gb": 4, "density": "3Gb", "chips": 16}))
    assert main(["predict", "--design", str(bad), "--out", str(tmp_path)]) == 1


def test_fit_then_predict_with_fitted_model(tmp_path, capsys):
    rng = np.random.default_rng(0)
    model = published_model()
    rows = []
    for _ in range(3000):
        dens = ["1Gb", "2Gb", "4Gb"][rng.integers(3)]
        chips = int(rng.choice([16, 32, 64]))
        cap = float(rng.choice([c for c in (2, 4, 8, 16) if c <= chips * DENSITIES[dens] / 8]))
        d = ServerDesign(cap, dens, chips, cpu_util_pct=float(rng.uniform(0, 100)),
                         age_years=float(rng.uniform(0, 5)), cpus=int(rng.choice([8, 16, 24])))
        rows.append(LabeledDesign(d, bool(rng.random() < predict_relative_rate(model, d))))
    data = tmp_path / "designs.jsonl"
    write_jsonl(rows, data)
    out = tmp_path / "fit"
    assert main(["fit", "--input", str(data), "--out", str(out)]) == 0
    fitted = json.loads((out / "model.json").read_text())
    assert "Age" in fitted["coefficients"]
    assert (out / "coefficients.csv").read_text().startswith("term,coefficient")
    low = design_file(tmp_path, "low", case_study_designs()["low-end"])
    capsys.readouterr()
    assert main(["predict", "--model", str(out / "model.json"), "--design", str(low), "--out", str(out)]) == 0
    assert 0 < float(capsys.readouterr().out) < 1
    assert "--model" in manifest(out)["inputs"]


def test_ssd(fleet, tmp_path):
    _, gen = fleet
    out = tmp_path / "ssd"
    assert main(["ssd", "--input", str(gen / "ssd_snapshots.jsonl"), "--out", str(out), "--factor", "all",
                 "--svg"]) == 0
    summary = json.loads((out / "ssd_summary.json").read_text())
    assert set(summary["uber"]) <= set("ABCDEF")
    assert (out / "curve_written.csv").exists() and (out / "curve_temperature.svg").exists()
    assert "curve_written" in json.loads((out / "phases.json").read_text())


def test_net(fleet, tmp_path):
    _, gen = fleet
    out = tmp_path / "net"
    assert main(["net", "--input", str(gen), "--out", str(out), "--svg"]) == 0
    report = json.loads((out / "net_report.json").read_text())
    row = report["device_types"]["RSW"]
    assert set(row) == {"i", "n", "r", "mtbi_h", "p75irt_h"}
    assert "vendors" in report and "mtbf_curve" in report
    assert (out / "mtbf_curve.csv").exists() and (out / "mttr_curve.svg").exists()


def test_net_needs_directory(tmp_path):
    f = tmp_path / "x.jsonl"
    f.write_text("")
    with pytest.raises(SystemExit) as exc:
        main(["net", "--input", str(f), "--out", str(tmp_path)])
    assert exc.value.code == 2
