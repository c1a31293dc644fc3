import json

import pytest

from hbtm.cli import main

RAW_HEADER = "session,student,activity,start,end,wheel,click,keys\n"

COLUMN_MAP = {
    "session": "session",
    "student_id": "student",
    "activity": "activity",
    "start_time": "start",
    "end_time": "end",
    "mouse_clicks": ["wheel", "click"],
    "keystrokes": "keys",
}


def write_raw_csv(path, rows):
    path.write_text(RAW_HEADER + "".join(r + "\n" for r in rows))


def write_column_map(path):
    path.write_text(json.dumps(COLUMN_MAP))


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture
def generated(tmp_path):
    prefix = tmp_path / "syn"
    code = run([
        "generate", "--traits", 2, "--events", 4, "--time-bins", 3,
        "--interaction-levels", 2, "--traces", 6, "--tokens-per-trace", 8,
        "--seed", 5, "--out-prefix", prefix,
    ])
    assert code == 0
    return prefix


def test_generate_outputs_and_determinism(tmp_path):
    prefix = tmp_path / "a"
    argv = ["generate", "--traits", 3, "--traces", 4, "--tokens-per-trace", 5,
            "--seed", 1, "--out-prefix", prefix]
    outputs = (prefix.with_suffix(".jsonl"),
               tmp_path / "a.schema.json",
               tmp_path / "a.truth.json")
    assert run(argv) == 0
    first = [p.read_bytes() for p in outputs]
    assert run(argv) == 0
    assert [p.read_bytes() for p in outputs] == first
    truth = json.loads(outputs[2].read_text())
    assert truth["config"]["seed"] == 1
    assert len(truth["params"]["theta"]) == 4
    assert len(truth["assignments"]) == 4


def test_generate_default_dims_match_standard_schema(tmp_path):
    prefix = tmp_path / "d"
    assert run(["generate", "--traits", 2, "--traces", 2, "--tokens-per-trace", 3,
                "--seed", 0, "--out-prefix", prefix]) == 0
    schema = json.loads((tmp_path / "d.schema.json").read_text())
    assert len(schema["event_labels"]) == 15
    assert len(schema["time_bin_edges"]) == 8
    assert len(schema["interaction_bin_edges"]) == 6


def test_generate_zero_traces_fails(tmp_path, capsys):
    code = run(["generate", "--traits", 2, "--traces", 0, "--tokens-per-trace", 3,
                "--seed", 0, "--out-prefix", tmp_path / "x"])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip())
    assert "error" in err


def test_fit_and_rerun_byte_identical(tmp_path, generated):
    out = tmp_path / "m.json"
    argv = [
        "fit", "--corpus", generated.with_suffix(".jsonl"),
        "--schema", str(generated) + ".schema.json",
        "--traits", 2, "--sweeps", 12, "--burn-in", 6, "--stride", 2,
        "--seed", 3, "--out", out,
    ]
    assert run(argv) == 0
    first = out.read_bytes()
    assert run(argv) == 0
    assert out.read_bytes() == first
    model = json.loads(out.read_text())
    assert model["config"]["seed"] == 3
    assert model["config"]["traits"] == 2
    assert len(model["posterior"]["theta"]) == 6
    assert len(model["posterior"]["theta"][0]) == 2
    assert len(model["log_joint_trace"]) == 12


def test_fit_rejects_burn_in_past_sweeps(tmp_path, generated, capsys):
    code = run([
        "fit", "--corpus", generated.with_suffix(".jsonl"),
        "--schema", str(generated) + ".schema.json",
        "--traits", 2, "--sweeps", 5, "--burn-in", 5, "--out", tmp_path / "m.json",
    ])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ValueError"


def test_ingest_end_to_end(tmp_path):
    raw = tmp_path / "raw.csv"
    write_raw_csv(raw, [
        "1,s1,Deeds_Es_1_1,0,30,1,1,5",
        "1,s1,TextEditor,40,41.5,0,1,3",
        "1,s2,Aulaweb,0,12,2,0,0",
        "2,s1,Blank,0,700,0,0,20",
        "1,s3,Other,0,0.4,0,0,0",
        "2,s2,Deeds,5,bogus,0,0,0",
    ])
    cmap = tmp_path / "cols.json"
    write_column_map(cmap)
    out_dir = tmp_path / "out"
    code = run(["ingest", "--raw", raw, "--column-map", cmap, "--out-dir", out_dir])
    assert code == 0
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["parsed_rows"] == 6
    assert summary["rejected_rows"] == 1
    assert summary["raw_events"] == 5
    assert summary["tokenized"] == 4
    assert summary["filtered"] == 1
    assert summary["sessions"] == {"1": 2, "2": 1}
    assert summary["dropped_traces"] == ["s3_1"]
    assert summary["config"]["min_duration"] == 1.0
    assert (out_dir / "session_1.jsonl").exists()
    assert (out_dir / "session_2.jsonl").exists()
    rejects = (out_dir / "rejects.csv").read_text().splitlines()
    assert rejects[0] == "row_number,reason"
    assert rejects[1] == "6,bad timestamp"
    schema = json.loads((out_dir / "schema.json").read_text())
    assert len(schema["event_labels"]) == 15


def test_ingest_missing_column_names_it(tmp_path, capsys):
    raw = tmp_path / "raw.csv"
    write_raw_csv(raw, ["1,s1,Deeds,0,30,1,1,5"])
    cmap = tmp_path / "cols.json"
    cmap.write_text(json.dumps({**COLUMN_MAP, "keystrokes": "missing_col"}))
    code = run(["ingest", "--raw", raw, "--column-map", cmap, "--out-dir", tmp_path / "o"])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert "missing_col" in err["detail"]


def test_ingest_rerun_byte_identical(tmp_path):
    raw = tmp_path / "raw.csv"
    write_raw_csv(raw, ["1,s1,Deeds_Es_1_1,0,30,1,1,5", "1,s2,Aulaweb,0,12,2,0,0"])
    cmap = tmp_path / "cols.json"
    write_column_map(cmap)
    out_dir = tmp_path / "out"
    argv = ["ingest", "--raw", raw, "--column-map", cmap, "--out-dir", out_dir]
    names = ("summary.json", "session_1.jsonl", "schema.json", "rejects.csv")
    assert run(argv) == 0
    first = [(out_dir / n).read_bytes() for n in names]
    assert run(argv) == 0
    assert [(out_dir / n).read_bytes() for n in names] == first


def fit_small_model(tmp_path, generated, out_name="model.json"):
    out = tmp_path / out_name
    assert run([
        "fit", "--corpus", generated.with_suffix(".jsonl"),
        "--schema", str(generated) + ".schema.json",
        "--traits", 2, "--sweeps", 12, "--burn-in", 6, "--stride", 2,
        "--seed", 3, "--out", out,
    ]) == 0
    return out


def test_analyze_end_to_end(tmp_path, generated):
    model = fit_small_model(tmp_path, generated)
    grades = tmp_path / "grades.csv"
    grades.write_text(
        "trace_id,SA,SFE,FE\n"
        + "".join(f"trace_{m:04d},{m % 5},{m / 2},{50 + m}\n" for m in range(6))
    )
    out = tmp_path / "report.json"
    argv = ["analyze", "--model", model, "--grades", grades, "--out", out]
    assert run(argv) == 0
    report = json.loads(out.read_text())
    assert report["config"]["threshold"] == 0.05
    assert set(report["ttests"]) == {"SA", "SFE", "FE"}
    assert len(report["correlations"]) == 2 * 3
    assert sorted(report["cluster_labels"]) == sorted(f"trace_{m:04d}" for m in range(6))

    first = out.read_bytes()
    assert run(argv) == 0
    assert out.read_bytes() == first


def test_analyze_disjoint_ids(tmp_path, generated, capsys):
    model = fit_small_model(tmp_path, generated)
    grades = tmp_path / "grades.csv"
    grades.write_text("trace_id,SA,SFE,FE\nnobody,1,1,1\n")
    code = run(["analyze", "--model", model, "--grades", grades, "--out", tmp_path / "r.json"])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert "empty join" in err["detail"]


def test_export_trait_one_based(tmp_path, generated):
    model = fit_small_model(tmp_path, generated)
    out = tmp_path / "trait.csv"
    assert run(["export-trait", "--model", model, "--trait", 2, "--out", out]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config:")
    assert lines[1] == "kind,event_label,bin_index,probability"
    event_rows = [ln for ln in lines if ln.startswith("event,")]
    assert len(event_rows) == 4  # generated corpus has 4 event types
    assert len([ln for ln in lines if ln.startswith("time,")]) == 4 * 3
    assert len([ln for ln in lines if ln.startswith("interaction,")]) == 4 * 2


def test_export_trait_out_of_range(tmp_path, generated, capsys):
    model = fit_small_model(tmp_path, generated)
    code = run(["export-trait", "--model", model, "--trait", 3, "--out", tmp_path / "t.csv"])
    assert code == 1
    assert "trait" in json.loads(capsys.readouterr().err.strip())["detail"]


def test_unknown_flag_is_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        run(["generate", "--traits", 2, "--no-such-flag", 7])
    assert excinfo.value.code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "argument error"


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({
        "traits": 2, "traces": 3, "tokens_per_trace": 4, "seed": 9,
        "out_prefix": str(tmp_path / "from_file"),
    }))
    assert run(["generate", "--config", cfg]) == 0
    assert (tmp_path / "from_file.jsonl").exists()

    # flag overrides the file value
    assert run(["generate", "--config", cfg, "--out-prefix", tmp_path / "flagged"]) == 0
    assert (tmp_path / "flagged.jsonl").exists()
    truth = json.loads((tmp_path / "flagged.truth.json").read_text())
    assert truth["config"]["seed"] == 9
    assert truth["config"]["out_prefix"] == str(tmp_path / "flagged")


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"traits": 2, "bogus_key": 1}))
    code = run(["generate", "--config", cfg])
    assert code == 1
    assert "bogus_key" in json.loads(capsys.readouterr().err.strip())["detail"]
