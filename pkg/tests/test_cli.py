from __future__ import annotations

import json

import pytest

from methodloop.cli import ConfigError, RunConfig, load_config, main

GSM8K = [
    {"question": "What is 2+2?", "answer": "add\n#### 4"},
    {"question": "What is 3+3?", "answer": "add\n#### 6"},
    {"question": "What is 5+5?", "answer": "add\n#### 10"},
]


@pytest.fixture
def workspace(tmp_path):
    dataset = tmp_path / "gsm8k.jsonl"
    dataset.write_text("\n".join(json.dumps(r) for r in GSM8K) + "\n", encoding="utf-8")
    script = tmp_path / "script.json"
    entries = []
    for q, a in [("2+2", "4"), ("3+3", "6"), ("5+5", "10")]:
        entries.append({"match": q, "response": "Conclusion"})
        entries.append({"match": q, "response": f"Answer: {a}"})
    script.write_text(json.dumps(entries), encoding="utf-8")
    config = tmp_path / "config.json"
    config.write_text(
        json.dumps(
            {
                "backend": {"script": str(script)},
                "dataset": str(dataset),
                "dataset_format": "gsm8k_jsonl",
                "out_dir": str(tmp_path / "out"),
                "solver_enabled": False,
                "concurrency": 1,
            }
        ),
        encoding="utf-8",
    )
    return tmp_path, config


def test_eval_three_question_scripted_run(workspace, capsys):
    tmp_path, config = workspace
    assert main(["eval", "--config", str(config)]) == 0
    out_dir = tmp_path / "out"
    report = json.loads((out_dir / "report.json").read_text())
    assert report["com"]["count"] == 3
    assert report["com"]["metric_means"]["accuracy"] == 1.0
    assert (out_dir / "traces.jsonl").exists()
    assert (out_dir / "records.jsonl").exists()
    assert (out_dir / "manifest.json").exists()
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["dataset_digest"]
    assert manifest["methodology_digest"]
    assert "strategy=com" in capsys.readouterr().out


def test_eval_rescore_reproduces_report(workspace):
    tmp_path, config = workspace
    assert main(["eval", "--config", str(config)]) == 0
    out_dir = tmp_path / "out"
    first_report = (out_dir / "report.json").read_bytes()
    first_records = (out_dir / "records.jsonl").read_bytes()
    assert main(["eval", "--config", str(config), "--rescore"]) == 0
    assert (out_dir / "report.json").read_bytes() == first_report
    assert (out_dir / "records.jsonl").read_bytes() == first_records


def test_eval_limit_flag(workspace):
    tmp_path, config = workspace
    out2 = tmp_path / "out2"
    assert main(["eval", "--config", str(config), "--limit", "1", "--out", str(out2)]) == 0
    report = json.loads((out2 / "report.json").read_text())
    assert report["com"]["count"] == 1


def test_eval_missing_dataset_errors(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"backend": {"script": "/nope.json"}}), encoding="utf-8")
    assert main(["eval", "--config", str(config)]) == 2
    assert "error:" in capsys.readouterr().err


def test_eval_failure_budget_exceeded(tmp_path, capsys):
    dataset = tmp_path / "d.jsonl"
    dataset.write_text(json.dumps(GSM8K[0]) + "\n" + json.dumps(GSM8K[1]) + "\n", encoding="utf-8")
    script = tmp_path / "s.json"
    # only enough responses for the first question; the second aborts
    script.write_text(json.dumps(["Conclusion", "Answer: 4"]), encoding="utf-8")
    config = tmp_path / "c.json"
    config.write_text(
        json.dumps(
            {
                "backend": {"script": str(script)},
                "dataset": str(dataset),
                "dataset_format": "gsm8k_jsonl",
                "out_dir": str(tmp_path / "out"),
                "solver_enabled": False,
                "concurrency": 1,
            }
        ),
        encoding="utf-8",
    )
    assert main(["eval", "--config", str(config)]) == 1
    assert "exceed budget" in capsys.readouterr().err


def test_run_single_question(workspace, capsys):
    tmp_path, config = workspace
    script = tmp_path / "run_script.json"
    script.write_text(
        json.dumps(["Analysis", "numbers are small", "Conclusion", "Answer: 4"]),
        encoding="utf-8",
    )
    run_config = tmp_path / "run_config.json"
    run_config.write_text(
        json.dumps(
            {
                "backend": {"script": str(script)},
                "solver_enabled": False,
                "out_dir": str(tmp_path / "runout"),
            }
        ),
        encoding="utf-8",
    )
    assert main(["run", "--config", str(run_config), "What is 2+2?"]) == 0
    out = capsys.readouterr().out
    assert "step 1: Analysis" in out
    assert "step 2: Conclusion" in out
    assert "terminated_by=conclusion" in out
    assert (tmp_path / "runout" / "trace.jsonl").exists()


def test_analyze_prints_percentages(workspace, capsys):
    tmp_path, config = workspace
    main(["eval", "--config", str(config)])
    assert main(["analyze", str(tmp_path / "out" / "traces.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "100.0%" in out
    assert "Conclusion" in out


def test_ablate_drop(workspace, capsys):
    tmp_path, config = workspace
    out3 = tmp_path / "out3"
    assert main(["ablate", "--config", str(config), "--drop", "Coding", "--out", str(out3)]) == 0
    traces = (out3 / "traces.jsonl").read_text()
    assert '"Coding"' not in traces


def test_ablate_drop_conclusion_rejected(workspace, capsys):
    tmp_path, config = workspace
    assert main(["ablate", "--config", str(config), "--drop", "Conclusion"]) == 2
    assert "Conclusion" in capsys.readouterr().err


def test_config_validation_messages(tmp_path):
    config = RunConfig()
    with pytest.raises(ConfigError, match="backend"):
        config.validate()
    config.backend.base_url = "http://x"
    with pytest.raises(ConfigError, match="model"):
        config.validate()
    config.backend.model = "m"
    config.methodologies = "/missing.md"
    with pytest.raises(ConfigError, match="methodologies"):
        config.validate()


def test_config_unknown_field(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"mystery": 1}), encoding="utf-8")
    with pytest.raises(ConfigError, match="mystery"):
        load_config(str(path))


def test_config_bad_strategy(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(
        json.dumps({"backend": {"script": __file__}, "strategy": "magic"}), encoding="utf-8"
    )
    assert main(["run", "--config", str(path), "question?"]) == 2
    assert "strategy" in capsys.readouterr().err


def test_config_defaults_mirror_contract():
    config = RunConfig()
    assert config.max_steps == 8
    assert config.sampling.max_tokens == 1024
    assert config.sampling.temperature == 0.2
    assert config.sampling.top_k == 40
    assert config.workflow_sequences["math"] == ["Analysis", "Coding", "Validation", "Conclusion"]
    assert config.workflow_sequences["qa"] == ["Analysis", "Retrieval", "Conclusion"]
