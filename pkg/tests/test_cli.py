import csv
import json

import numpy as np
import pytest

from dualprompt import autodiff as ad
from dualprompt import cli
from dualprompt.data import load_dataset
from dualprompt.datagen import SUITE_SPECS, generate
from dualprompt.gradcheck import run_suite

SMALL_MODEL = {"model_dim": 8, "n_layers": 1, "n_heads": 2, "ff_dim": 8, "text_dim": 8,
               "prompt_dim": 8, "prompt_heads": 2, "prompt_tokens": 12, "vocab_size": 128,
               "max_len": 64}


@pytest.fixture
def dataset(tmp_path):
    spec = {"n": 260, "level": 5.0, "amplitude": 1.0, "noise": 0.2, "event_rate": 0.05,
            "series_id": "tiny", "seed": 4}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert cli.main(["generate", "--spec", str(tmp_path / "spec.json"),
                     "--out", str(tmp_path / "data")]) == 0
    return tmp_path / "data" / "manifest.json"


def write_config(tmp_path, dataset, **overrides):
    cfg = {"dataset": str(dataset), "output_dir": str(tmp_path / "out"),
           "train": {"max_epochs": 2, "patience": 1, "seeds": [1, 2]},
           "model": dict(SMALL_MODEL)}
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_generate_suite_is_complete_and_reproducible(tmp_path, capsys):
    out = tmp_path / "suite"
    assert cli.main(["generate", "--suite", "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == sorted([f"{k}.jsonl" for k in SUITE_SPECS] + ["manifest.json"])
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert cli.main(["generate", "--suite", "--out", str(out)]) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first
    loaded = {s.series_id: s for s in load_dataset(out / "manifest.json")}
    for name, spec in SUITE_SPECS.items():
        assert loaded[name].observations == generate(spec).observations


def test_generate_needs_a_source(capsys):
    assert cli.main(["generate"]) == 1
    assert "--suite" in capsys.readouterr().err


def test_generate_rejects_unknown_spec_field(tmp_path, capsys):
    (tmp_path / "spec.json").write_text('{"n": 10, "noize": 1}')
    assert cli.main(["generate", "--spec", str(tmp_path / "spec.json")]) == 1
    assert "noize" in capsys.readouterr().err


def test_config_validation_lists_every_problem(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({
        "dataset": str(tmp_path / "missing.json"), "extra": 1,
        "train": {"learning_rate": -1, "patience": 30},
        "model": {"model_dim": 10, "n_heads": 4},
    }))
    assert cli.main(["train", "--config", str(path)]) == 1
    err = capsys.readouterr().err
    for needle in ("'extra'", "dataset:", "learning_rate", "patience", "divisible"):
        assert needle in err, needle


def test_missing_dataset_names_field(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {}}))
    assert cli.main(["train", "--config", str(path)]) == 1
    assert "dataset" in capsys.readouterr().err


def test_unknown_model_key_and_capacity(tmp_path, dataset, capsys):
    model = dict(SMALL_MODEL, max_len=20, n_layer=2)
    path = write_config(tmp_path, dataset, model=model)
    assert cli.main(["train", "--config", str(path)]) == 1
    assert "n_layer" in capsys.readouterr().err
    del model["n_layer"]
    path = write_config(tmp_path, dataset, model=model)
    assert cli.main(["train", "--config", str(path)]) == 1
    assert "max_len" in capsys.readouterr().err


def test_train_then_evaluate_reproduces_metrics(tmp_path, dataset):
    path = write_config(tmp_path, dataset, save_predictions=True)
    assert cli.main(["train", "--config", str(path)]) == 0
    out = tmp_path / "out"
    report = json.loads((out / "report-full.json").read_text())
    assert [s["seed"] for s in report["per_seed"]] == [1, 2]
    assert report["mse"] == sum(s["test_mse"] for s in report["per_seed"]) / 2
    for seed_row in report["per_seed"]:
        ckpt = out / "checkpoints" / f"full-seed{seed_row['seed']}.npz"
        assert cli.main(["evaluate", "--config", str(path), "--checkpoint", str(ckpt)]) == 0
        ev = json.loads((out / f"evaluation-full-seed{seed_row['seed']}.json").read_text())
        assert ev["mse"] == seed_row["test_mse"] and ev["mae"] == seed_row["test_mae"]
    with (out / "predictions" / "full-seed1.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0].keys() == {"series_id", "window_start", "step", "prediction", "target"}
    assert {r["step"] for r in rows} == {str(k) for k in range(1, 8)}


def test_output_dir_env_override(tmp_path, dataset, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "elsewhere"))
    path = write_config(tmp_path, dataset, train={"max_epochs": 2, "patience": 1, "seeds": [1],
                                                  "variant": "SEP"})
    assert cli.main(["train", "--config", str(path)]) == 0
    assert (tmp_path / "elsewhere" / "report-sep.json").is_file()
    assert not (tmp_path / "out").exists()


def test_relative_dataset_path(tmp_path, dataset):
    path = write_config(tmp_path, "data/manifest.json")
    assert cli.parse_run_config(json.loads(path.read_text()), tmp_path).dataset == dataset


@pytest.mark.slow
def test_ablate_order_and_byte_identical_reruns(tmp_path, dataset):
    cfg = write_config(tmp_path, dataset, train={"max_epochs": 2, "patience": 1, "seeds": [1]})
    out = tmp_path / "out"
    assert cli.main(["ablate", "--config", str(cfg)]) == 0
    first = (out / "ablation.json").read_bytes(), (out / "ablation.txt").read_bytes()
    assert cli.main(["ablate", "--config", str(cfg)]) == 0
    assert ((out / "ablation.json").read_bytes(), (out / "ablation.txt").read_bytes()) == first
    payload = json.loads(first[0])
    assert payload["order"] == ["FULL", "SEP", "STP", "DP_NTSA", "SPET"]
    header = first[1].decode().splitlines()[0].split()
    assert header == ["metric", "FULL", "SEP", "STP", "DP-NTSA", "SPET"]


def test_sweep_rows_sorted(tmp_path, dataset):
    cfg = write_config(tmp_path, dataset, train={"max_epochs": 2, "patience": 1, "seeds": [1]})
    assert cli.main(["sweep-lookback", "--config", str(cfg), "--lookbacks", "12,6"]) == 0
    rows = json.loads((tmp_path / "out" / "sweep.json").read_text())
    assert [r["lookback"] for r in rows] == [6, 12]
    csv_lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert csv_lines[0] == "lookback,mse,mae" and len(csv_lines) == 3
    assert cli.main(["sweep-lookback", "--config", str(cfg), "--lookbacks", "9"]) == 0
    assert len(json.loads((tmp_path / "out" / "sweep.json").read_text())) == 1
    assert cli.main(["sweep-lookback", "--config", str(cfg), "--lookbacks", "4"]) == 1


def test_gradcheck_reports_pass(capsys):
    assert cli.main(["gradcheck"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 15 and all(line.startswith("PASS") for line in lines)


def test_gradcheck_detects_a_broken_backward(monkeypatch, capsys):
    def leaky_relu_backward(a):
        a = ad.tensor(a)
        mask = a.data > 0
        # forward is correct, the gradient leaks through negative inputs
        return ad._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * (mask + 0.1),))

    monkeypatch.setattr(ad, "relu", leaky_relu_backward)
    failed = [r.name for r in run_suite() if not r.passed]
    assert "relu" in failed
    assert cli.main(["gradcheck"]) == 2
    assert "FAIL" in capsys.readouterr().out
