import json
import shutil

import pytest

from gradeseg.cli import main
from gradeseg.seeds import derive_seed

SMALL = ["--size", "16", "--n-hgg", "10", "--n-lgg", "5", "--epochs", "2"]


def test_help_documents_overrides(capsys):
    with pytest.raises(SystemExit):
        main(["run", "--help"])
    text = capsys.readouterr().out
    for flag in ("--seed", "--epochs", "--folds", "--size"):
        assert flag in text


def test_generate_default_cohort(tmp_path, capsys):
    assert main(["generate", "-o", str(tmp_path / "a")]) == 0
    lines = (tmp_path / "a" / "cohort" / "manifest.tsv").read_text().splitlines()
    assert len(lines) == 285
    grades = [line.split("\t")[2] for line in lines]
    assert grades.count("HGG") == 210 and grades.count("LGG") == 75
    assert main(["generate", "-o", str(tmp_path / "b")]) == 0
    for rel in ("cohort/manifest.tsv", "config.json", "cohort/subjects/S0284/image.f32"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_resolved_config_records_seed_streams(tmp_path):
    cfg_file = tmp_path / "exp.json"
    cfg_file.write_text(json.dumps({"seed": 17, "n_hgg": 6, "phantom": {"noise_std": 0.05},
                                    "train": {"learning_rate": 0.002}}))
    assert main(["generate", "-o", str(tmp_path / "out"), "-c", str(cfg_file), "--size", "16",
                 "--n-lgg", "5", "--folds", "3"]) == 0
    saved = json.loads((tmp_path / "out" / "config.json").read_text())
    assert saved["seed"] == 17 and saved["n_hgg"] == 6 and saved["n_lgg"] == 5 and saved["folds"] == 3
    assert saved["phantom"]["noise_std"] == 0.05 and saved["phantom"]["image_size"] == 16
    assert saved["train"]["learning_rate"] == 0.002
    assert saved["seeds"] == {s: derive_seed(17, s) for s in ("data", "folds", "init", "batches")}
    assert saved["phantom"]["seed"] == saved["seeds"]["data"]
    assert saved["model"]["seed"] == saved["seeds"]["init"]


def test_bad_config_key(tmp_path, capsys):
    cfg_file = tmp_path / "exp.json"
    cfg_file.write_text(json.dumps({"phantom": {"colour": 1}}))
    assert main(["generate", "-o", str(tmp_path / "x"), "-c", str(cfg_file)]) == 1
    assert "colour" in capsys.readouterr().err


def test_unwritable_output_names_path(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["generate", "-o", str(blocker / "out")]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error:") and str(blocker) in err and "\n" not in err


def test_run_without_cohort(tmp_path, capsys):
    assert main(["run", "-o", str(tmp_path)]) == 1
    assert "gradeseg generate" in capsys.readouterr().err


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    assert main(["generate", "-o", str(out), *SMALL]) == 0
    assert main(["run", "-o", str(out)]) == 0
    return out


def test_run_layout_and_resume(small_run, capsys):
    runs = [p for p in (small_run / "runs").glob("*/*") if p.is_dir()]
    assert len(runs) == 20
    before = {p: p.stat().st_mtime_ns for p in (small_run / "runs").rglob("*.ckpt")}
    assert main(["run", "-o", str(small_run)]) == 0
    assert before == {p: p.stat().st_mtime_ns for p in (small_run / "runs").rglob("*.ckpt")}
    assert (small_run / "folds.tsv").exists()


def test_report_compare_curves(small_run, capsys):
    assert main(["report", "-o", str(small_run)]) == 0
    out = capsys.readouterr().out
    for label in ("LGG vs. Baseline", "HGG vs. Baseline", "HGG/LGG vs. Baseline", "Type-aware vs. Baseline"):
        assert label in out
    assert len(list((small_run / "report" / "curves").glob("*_vs_baseline.svg"))) == 4
    assert main(["compare", "-o", str(small_run), "--variant", "STRATIFIED", "--epoch", "1"]) == 0
    out = capsys.readouterr().out
    assert "epoch 1" in out and out.count("(p=") == 3
    assert main(["curves", "-o", str(small_run), "--variant", "LGG_ONLY"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "epoch,CE,CORE,WHOLE"
    assert (small_run / "report" / "curves" / "lgg_only_vs_baseline_lgg.svg").exists()


def test_report_lists_missing_checkpoints(small_run, tmp_path, capsys):
    broken = tmp_path / "broken"
    shutil.copytree(small_run, broken)
    (broken / "runs" / "HGG_ONLY" / "2" / "epoch_2.ckpt").unlink()
    assert main(["report", "-o", str(broken)]) == 1
    assert "(HGG_ONLY, fold 2, epoch 2)" in capsys.readouterr().err
