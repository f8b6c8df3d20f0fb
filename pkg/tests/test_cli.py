import json
import subprocess
import sys

import numpy as np
import pytest

from roadeval.cli import main, substream
from roadeval.imputation import equation_residuals
from roadeval.tensor_io import read_array, read_curve_csv

SUBCOMMANDS = ["toy", "impute", "evaluate", "mi-check", "bench"]


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy") / "data"
    assert main(["toy", "--seed", "7", "--n", "300", "--height", "8", "--width", "8", "--out", str(d)]) == 0
    return d


def run_config(tmp_path, toy_dir, methods, strategies, name="run.json", **extra):
    doc = {"dataset_path": str(toy_dir), "saliency": {m: None for m in methods},
           "strategies": strategies, "output_dir": "out", "seed": 3, **extra}
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


NORETRAIN = {"retrain": False, "n_models": 2, "train": {"epochs": 60}, "eta_grid": [0.0, 0.3, 0.6, 0.9]}


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    assert "--seed" in capsys.readouterr().out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "roadeval", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "evaluate" in r.stdout


def test_substream_is_stable():
    assert substream(1, "a") == substream(1, "a")
    assert substream(1, "a") != substream(1, "b")
    assert substream(1, "a") != substream(2, "a")


def test_toy_files_and_determinism(tmp_path, toy_dir, capsys):
    assert sorted(p.name for p in toy_dir.iterdir()) == sorted(
        ["images.npy", "labels.npy"] + [f"saliency_{k}.npy" for k in ("true", "worst", "rand", "semi", "gauss")])
    again = tmp_path / "again"
    assert main(["toy", "--seed", "7", "--n", "300", "--height", "8", "--width", "8", "--out", str(again)]) == 0
    echo = json.loads(capsys.readouterr().out)
    assert echo["seed"] == 7
    for p in toy_dir.iterdir():
        assert (again / p.name).read_bytes() == p.read_bytes()


def test_toy_seed_from_environment(tmp_path, monkeypatch, toy_dir):
    monkeypatch.setenv("ROAD_SEED", "7")
    out = tmp_path / "env"
    assert main(["toy", "--n", "300", "--height", "8", "--width", "8", "--out", str(out)]) == 0
    assert (out / "images.npy").read_bytes() == (toy_dir / "images.npy").read_bytes()
    monkeypatch.setenv("ROAD_SEED", "seven")
    assert main(["toy", "--n", "3", "--out", str(tmp_path / "bad")]) == 2


def test_toy_rejects_zero(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["toy", "--n", "0", "--out", str(tmp_path / "z")])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_impute_eta_zero_is_identity(tmp_path, toy_dir):
    out = tmp_path / "imp.npy"
    assert main(["impute", "--data", str(toy_dir), "--saliency", "true", "--eta", "0", "--out", str(out)]) == 0
    assert read_array(out).tobytes() == read_array(toy_dir / "images.npy").tobytes()


def test_impute_residuals_without_noise(tmp_path, toy_dir, capsys):
    out, masks = tmp_path / "imp.npy", tmp_path / "masks.npy"
    code = main(["impute", "--data", str(toy_dir), "--saliency", "true", "--strategy", "noisy-linear",
                 "--eta", "0.5", "--noise", "0", "--out", str(out), "--masks-out", str(masks)])
    assert code == 0
    assert "max_residual" in capsys.readouterr().out
    imgs, removed = read_array(out), read_array(masks).astype(bool)
    for i in range(0, 300, 37):
        assert np.abs(equation_residuals(imgs[i], removed[i])).max() < 1e-8


def test_impute_errors(tmp_path, toy_dir):
    assert main(["impute", "--data", str(toy_dir), "--saliency", "sobel", "--eta", "0.5",
                 "--out", str(tmp_path / "x.npy")]) == 2
    assert main(["impute", "--data", str(toy_dir), "--saliency", "true", "--eta", "0.5",
                 "--solver-tol", "1e-30", "--max-iters", "1", "--out", str(tmp_path / "y.npy")]) == 3
    assert main(["impute", "--data", str(tmp_path / "missing"), "--saliency", "true", "--eta", "0.5",
                 "--out", str(tmp_path / "z.npy")]) == 4


def test_evaluate_report(tmp_path, toy_dir):
    strategies = [{**NORETRAIN, "order": "morf"}, {**NORETRAIN, "order": "lerf"}]
    cfg = run_config(tmp_path, toy_dir, ["true", "worst", "rand"], strategies)
    assert main(["evaluate", str(cfg)]) == 0
    out = tmp_path / "out"
    names = {p.name for p in out.iterdir()}
    for s in ("morf_noretrain_linear", "lerf_noretrain_linear"):
        for stem in ("curves", "gamma", "debiased"):
            assert f"{stem}_{s}.csv" in names
        assert f"curves_{s}.svg" in names
    report = json.loads((out / "rankings.json").read_text())
    auc = report["strategies"]["morf_noretrain_linear"]["auc"]
    assert auc["true"] <= auc["worst"]
    assert "lerf_noretrain_linear|morf_noretrain_linear" in report["spearman"]
    table = read_curve_csv(out / "curves_morf_noretrain_linear.csv")
    assert table["eta"].tolist() == [0.0, 0.3, 0.6, 0.9]

    before = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["evaluate", str(cfg)]) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == before


def test_evaluate_jobs_do_not_change_output(tmp_path, toy_dir):
    strategies = [{**NORETRAIN, "order": "morf"}]
    one = run_config(tmp_path, toy_dir, ["true", "gauss"], strategies, name="one.json", plots=False)
    assert main(["evaluate", str(one)]) == 0
    serial = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    doc = json.loads(one.read_text())
    doc["output_dir"] = "out2"
    (tmp_path / "two.json").write_text(json.dumps(doc))
    assert main(["evaluate", str(tmp_path / "two.json"), "--jobs", "2"]) == 0
    assert {p.name: p.read_bytes() for p in (tmp_path / "out2").iterdir()} == serial


def test_single_method_has_no_spearman(tmp_path, toy_dir):
    cfg = run_config(tmp_path, toy_dir, ["true"], [{**NORETRAIN, "order": "morf"}], debias=False, plots=False)
    assert main(["evaluate", str(cfg)]) == 0
    report = json.loads((tmp_path / "out" / "rankings.json").read_text())
    assert "spearman" not in report


def test_evaluate_failure_removes_partial_outputs(tmp_path, toy_dir, monkeypatch):
    import roadeval.cli

    def broken(*args):
        raise roadeval.cli.IoError("disk full")

    monkeypatch.setattr(roadeval.cli, "_plot_curves", broken)
    cfg = run_config(tmp_path, toy_dir, ["true", "worst"], [{**NORETRAIN, "order": "morf"}], debias=False)
    assert main(["evaluate", str(cfg)]) == 4
    assert not (tmp_path / "out").exists()


def test_evaluate_missing_saliency(tmp_path, toy_dir):
    cfg = run_config(tmp_path, toy_dir, ["true", "sobel"], [{**NORETRAIN, "order": "morf"}])
    assert main(["evaluate", str(cfg)]) == 2
    assert not (tmp_path / "out").exists()


def test_evaluate_bad_config(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["evaluate", str(tmp_path / "bad.json")]) == 2
    (tmp_path / "keys.json").write_text(json.dumps({"output_dir": "o", "strategies": [{}], "saliency": {"a": "true"},
                                                    "toy": {}, "colour": 1}))
    assert main(["evaluate", str(tmp_path / "keys.json")]) == 2
    assert main(["evaluate", str(tmp_path / "absent.json")]) == 2


def test_mi_check(capsys):
    assert main(["mi-check", "--n", "200", "--seed", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4 and all(line.endswith("ok") for line in lines)


def test_bench(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--sizes", "10", "--fractions", "0.2,0.5", "--repeats", "5", "--out", str(out)]) == 0
    assert "slope" in capsys.readouterr().out
    assert out.read_text().splitlines()[0] == "size,fraction,n_unknown,seconds"
