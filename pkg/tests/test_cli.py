import json
import zipfile

import numpy as np
import pytest

from cl4st.cli import main
from cl4st.data import DENSITY_CLASSES
from cl4st.harness import RunConfig, ConfigError, validate_report

TINY_MODEL = {"d": 4, "d_s": 8, "d_t": 8, "d_z": 4, "D": 4, "K_spatial": 2,
              "gin_d1": 4, "gin_hidden": 8, "phi_hidden": 16, "psi_hidden": 8,
              "decoder_hidden": 16, "proj_dim": 8}


def write_config(path, data_dir, out, **over):
    cfg = {"data": {"kind": "traffic_graph", "path": str(data_dir), "t_in": 6, "t_out": 3},
           "model": dict(TINY_MODEL),
           "train": {"max_epochs": 2, "seed": 0, "batch_size": 8},
           "output_dir": str(out)}
    for key, value in over.items():
        cfg[key] = {**cfg.get(key, {}), **value} if isinstance(value, dict) else value
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth") / "data"
    assert main(["synth", "--out", str(d), "--nodes", "8", "--steps", "240", "--seed", "1"]) == 0
    return d


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "cfg.json", synth_dir, root / "out")
    assert main(["train", "--config", str(cfg)]) == 0
    return cfg, root / "out"


def test_missing_dataset_path(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", tmp_path / "nowhere", tmp_path / "o")
    assert main(["train", "--config", str(cfg)]) == 2
    assert str(tmp_path / "nowhere") in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"data": {"kind": "video", "path": "x"}}))
    assert main(["train", "--config", str(p)]) == 2
    assert "kind" in capsys.readouterr().err


def test_train_writes_artifacts(trained):
    _, out = trained
    for name in ("best.ckpt", "log.ndjson", "report.json"):
        assert (out / name).exists()
    rows = [json.loads(l) for l in (out / "log.ndjson").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 1]
    assert {"train_loss", "val_mae", "val_rmse", "val_mape", "lr",
            "lambda1", "lambda2", "lambda3"} <= set(rows[0])
    report = json.loads((out / "report.json").read_text())
    validate_report(report)
    assert report["variant"] == "full"
    assert len(report["metrics"]["per_horizon"]["mae"]) == 3


def test_same_seed_reproduces_metrics(trained, tmp_path):
    cfg, out = trained
    raw = json.loads(cfg.read_text())
    raw["output_dir"] = str(tmp_path / "again")
    (tmp_path / "c.json").write_text(json.dumps(raw))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 0
    a = json.loads((out / "report.json").read_text())
    b = json.loads((tmp_path / "again" / "report.json").read_text())
    assert a["metrics"] == b["metrics"]


def test_env_seed_override(tmp_path, monkeypatch, synth_dir):
    cfg = write_config(tmp_path / "c.json", synth_dir, tmp_path / "o")
    monkeypatch.setenv("CL4ST_SEED", "17")
    assert RunConfig.from_file(cfg).train.seed == 17


def test_evaluate_missing_rates(trained, synth_dir, tmp_path):
    _, out = trained
    ckpt = str(out / "best.ckpt")
    assert main(["evaluate", "--ckpt", ckpt, "--data", str(synth_dir),
                 "--out", str(tmp_path / "plain.json")]) == 0
    assert main(["evaluate", "--ckpt", ckpt, "--data", str(synth_dir), "--missing-rate", "0",
                 "--out", str(tmp_path / "zero.json")]) == 0
    assert main(["evaluate", "--ckpt", ckpt, "--data", str(synth_dir), "--missing-rate", "0.5",
                 "--seed", "3", "--out", str(tmp_path / "half.json")]) == 0
    plain, zero, half = (json.loads((tmp_path / f"{n}.json").read_text())
                         for n in ("plain", "zero", "half"))
    assert plain["metrics"] == zero["metrics"]
    assert half["metrics"]["mae"] > plain["metrics"]["mae"]
    train_report = json.loads((out / "report.json").read_text())
    assert plain["metrics"]["mae"] == train_report["metrics"]["mae"]


def test_evaluate_shape_mismatch(trained, tmp_path):
    _, out = trained
    other = tmp_path / "other"
    assert main(["synth", "--out", str(other), "--nodes", "5", "--steps", "120"]) == 0
    assert main(["evaluate", "--ckpt", str(out / "best.ckpt"), "--data", str(other)]) == 2


def test_density_bins_on_grid(tmp_path):
    data = tmp_path / "grid"
    assert main(["synth", "--out", str(data), "--grid", "3x4", "--steps", "160"]) == 0
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "o",
                       data={"kind": "crime_grid", "t_in": 7, "t_out": 1},
                       train={"max_epochs": 1})
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["evaluate", "--ckpt", str(tmp_path / "o" / "best.ckpt"), "--data", str(data),
                 "--density-bins"]) == 0
    report = json.loads((tmp_path / "o" / "eval_report.json").read_text())
    classes = report["metrics"]["per_density_class"]
    assert list(classes) == list(DENSITY_CLASSES)
    assert len(classes) == 4
    assert sum(c["n_nodes"] for c in classes.values()) == 12
    assert main(["export", "--ckpt", str(tmp_path / "o" / "best.ckpt"), "--what",
                 "augmentations", "--sample", "0"]) == 0
    from PIL import Image
    img = Image.open(tmp_path / "o" / "export_augmentations_0" / "augment_spatial_grid.png")
    assert img.size == (4, 3)


def test_ablate_variants(synth_dir, tmp_path):
    cfg = write_config(tmp_path / "c.json", synth_dir, tmp_path / "abl", train={"max_epochs": 1})
    assert main(["ablate", "--config", str(cfg), "--variant", "wo_gcl"]) == 0
    report = json.loads((tmp_path / "abl" / "wo_gcl" / "report.json").read_text())
    assert report["variant"] == "wo_gcl"
    validate_report(report)
    with zipfile.ZipFile(tmp_path / "abl" / "wo_gcl" / "best.ckpt") as zf:
        names = zf.namelist()
    assert not any("generator" in n for n in names)
    assert any(n.startswith("params/encoder") for n in names)


def test_unknown_variant(synth_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", synth_dir, tmp_path / "o")
    with pytest.raises(SystemExit):
        main(["ablate", "--config", str(cfg), "--variant", "wo_everything"])
    with pytest.raises(ConfigError):
        RunConfig.from_file(cfg).with_variant("wo_everything")


def test_export_attention(trained, tmp_path):
    _, out = trained
    dest = tmp_path / "att"
    assert main(["export", "--ckpt", str(out / "best.ckpt"), "--what", "attention",
                 "--sample", "2", "--out", str(dest)]) == 0
    csvs = sorted(dest.glob("*.csv"))
    # 2 spatial heads x 2 layers + 1 temporal head x 2 layers
    assert len(csvs) == 6 and len(list(dest.glob("*.png"))) == 6
    for p in csvs:
        a = np.loadtxt(p, delimiter=",")
        assert np.allclose(a.sum(1), 1.0, atol=1e-6)


def test_export_out_of_range(trained, capsys):
    _, out = trained
    assert main(["export", "--ckpt", str(out / "best.ckpt"), "--what", "attention",
                 "--sample", "100000"]) == 2
    assert "out of range" in capsys.readouterr().err


def test_synth_csv(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d"), "--nodes", "4", "--steps", "50",
                 "--csv"]) == 0
    assert (tmp_path / "d" / "signals.csv").exists()
