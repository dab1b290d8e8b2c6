import hashlib
import json
import os

import numpy as np
import pytest
import yaml

from cytoarch import cli

MINI_CONFIG = {
    "n_sections": 2,
    "synth": {
        "width": 520,
        "height": 520,
        "background_level": 230,
        "noise_std": 8,
        "resolution_um": 0.5,
        "seed": 17,
        "populations": [
            {
                "count": 150,
                "mean_size": 6.0,
                "size_spread": 1.0,
                "orientation_kappa": 0.0,
                "eccentricity": 0.7,
                "intensity_mean": 45,
                "intensity_spread": 8,
            },
            {
                "count": 80,
                "mean_size": 6.0,
                "size_spread": 1.0,
                "orientation_mean_deg": -30.0,
                "orientation_kappa": 8.0,
                "eccentricity": 0.7,
                "intensity_mean": 45,
                "intensity_spread": 8,
                "polygon": [[120, 120], [400, 120], [400, 400], [120, 400]],
                "structure": "zone",
            },
        ],
    },
    "kmeans": {"k": 32, "min_cluster": 2, "init_sample": 1500, "chunk_size": 500, "n_passes": 3},
    "dm": {"epsilon": -1, "n_evecs": 12, "m": 10},
    "regional": {"tile_side": 130, "train_stride": 130, "map_stride": 65, "min_cells": 5},
    "boost": {"rounds": 30},
}


def write_config(tmp_dir, out_dir):
    data = dict(MINI_CONFIG)
    data["paths"] = {"out_dir": out_dir}
    path = os.path.join(tmp_dir, "config.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh)
    return path


def run_pipeline(cfg_path):
    for step in ["synth", "segment", "kmeans", "dmfit", "embed", "regionize", "train", "eval"]:
        rc = cli.main([step, "--config", cfg_path])
        assert rc == 0, f"step {step} failed"


def tree_hashes(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            p = os.path.join(dirpath, name)
            rel = os.path.relpath(p, root)
            out[rel] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return out


@pytest.fixture(scope="module")
def pipeline_out(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    out_dir = str(tmp / "out")
    cfg_path = write_config(str(tmp), out_dir)
    run_pipeline(cfg_path)
    return out_dir, cfg_path


def test_end_to_end_artifacts(pipeline_out):
    out_dir, cfg_path = pipeline_out
    for rel in [
        "sections/s000.png", "sections/s001.png",
        "segments/s000.ndjson", "representatives.bin", "dm_model.bin",
        "celldb.bin", "grid.json", "regions.bin",
        "models/zone.json", "eval/zone_auc.csv", "eval/zone_roc.png",
        "manifests/synth.json", "manifests/train.json",
    ]:
        assert os.path.exists(os.path.join(out_dir, rel)), f"missing {rel}"
    with open(os.path.join(out_dir, "eval", "zone_auc.csv")) as fh:
        header, row = fh.read().strip().split("\n")
    assert header.startswith("structure,auc")
    auc = float(row.split(",")[1])
    assert 0.0 <= auc <= 1.0


def test_probmap_and_explain_artifacts(pipeline_out):
    out_dir, cfg_path = pipeline_out
    assert cli.main(["probmap", "--config", cfg_path]) == 0
    assert cli.main(["explain", "--config", cfg_path]) == 0
    pm_json = os.path.join(out_dir, "probmaps", "zone_s001.json")
    assert os.path.exists(pm_json)
    assert os.path.exists(os.path.join(out_dir, "probmaps", "zone_s001.png"))
    payload = json.load(open(pm_json))
    assert payload["kind"] == "probability_map"
    assert all(0.0 <= p <= 1.0 for p in payload["probabilities"])
    exp = os.path.join(out_dir, "explain")
    assert os.path.exists(os.path.join(exp, "zone_importance.csv"))
    assert os.path.exists(os.path.join(exp, "zone_s001_rotation_angle_overlay.png"))
    assert os.path.exists(os.path.join(exp, "zone_s001_rotation_angle_cdf.csv"))
    assert os.path.exists(os.path.join(exp, "zone_s001_rotation_angle_cdf.png"))


def test_rerun_is_byte_identical(pipeline_out):
    out_dir, cfg_path = pipeline_out
    before = tree_hashes(out_dir)
    run_pipeline(cfg_path)
    after = tree_hashes(out_dir)
    assert before == after


def test_missing_upstream_exits_3(tmp_path, capsys):
    out_dir = str(tmp_path / "fresh")
    cfg_path = write_config(str(tmp_path), out_dir)
    rc = cli.main(["regionize", "--config", cfg_path])
    err = capsys.readouterr().err
    assert rc == 3
    assert "cytoarch" in err  # names the prior command to run


def test_no_sections_exits_3(tmp_path, capsys):
    out_dir = str(tmp_path / "empty")
    os.makedirs(out_dir)
    cfg_path = write_config(str(tmp_path), out_dir)
    rc = cli.main(["segment", "--config", cfg_path])
    assert rc == 3
    assert "synth" in capsys.readouterr().err


def test_validation_error_exits_2(tmp_path, capsys):
    out_dir = str(tmp_path / "bad")
    cfg_path = write_config(str(tmp_path), out_dir)
    rc = cli.main(["synth", "--config", cfg_path, "--set", "n_sections=0"])
    assert rc == 2
    assert "n_sections" in capsys.readouterr().err


def test_align_without_reference_exits_2(tmp_path, capsys):
    out_dir = str(tmp_path / "noref")
    cfg_path = write_config(str(tmp_path), out_dir)
    rc = cli.main(["align", "--config", cfg_path])
    assert rc == 2
    assert "reference" in capsys.readouterr().err.lower()


def test_set_overrides_apply(tmp_path):
    out_dir = str(tmp_path / "ovr")
    cfg_path = write_config(str(tmp_path), out_dir)
    rc = cli.main(["synth", "--config", cfg_path, "--set", "n_sections=1",
                   "--set", "synth.width=260", "--set", "synth.height=240"])
    assert rc == 0
    from PIL import Image

    img = Image.open(os.path.join(out_dir, "sections", "s000.png"))
    assert img.size == (260, 240)
    assert not os.path.exists(os.path.join(out_dir, "sections", "s001.png"))


def test_out_flag_overrides_config(tmp_path):
    cfg_path = write_config(str(tmp_path), str(tmp_path / "ignored"))
    other = str(tmp_path / "actual")
    rc = cli.main(["synth", "--config", cfg_path, "--out", other, "--set", "n_sections=1"])
    assert rc == 0
    assert os.path.exists(os.path.join(other, "sections", "s000.png"))
    assert not os.path.exists(os.path.join(str(tmp_path / "ignored"), "sections"))
