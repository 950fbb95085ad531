import csv
import subprocess
import sys

import numpy as np
import pytest

from tacnet import io
from tacnet.cli import main

TINY = """\
depth = 12
height = 24
width = 24
rings = 2
radius_min = 4
radius_max = 6
epochs = 2
lr = 0.5
batch = 4
hidden = 2
patch = 12
sample_patch = 12
fine_tune_epochs = 1
fine_tune_lr = 0.05
betti_patch = 12
betti_samples = 5
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"),
                 "--out", str(root / "run")]) == 0
    return root, cfg


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_gen_data_seed_determinism(tmp_path, workspace):
    _, cfg = workspace
    for d in ("a", "b"):
        assert main(["gen-data", "--config", str(cfg), "--seed", "7", "--out",
                     str(tmp_path / d)]) == 0
    for name in ("image.tact", "membrane.tact", "labels.tact", "topology.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_history(workspace):
    root, _ = workspace
    rows = read_csv(root / "run" / "backbone.history.csv")
    assert rows[0] == ["epoch", "stage", "lr", "loss"]
    assert [r[:2] for r in rows[1:]] == [["0", "backbone"], ["1", "backbone"]]
    assert set(io.read_checkpoint(root / "run" / "backbone.tacl")) >= {"wx", "wh", "meta.patch"}


def test_two_stage_deterministic(tmp_path, workspace):
    root, cfg = workspace
    outs = []
    for d in ("a", "b"):
        out = tmp_path / d
        args = ["--config", str(cfg), "--data", str(root / "data"), "--out", str(out),
                "--seed", "7"]
        assert main(["train", *args]) == 0
        assert main(["train", *args, "--stage", "tacnet"]) == 0
        outs.append(out)
    for name in ("backbone.history.csv", "backbone.tacl", "tacnet.history.csv", "tacnet.tacl"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert read_csv(outs[0] / "tacnet.history.csv")[1][1] == "tacnet"


def test_tacnet_without_backbone(tmp_path, workspace, capsys):
    root, cfg = workspace
    rc = main(["train", "--config", str(cfg), "--data", str(root / "data"),
               "--out", str(tmp_path), "--stage", "tacnet"])
    assert rc != 0
    err = capsys.readouterr().err
    assert "checkpoint" in err and err.count("\n") == 1


def test_attend_zero_weight(tmp_path, workspace):
    root, cfg = workspace
    ckpt = root / "run" / "backbone.tacl"
    assert main(["attend", "--config", str(cfg), "--checkpoint", str(ckpt),
                 "--input", str(root / "data"), "--slices", "4", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "phat_004.pgm").read_bytes() == (tmp_path / "p_004.pgm").read_bytes()
    for name in ("cp", "o", "phat"):
        arr = io.read_tensor(tmp_path / f"{name}_004.tact")
        assert np.array_equal(io.read_pnm(tmp_path / f"{name}_004.pgm"), io.to_bytes8(arr))
    assert io.read_pnm(tmp_path / "overlay_004.ppm").shape == (24, 24, 3)


def test_attend_matches_memory(tmp_path, workspace):
    from tacnet.pipeline import TrainConfig, params_from_tensors, predict_slice
    from tacnet.synthetic import load_dataset
    root, cfg = workspace
    ckpt = root / "run" / "backbone.tacl"
    assert main(["attend", "--config", str(cfg), "--checkpoint", str(ckpt),
                 "--input", str(root / "data"), "--slices", "6", "--out", str(tmp_path)]) == 0
    params = params_from_tensors(io.read_checkpoint(ckpt))
    image = load_dataset(root / "data")[0]
    p, o, p_hat, _ = predict_slice(params, image, 6, TrainConfig(patch=12))
    assert np.array_equal(io.read_tensor(tmp_path / "o_006.tact"), o.astype(np.float32))
    assert np.array_equal(io.read_tensor(tmp_path / "p_006.tact"), p.astype(np.float32))


def test_attend_patch_mismatch(tmp_path, workspace):
    root, _ = workspace
    small = tmp_path / "small.tact"
    io.write_tensor(small, np.full((3, 8, 8), 0.5))
    rc = main(["attend", "--checkpoint", str(root / "run" / "backbone.tacl"),
               "--input", str(small), "--out", str(tmp_path / "o")])
    assert rc != 0


def test_eval_identity(tmp_path, workspace):
    root, cfg = workspace
    gt = root / "data" / "membrane.tact"
    out = tmp_path / "m.csv"
    assert main(["eval", "--config", str(cfg), "--pred", str(gt), "--gt", str(gt),
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["metric", "value", "stddev"]
    assert {r[0]: float(r[1]) for r in rows[1:]} == {"dice": 1.0, "ari": 1.0, "voi": 0.0,
                                                     "betti_error": 0.0}


def test_eval_component_filter(tmp_path, workspace):
    root, _ = workspace
    gt = io.read_tensor(root / "data" / "membrane.tact")
    cfg = tmp_path / "c.cfg"
    cfg.write_text("min_component = 100000\nbetti_patch = 12\nbetti_samples = 3\n")
    out = tmp_path / "m.csv"
    assert main(["eval", "--config", str(cfg), "--pred", str(root / "data" / "membrane.tact"),
                 "--gt", str(root / "data" / "membrane.tact"), "--out", str(out)]) == 0
    vals = {r[0]: float(r[1]) for r in read_csv(out)[1:]}
    assert gt.any() and vals["dice"] == 0.0


def test_eval_shape_mismatch(tmp_path, workspace, capsys):
    root, _ = workspace
    io.write_tensor(tmp_path / "p.tact", np.zeros((2, 5, 5)))
    rc = main(["eval", "--pred", str(tmp_path / "p.tact"),
               "--gt", str(root / "data" / "membrane.tact"), "--out", str(tmp_path / "m.csv")])
    assert rc != 0 and "shape mismatch" in capsys.readouterr().err


@pytest.mark.slow
def test_ablate_grid(tmp_path, workspace):
    root, cfg = workspace
    outs = []
    for d in ("a", "b"):
        out = tmp_path / f"{d}.csv"
        assert main(["ablate", "--config", str(cfg), "--data", str(root / "data"),
                     "--out", str(out)]) == 0
        outs.append(out)
    rows = read_csv(outs[0])
    assert len(rows) == 3 * 3 + 1
    assert [(r[0], r[1]) for r in rows[1:]] == [(m, l) for l in "135"
                                                for m in ("convlstm", "sta", "ita")]
    assert outs[0].read_bytes() == outs[1].read_bytes()
    timing = read_csv(tmp_path / "a.timing.csv")
    assert timing[0] == ["model", "slices", "seconds_per_epoch"] and len(timing) == 10


def test_subprocess_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "tacnet.cli", "gen-data", "--out",
                         str(tmp_path / "d")], capture_output=True, text=True)
    assert ok.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "tacnet.cli", "eval", "--pred", "nope.tact",
                          "--gt", "nope.tact", "--out", str(tmp_path / "m.csv")],
                         capture_output=True, text=True)
    assert bad.returncode != 0
    assert bad.stderr.startswith("tacnet: error:") and bad.stderr.count("\n") == 1


def test_thread_count_invariant(tmp_path, workspace, monkeypatch):
    root, cfg = workspace
    ckpt = root / "run" / "backbone.tacl"
    outs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("TACT_THREADS", threads)
        out = tmp_path / threads
        assert main(["attend", "--config", str(cfg), "--checkpoint", str(ckpt), "--input",
                     str(root / "data"), "--slices", "3", "--out", str(out)]) == 0
        assert main(["eval", "--config", str(cfg), "--pred", str(root / "data" / "image.tact"),
                     "--gt", str(root / "data" / "membrane.tact"),
                     "--out", str(out / "m.csv")]) == 0
        outs.append(out)
    for name in ("o_003.tact", "phat_003.tact", "m.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
