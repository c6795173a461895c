import csv

import numpy as np
import pytest

from graftdepth import cli
from graftdepth.autodiff import serialize
from graftdepth.datagen import generate_dataset, save_dataset
from graftdepth.network import read_manifest


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert cli.main(["gen-data", "--out", str(root), "--train", "4", "--eval", "2",
                     "--height", "32", "--width", "64", "--seed", "3"]) == 0
    return root


def test_gen_data_layout(data):
    assert sorted(p.name for p in (data / "train").iterdir()) == ["00000", "00001", "00002", "00003"]
    assert {p.name for p in (data / "train" / "00000").iterdir()} == {"left.png", "right.png", "gt_disp.epct", "rig.txt"}


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("# comment\nsteps = 7\nlr = 0.001  # inline\nno_such = 1\n")
    args = cli.build_parser().parse_args(["train", "--config", str(cfg)])
    with pytest.raises(ValueError, match="no_such"):
        cli.build_train_config(args)
    cfg.write_text("steps = 7\nlr = 0.001\nhints = false\nbatch-size = 3\n")
    args = cli.build_parser().parse_args(["train", "--config", str(cfg), "--steps", "9", "--no-graft"])
    tc = cli.build_train_config(args)
    assert (tc.steps, tc.lr, tc.hints, tc.batch_size, tc.grafting) == (9, 0.001, False, 3, False)
    cfg.write_text("steps 7\n")
    with pytest.raises(ValueError, match="key = value"):
        cli.parse_config_file(cfg)


def test_train_without_hint_cache_fails(data, tmp_path, capsys):
    code = cli.main(["train", "--data-root", str(data / "train"), "--out-dir", str(tmp_path / "r"), "--steps", "1"])
    assert code == 2
    assert "hints" in capsys.readouterr().err


def test_pipeline(data, tmp_path, capsys):
    train_root = data / "train"
    assert cli.main(["hints", "--data-root", str(train_root)]) == 0
    assert len(list((train_root / "hints").glob("*.valid.epct"))) == 4
    run = tmp_path / "run"
    assert cli.main(["train", "--data-root", str(train_root), "--out-dir", str(run), "--steps", "2",
                     "--batch-size", "2", "--base-channels", "4", "--log-every", "1"]) == 0
    info = read_manifest(run / "final")
    assert info["step"] == "2" and info["extra"]["batch_size"] == "2"
    assert len(list(csv.DictReader(open(run / "log.csv")))) == 2

    assert cli.main(["eval", "--checkpoint", str(run / "final"), "--data-root", str(data / "eval"),
                     "--out", str(tmp_path / "ev"), "--flip-pp"]) == 0
    rows = list(csv.reader(open(tmp_path / "ev" / "metrics.csv")))
    assert rows[0][0] == "sample_id" and [r[0] for r in rows[1:]] == ["00000", "00001", "mean"]
    assert "abs_rel" in (tmp_path / "ev" / "summary.txt").read_text()

    img = data / "eval" / "00000" / "left.png"
    assert cli.main(["infer", "--checkpoint", str(run / "final"), "--image", str(img),
                     "--out", str(tmp_path / "inf" / "pred.png")]) == 0
    disp = serialize.load(tmp_path / "inf" / "pred.epct")
    assert disp.shape == (32, 64) and 0 < disp.min() and disp.max() < 0.3 * 64
    assert (tmp_path / "inf" / "pred.png").exists()

    assert cli.main(["distill-label", "--checkpoint", str(run / "final"), "--data-root", str(data / "eval"),
                     "--out", str(tmp_path / "lab")]) == 0
    assert (tmp_path / "lab" / "00001.encoder.win_fractions.csv").exists()
    y = serialize.load(tmp_path / "lab" / "00000.decoder.y.epct")
    assert y.shape == (32, 64)


def test_distill_label_from_files(data, tmp_path):
    s = data / "eval" / "00000"
    gt = serialize.load(s / "gt_disp.epct")
    serialize.save(tmp_path / "a.epct", gt)
    serialize.save(tmp_path / "b.epct", np.zeros_like(gt) + 0.5)
    assert cli.main(["distill-label", "--left", str(s / "left.png"), "--right", str(s / "right.png"),
                     "--disp", str(tmp_path / "a.epct"), str(tmp_path / "b.epct"), "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.reader(open(tmp_path / "o" / "win_fractions.csv")))
    assert rows[0] == ["scale", "win_fraction"] and [r[0] for r in rows[1:]] == ["a", "b"]
    assert float(rows[1][1]) > float(rows[2][1])
    src = serialize.load(tmp_path / "o" / "source_scale.epct")
    assert set(np.unique(src)) <= {0.0, 1.0}
    assert cli.main(["distill-label", "--disp", str(tmp_path / "a.epct"), "--out", str(tmp_path / "o")]) == 2


def test_ablate_grid(tmp_path):
    train_root, eval_root = tmp_path / "tr", tmp_path / "ev"
    save_dataset(generate_dataset(3, seed=1, height=32, width=64), train_root)
    save_dataset(generate_dataset(2, seed=2, height=32, width=64), eval_root)
    assert cli.main(["ablate", "--data-root", str(train_root), "--eval-root", str(eval_root),
                     "--out-dir", str(tmp_path / "ab"), "--rows", "baseline,+DG,+SD,+FS", "--seeds", "0",
                     "--steps", "1", "--batch-size", "2", "--base-channels", "4"]) == 0
    rows = list(csv.reader(open(tmp_path / "ab" / "ablation.csv")))
    assert [r[0] for r in rows] == ["row", "baseline", "+DG", "+SD", "+FS"]


def test_version_and_bad_command(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--version"])
    assert capsys.readouterr().out.strip()
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])
