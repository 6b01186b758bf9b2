"""The command-line interface, driven in-process through main(argv)."""

import numpy as np
import pytest

from attnseg.cli import main
from attnseg.data import read_pgm, read_ppm

MICRO = [
    "--set", "encoder.image_size=16",
    "--set", "encoder.patch_size=4",
    "--set", "encoder.depth=2",
    "--set", "encoder.width=16",
    "--set", "encoder.heads=2",
    "--set", "encoder.mlp_ratio=2",
    "--set", "decoder.mlp_ratio=2",
    "--set", "cascade.layers=1,2",
    "--set", "data.classes=3",
    "--set", "data.train_count=8",
    "--set", "data.eval_count=4",
    "--set", "train.batch_size=4",
    "--set", "train.iterations=4",
]


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    """One gen-data + train round shared by the pipeline tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    ckpt = root / "model.ckpt"
    metrics = root / "train.metrics"
    assert main(["gen-data", *MICRO, "--out", str(data)]) == 0
    assert (
        main(["train", *MICRO, "--data", str(data), "--out", str(ckpt), "--metrics", str(metrics)])
        == 0
    )
    return {"root": root, "data": data, "ckpt": ckpt, "metrics": metrics}


def test_gen_data_writes_both_splits(micro_run, capsys):
    data = micro_run["data"]
    assert len(list((data / "train").glob("img_*.ppm"))) == 8
    assert len(list((data / "eval").glob("lbl_*.pgm"))) == 4


def test_gen_data_split_subset(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["gen-data", *MICRO, "--out", str(out), "--splits", "eval"]) == 0
    captured = capsys.readouterr()
    assert "eval: wrote 4" in captured.out
    assert not (out / "train").exists()
    assert main(["gen-data", *MICRO, "--out", str(out), "--splits", "nope"]) == 1
    assert "error:" in capsys.readouterr().err


def test_train_reports_and_writes(micro_run):
    assert micro_run["ckpt"].exists()
    text = micro_run["metrics"].read_text()
    assert text.startswith("iter=")


def test_eval_checkpoint_prints_report(micro_run, capsys):
    code = main(
        ["eval", "--data", str(micro_run["data"]), "--ckpt", str(micro_run["ckpt"])]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "class  iou"
    assert "mIoU" in out


def test_eval_predictions_of_ground_truth_scores_one(micro_run, capsys, tmp_path):
    preds = tmp_path / "preds"
    preds.mkdir()
    for lbl in (micro_run["data"] / "eval").glob("lbl_*.pgm"):
        (preds / lbl.name).write_bytes(lbl.read_bytes())
    code = main(
        ["eval", *MICRO, "--data", str(micro_run["data"]), "--preds", str(preds)]
    )
    assert code == 0
    assert "mIoU   1.0000" in capsys.readouterr().out


def test_eval_needs_exactly_one_source(micro_run, capsys):
    args = ["eval", "--data", str(micro_run["data"])]
    assert main(args) == 1
    assert "exactly one" in capsys.readouterr().err
    assert main(args + ["--ckpt", "a", "--preds", "b"]) == 1
    assert "error:" in capsys.readouterr().err


def test_infer_writes_labels_and_colors(micro_run, tmp_path, capsys):
    image = next((micro_run["data"] / "eval").glob("img_*.ppm"))
    out = tmp_path / "labels.pgm"
    color = tmp_path / "labels.ppm"
    code = main(
        [
            "infer",
            "--ckpt", str(micro_run["ckpt"]),
            "--image", str(image),
            "--out", str(out),
            "--color", str(color),
        ]
    )
    assert code == 0
    labels = read_pgm(out)
    assert labels.shape == (16, 16)
    assert labels.max() < 3
    rendered = read_ppm(color)
    assert rendered.shape == (16, 16, 3)


def test_infer_rejects_wrong_image_size(micro_run, tmp_path, capsys):
    from attnseg.data import write_ppm

    bad = tmp_path / "bad.ppm"
    write_ppm(bad, np.zeros((8, 8, 3), dtype=np.uint8))
    code = main(
        ["infer", "--ckpt", str(micro_run["ckpt"]), "--image", str(bad), "--out", str(tmp_path / "o.pgm")]
    )
    assert code == 1
    assert "8x8" in capsys.readouterr().err


def test_flops_kv_matches_library_values(capsys):
    code = main(["flops", "--config", "configs/vit_large_640.cfg", "--kv"])
    assert code == 0
    out = capsys.readouterr().out
    values = dict(line.split(" = ") for line in out.strip().splitlines())
    assert int(values["backbone_macs"]) == 610_271_232_000
    assert int(values["total_macs"]) == 628_625_971_200
    assert abs(float(values["backbone_gflops"]) - 610.271232) < 1e-9
    assert int(values["qu_macs"]) == 0


def test_flops_table_groups_equal_layers(capsys):
    assert main(["flops", "--config", "configs/vit_large_640.cfg"]) == 0
    out = capsys.readouterr().out
    assert "encoder.layers.1-24" in out
    assert "backbone total" in out
    assert "decoder.stage.3" in out

    assert main(["flops", "--config", "configs/vit_large_640_shrunk.cfg"]) == 0
    out = capsys.readouterr().out
    assert "encoder.layers.1-8" in out
    assert "encoder.layer.9" in out  # the downsampling layer stands alone
    assert "encoder.layers.10-24" in out
    assert "query_upsample.1" in out


def test_flops_crop_override(capsys):
    assert main(["flops", "--config", "configs/vit_large_640.cfg", "--crop", "512", "--kv"]) == 0
    out = capsys.readouterr().out
    values = dict(line.split(" = ") for line in out.strip().splitlines())
    assert int(values["patch_embed_macs"]) == 1024 * 768 * 1024
    assert main(["flops", "--crop", "30"]) == 1
    assert "error:" in capsys.readouterr().err


def test_gradcheck_micro_config_passes(capsys):
    code = main(
        [
            "gradcheck",
            "--set", "encoder.image_size=8",
            "--set", "encoder.patch_size=4",
            "--set", "encoder.depth=1",
            "--set", "encoder.width=8",
            "--set", "encoder.heads=2",
            "--set", "encoder.mlp_ratio=2",
            "--set", "decoder.mlp_ratio=2",
            "--set", "cascade.layers=1",
            "--set", "data.classes=2",
            "--samples", "2",
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "max relative error" in out


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # missing required --data/--out
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "x.ckpt")]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["eval", "--data", str(tmp_path), "--ckpt", str(tmp_path / "no.ckpt")]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["flops", "--set", "bogus.key=1"]) == 1
    assert "bogus.key" in capsys.readouterr().err
