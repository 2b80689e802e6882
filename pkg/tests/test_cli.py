import subprocess
import sys

import numpy as np
import pytest

from aff import io as affio
from aff.cli import main
from aff.model import ModelConfig


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def image(tmp_path, rng):
    path = tmp_path / "img.pgm"
    img = (rng.uniform(0, 0.1, (32, 32)) * 255).astype(np.uint8)
    img[8:12, 20:24] = 255
    affio.write_image(path, img)
    return path


def test_cluster_grid(tmp_path, capsys):
    code, out, _ = run(capsys, "cluster", "--grid", "8", "--cluster-size", "8",
                       "--out", str(tmp_path / "a.csv"), "--figure", str(tmp_path / "a.png"))
    assert code == 0
    assert out.startswith("clusters 8 silhouette ")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert len(lines) == 65
    assert (tmp_path / "a.png").stat().st_size > 0


def test_cluster_anchor_beats_no_anchor(capsys):
    _, a, _ = run(capsys, "cluster", "--grid", "56")
    _, b, _ = run(capsys, "cluster", "--grid", "56", "--no-anchors")
    assert float(a.split()[-1]) > float(b.split()[-1])


def test_cluster_single_cluster(capsys):
    assert run(capsys, "cluster", "--grid", "2")[1] == "clusters 1 silhouette undefined\n"


def test_cluster_from_csv(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("x,y\n0,0\n1,0\n9,9\n10,9\n")
    code, out, _ = run(capsys, "cluster", "--input", str(tmp_path / "p.csv"), "--cluster-size", "2",
                       "--curve", "hilbert")
    assert code == 0 and out.startswith("clusters 2 ")


@pytest.mark.parametrize("argv,code", [
    (["cluster"], 1),
    (["cluster", "--grid", "4", "--input", "x.csv"], 1),
    (["cluster", "--input", "missing.csv"], 1),
    (["cluster", "--grid", "4", "--curve", "zorder"], 1),
    (["cluster", "--grid", "4", "--cluster-size", "0"], 1),
    (["render", "--image", "missing.pgm", "--tokens", "t.csv", "--out", "o.ppm"], 1),
    (["bogus"], 1),
])
def test_usage_errors(argv, code, capsys):
    try:
        got = main(argv)
    except SystemExit as exc:
        got = exc.code
    assert got == code
    assert "usage" in capsys.readouterr().err


def test_validation_error_on_malformed_csv(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("a,b\n1,2\n")
    code, _, err = run(capsys, "cluster", "--input", str(tmp_path / "p.csv"))
    assert code == 2 and "x and y" in err


def test_downsample_demo(tmp_path, image, capsys):
    out = tmp_path / "demo"
    code, text, _ = run(capsys, "downsample-demo", "--image", str(image), "--out", str(out),
                        "--alpha", "0")
    assert code == 0
    assert text.splitlines() == ["stage 1: 64 tokens", "stage 2: 16 tokens", "stage 3: 4 tokens",
                                 "stage 4: 1 tokens"]
    tokens = affio.read_tokens(out / "stage2.csv")
    assert (tokens["x"] % 2 == 0).all() and (tokens["y"] % 2 == 0).all()
    s1 = affio.read_tokens(out / "stage1.csv")
    assert s1["selected"].sum() == 16 and s1["reserved"].sum() == 4
    assert (out / "stages.png").exists()
    overlay = affio.read_image(out / "stage2.ppm")
    red = (overlay[:, :, 0] == 255) & (overlay[:, :, 1] == 0)
    ys, xs = np.nonzero(red)
    assert len(xs) == 16 and set(xs % 8) == {0} and set(ys % 8) == {0}


def test_downsample_demo_keep_one_fifth(tmp_path, rng, capsys):
    path = tmp_path / "big.ppm"
    affio.write_image(path, rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))
    code, text, _ = run(capsys, "downsample-demo", "--image", str(path), "--out", str(tmp_path / "o"),
                        "--keep", "0.2", "--no-figure")
    assert code == 0
    assert [int(l.split()[2]) for l in text.splitlines()] == [256, 51, 10, 2]


def test_downsample_demo_rejects_bad_image(tmp_path, capsys):
    (tmp_path / "bad.pgm").write_bytes(b"P5 30 30 255\n" + bytes(900))
    code, _, err = run(capsys, "downsample-demo", "--image", str(tmp_path / "bad.pgm"),
                       "--out", str(tmp_path / "o"))
    assert code == 2 and "divisible by 4" in err
    (tmp_path / "trunc.pgm").write_bytes(b"P5 32 32 255\n" + bytes(10))
    code, _, err = run(capsys, "downsample-demo", "--image", str(tmp_path / "trunc.pgm"),
                       "--out", str(tmp_path / "o"))
    assert code == 2 and "truncated payload" in err and "byte" in err


def test_render(tmp_path, image, capsys):
    out = tmp_path / "demo"
    run(capsys, "downsample-demo", "--image", str(image), "--out", str(out), "--no-figure")
    code, _, _ = run(capsys, "render", "--image", str(image), "--tokens", str(out / "stage1.csv"),
                     "--out", str(tmp_path / "r.ppm"), "--selected-only")
    assert code == 0
    red = affio.read_image(tmp_path / "r.ppm")
    assert ((red[:, :, 0] == 255) & (red[:, :, 1] == 0)).sum() == 16


def test_render_out_of_range(tmp_path, image, capsys):
    affio.write_tokens(tmp_path / "t.csv", affio.token_rows(1, [[40.0, 0.0]]))
    code, _, err = run(capsys, "render", "--image", str(image), "--tokens", str(tmp_path / "t.csv"),
                       "--out", str(tmp_path / "r.ppm"))
    assert code == 2 and "lattice" in err


def test_train_toy_zero_lr(tmp_path, capsys):
    out = tmp_path / "run"
    code, text, _ = run(capsys, "train-toy", "--epochs", "1", "--lr", "0", "--train-size", "32",
                        "--test-size", "400", "--image-size", "32", "--out", str(out))
    assert code == 0
    acc = float(text.split()[5])
    assert abs(acc - 0.5) <= 0.05
    for name in ("checkpoint.bin", "config.json", "metrics.csv", "metrics.png"):
        assert (out / name).exists()
    config = ModelConfig.load(out / "config.json")
    assert 0 < config.pixel_mean < 1


def test_downsample_demo_with_checkpoint(tmp_path, image, capsys):
    out = tmp_path / "run"
    run(capsys, "train-toy", "--epochs", "1", "--train-size", "16", "--test-size", "8",
        "--image-size", "16", "--out", str(out), "--no-figure")
    code, _, _ = run(capsys, "downsample-demo", "--image", str(image), "--out", str(tmp_path / "d"),
                     "--config", str(out / "config.json"), "--checkpoint", str(out / "checkpoint.bin"),
                     "--no-figure")
    assert code == 0
    (tmp_path / "junk.bin").write_bytes(b"junk")
    code, _, err = run(capsys, "downsample-demo", "--image", str(image), "--out", str(tmp_path / "d"),
                       "--checkpoint", str(tmp_path / "junk.bin"))
    assert code == 2 and "bad magic" in err


def test_bad_config_file(tmp_path, image, capsys):
    (tmp_path / "c.json").write_text('{"stages": []}')
    code, _, err = run(capsys, "downsample-demo", "--image", str(image), "--out", str(tmp_path / "d"),
                       "--config", str(tmp_path / "c.json"))
    assert code == 2 and "bad config" in err


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "aff.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("cluster", "downsample-demo", "gradcheck", "train-toy", "render"):
        assert cmd in res.stdout
