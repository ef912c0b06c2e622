import json
import subprocess
import sys

import numpy as np
import pytest

from _images import astronaut, piecewise_smooth
from haartsvd import cli
from haartsvd.images import read_image, write_image
from haartsvd.rng import add_awgn
from haartsvd.transform import load_bases


def run(*args):
    """Invoke the CLI in-process and return its exit code."""
    try:
        code = cli.main([str(a) for a in args])
    except SystemExit as exc:
        code = exc.code
    return code


@pytest.fixture
def noisy_png(tmp_path):
    path = tmp_path / "in.png"
    write_image(path, add_awgn(piecewise_smooth(128), 25, seed=1, clip=True))
    return path


@pytest.fixture
def noisy_gray(tmp_path):
    path = tmp_path / "in.pgm"
    write_image(path, add_awgn(piecewise_smooth(96, c=1), 20, seed=2, clip=True))
    return path


class TestDenoise:
    def test_writes_output(self, noisy_png, tmp_path):
        out = tmp_path / "out.png"
        assert run("denoise", noisy_png, out, "--sigma", 25) == 0
        assert read_image(out).shape == (128, 128, 3)

    def test_sigma_and_adaptive_exclusive(self, noisy_png, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "haartsvd.cli", "denoise", str(noisy_png), str(tmp_path / "o.png"), "--sigma", "25", "--adaptive"],
            capture_output=True,
        )
        assert proc.returncode == 2
        assert not (tmp_path / "o.png").exists()

    def test_json(self, noisy_png, tmp_path, capsys):
        assert run("denoise", noisy_png, tmp_path / "o.png", "--adaptive", "--json") == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) == {"sigma_used", "seconds", "tiles", "sigma_map"}
        assert doc["tiles"] == 1 and doc["seconds"] > 0
        assert [row[:2] for row in doc["sigma_map"]] == [[0, 0]]
        assert doc["sigma_used"] == doc["sigma_map"][0][2]

    def test_threads_do_not_change_output(self, tmp_path):
        src = tmp_path / "in.ppm"
        write_image(src, add_awgn(piecewise_smooth(300), 25, seed=4, clip=True))
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        assert run("denoise", src, a, "--sigma", 25, "--seed", 3, "--threads", 1) == 0
        assert run("denoise", src, b, "--sigma", 25, "--seed", 3, "--threads", 8) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_env_overrides_threads(self, noisy_png, tmp_path, monkeypatch):
        monkeypatch.setenv("HTSVD_THREADS", "0")
        assert run("denoise", noisy_png, tmp_path / "o.png", "--sigma", 10, "--threads", 2) == 2
        monkeypatch.setenv("HTSVD_THREADS", "2")
        assert run("denoise", noisy_png, tmp_path / "o.png", "--sigma", 10, "--threads", "bogus") == 0

    def test_grayscale_and_learned_bases(self, noisy_gray, tmp_path):
        out = tmp_path / "o.pgm"
        assert run("denoise", noisy_gray, out, "--sigma", 20, "--bases", "learn") == 0
        assert read_image(out).shape == (96, 96)

    def test_sidecar(self, noisy_png, tmp_path, capsys):
        side = tmp_path / "s.txt"
        side.write_text("0 0 40\n")
        assert run("denoise", noisy_png, tmp_path / "o.png", "--adaptive", "--sidecar", side, "--json") == 0
        assert json.loads(capsys.readouterr().out)["sigma_map"][0][2] in (40.0, 40 / 1.2)
        assert run("denoise", noisy_png, tmp_path / "o.png", "--sigma", 5, "--sidecar", side) == 2

    def test_io_errors(self, noisy_png, tmp_path):
        assert run("denoise", tmp_path / "missing.png", tmp_path / "o.png", "--sigma", 5) == 1
        bad = tmp_path / "bad.htsv"
        bad.write_bytes(b"HTSV\x01\x00")
        assert run("denoise", noisy_png, tmp_path / "o.png", "--sigma", 5, "--bases", bad) == 1
        assert run("denoise", noisy_png, tmp_path / "nodir" / "o.png", "--sigma", 5) == 1

    def test_config_errors(self, noisy_png, tmp_path):
        out = tmp_path / "o.png"
        assert run("denoise", noisy_png, out, "--sigma", -1) == 2
        assert run("denoise", noisy_png, out, "--sigma", 5, "--K", 24) == 2
        assert run("denoise", noisy_png, out, "--sigma", 5, "--beta", 0.5) == 2
        assert run("denoise", noisy_png, out) == 2

    def test_bases_shape_mismatch(self, noisy_png, noisy_gray, tmp_path):
        bases = tmp_path / "g.htsv"
        assert run("learn-bases", noisy_gray, bases) == 0
        assert run("denoise", noisy_png, tmp_path / "o.png", "--sigma", 5, "--bases", bases) == 2

    def test_numeric_failure(self, noisy_png, tmp_path, monkeypatch):
        def explode(*a, **k):
            raise np.linalg.LinAlgError("no convergence")

        monkeypatch.setattr(cli, "filter_with_sigma_map", explode)
        assert run("denoise", noisy_png, tmp_path / "o.png", "--sigma", 5) == 3


class TestAddNoise:
    @pytest.fixture
    def gray_rgb(self, tmp_path):
        path = tmp_path / "g.ppm"
        write_image(path, np.full((512, 512, 3), 128.0))
        return path

    def test_per_channel(self, gray_rgb, tmp_path):
        out = tmp_path / "n.ppm"
        assert run("add-noise", gray_rgb, out, "--sigma", "15,10,20", "--seed", 7) == 0
        noise = read_image(out) - 128.0
        for k, target in enumerate([15, 10, 20]):
            assert abs(noise[..., k].std() / target - 1) < 0.03

    def test_zero_sigma(self, tmp_path):
        src = tmp_path / "a.png"
        write_image(src, astronaut())
        out = tmp_path / "b.png"
        assert run("add-noise", src, out, "--sigma", 0) == 0
        np.testing.assert_array_equal(read_image(out), read_image(src))

    def test_same_seed_identical(self, gray_rgb, tmp_path):
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        assert run("add-noise", gray_rgb, a, "--sigma", 50, "--seed", 1) == 0
        assert run("add-noise", gray_rgb, b, "--sigma", 50, "--seed", 1) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_clipped(self, tmp_path):
        src = tmp_path / "w.pgm"
        write_image(src, np.full((32, 32), 250.0))
        out = tmp_path / "o.pgm"
        assert run("add-noise", src, out, "--sigma", 40) == 0
        assert read_image(out).max() == 255

    @pytest.mark.parametrize("sigma", ["1,2", "a", "-3", ""])
    def test_bad_sigma(self, gray_rgb, tmp_path, sigma):
        assert run("add-noise", gray_rgb, tmp_path / "o.ppm", "--sigma", sigma) == 2


class TestMetrics:
    def test_identical_json(self, noisy_png, capsys):
        assert run("metrics", noisy_png, noisy_png, "--json") == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["psnr"] == "inf" and doc["ssim"] == pytest.approx(1.0)

    def test_text(self, noisy_png, tmp_path, capsys):
        other = tmp_path / "o.png"
        write_image(other, read_image(noisy_png) + 10)
        assert run("metrics", noisy_png, other) == 0
        out = capsys.readouterr().out
        assert out.startswith("PSNR ") and "SSIM" in out
        assert run("metrics", noisy_png, noisy_png) == 0
        assert "PSNR inf dB" in capsys.readouterr().out

    def test_shape_mismatch(self, noisy_png, noisy_gray):
        assert run("metrics", noisy_png, noisy_gray) == 2


class TestLearnBases:
    def test_then_denoise(self, noisy_png, tmp_path):
        bases = tmp_path / "b.htsv"
        assert run("learn-bases", noisy_png, bases) == 0
        assert load_bases(bases).c == 3
        out = tmp_path / "o.png"
        assert run("denoise", noisy_png, out, "--sigma", 25, "--bases", bases) == 0
        assert out.exists()

    def test_bundled_defaults(self):
        for c in (1, 3):
            b = load_bases(cli.default_bases_path(8, c))
            assert (b.ps, b.c) == (8, c)
        assert cli.default_bases_path(4, 3) is None


def test_bench(noisy_png, capsys):
    assert run("bench", noisy_png, "--threads", "1,2", "--repeats", 2, "--json") == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc["threads"]) == {"1", "2"}
    assert all(len(v["runs"]) == 2 and v["median"] > 0 for v in doc["threads"].values())
    assert doc["max_rel_diff"] <= 1e-9
    assert run("bench", noisy_png, "--threads", "0") == 2


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "haartsvd.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("denoise", "add-noise", "metrics", "learn-bases", "bench"):
        assert sub in proc.stdout
