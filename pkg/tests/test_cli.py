import os
import subprocess
import sys

import numpy as np
import pytest

from specpool import cli
from specpool import graph_spectral as gs
from specpool.data_io import PointCloud, save_xyz

TINY = ["n_train=8", "n_test=8", "n_points=64", "centroids=16,8", "ks=8,8", "widths=8,8,8",
        "batch_size=4", "epochs=1"]


def run(argv):
    return cli.main(["-q", *argv])


def files_under(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


class TestConfig:
    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.cfg"
        assert run(["train", str(missing)]) != 0
        assert str(missing) in capsys.readouterr().err

    def test_unknown_key_lists_valid(self, tmp_path, capsys):
        assert run(["train", f"out_dir={tmp_path}", "learning_rate=0.1"]) == 1
        err = capsys.readouterr().err
        assert "learning_rate" in err and "batch_size" in err and "weight_scheme" in err

    def test_file_then_overrides(self, tmp_path):
        p = tmp_path / "a.cfg"
        p.write_text("# comment\nepochs = 7\nseed=3  # trailing\n\n")
        cfg = cli.resolve(str(p), ["seed=9"])
        assert (cfg["epochs"], cfg["seed"]) == ("7", "9")

    def test_line_without_equals(self, tmp_path):
        p = tmp_path / "b.cfg"
        p.write_text("epochs 7\n")
        with pytest.raises(cli.ConfigurationError, match="b.cfg:1"):
            cli.resolve(str(p))

    def test_usage_error_exit(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["frobnicate"])
        assert info.value.code == 1

    def test_data_error_exit(self, tmp_path):
        (tmp_path / "bad.xyz").write_text("1 2 x\n")
        assert run(["spectra", str(tmp_path / "bad.xyz")]) == 2


class TestTrain:
    def test_smoke_one_row(self, tmp_path):
        out = tmp_path / "run"
        assert run(["train", "dataset=synth", f"out_dir={out}", *TINY]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "epoch,lr,train_loss,train_acc,test_metric,seconds"
        assert len(lines) == 2
        assert files_under(out) == ["end_time.txt", "manifest.txt", "metrics.csv", "model.ckpt"]

    def test_manifest_sorted(self, tmp_path):
        out = tmp_path / "run"
        run(["train", f"out_dir={out}", *TINY])
        lines = (out / "manifest.txt").read_text().splitlines()
        keys = [ln.split("=", 1)[0] for ln in lines]
        assert keys == sorted(keys)
        assert {"seed", "version", "dataset_fingerprint", "start_time", "config.epochs"} <= set(keys)

    def test_refuses_used_out_dir(self, tmp_path):
        out = tmp_path / "run"
        assert run(["train", f"out_dir={out}", *TINY]) == 0
        before = (out / "manifest.txt").read_bytes()
        assert run(["train", f"out_dir={out}", *TINY]) == 1
        assert (out / "manifest.txt").read_bytes() == before

    def test_deterministic_bytes(self, tmp_path):
        for d in ("a", "b"):
            assert run(["train", f"out_dir={tmp_path / d}", "deterministic=true", *TINY[:-1], "epochs=2"]) == 0
        for f in ("metrics.csv", "model.ckpt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_evaluate(self, tmp_path, capsys):
        run(["train", f"out_dir={tmp_path / 'r'}", *TINY])
        capsys.readouterr()
        assert run(["evaluate", f"checkpoint={tmp_path / 'r' / 'model.ckpt'}", *TINY]) == 0
        out = capsys.readouterr().out
        assert "instance_acc=" in out and "class_acc=" in out

    def test_writes_only_under_out_dir(self, tmp_path, monkeypatch):
        work = tmp_path / "cwd"
        work.mkdir()
        monkeypatch.chdir(work)
        assert run(["train", f"out_dir={tmp_path / 'o'}", *TINY]) == 0
        assert files_under(work) == []
        assert sorted(os.listdir(tmp_path)) == ["cwd", "o"]


class TestAblate:
    def test_three_rows(self, tmp_path):
        out = tmp_path / "abl"
        assert run(["ablate", f"out_dir={out}", "seeds=0,1", *TINY]) == 0
        lines = (out / "ablation.csv").read_text().splitlines()
        assert lines[0] == cli.ABLATION_HEADER
        rows = [ln.split(",") for ln in lines[1:]]
        assert [r[0] for r in rows] == ["4l-pointnet++", "4l-spec-max", "4l-spec-cp"]
        for r in rows:
            assert 0.0 <= float(r[1]) <= 1.0
        means = [float(r[1]) for r in rows]
        assert {r[5] for r in rows} == {str(means[0] <= means[1] <= means[2]).lower()}


def two_clusters(rng):
    a = rng.normal(scale=0.05, size=(10, 3))
    b = rng.normal(scale=0.05, size=(10, 3)) + [3.0, 0.0, 0.0]
    return np.concatenate([a, b])


class TestSpectra:
    def test_k2(self, tmp_path, rng, capsys):
        save_xyz(tmp_path / "c.xyz", PointCloud(rng.normal(size=(6, 3))))
        assert run(["spectra", str(tmp_path / "c.xyz"), "k=2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "point_index,phi1"
        assert len(lines) == 3

    def test_two_clusters_sign_separated(self, tmp_path, rng):
        pts = two_clusters(rng)
        save_xyz(tmp_path / "c.xyz", PointCloud(pts))
        assert run(["spectra", str(tmp_path / "c.xyz"), "k=20", f"out_dir={tmp_path / 'o'}"]) == 0
        lines = (tmp_path / "o" / "spectra.csv").read_text().splitlines()
        assert lines[0] == "point_index,phi1,phi2,phi3"
        side = {int(r.split(",")[0]): float(r.split(",")[1]) > 0 for r in lines[1:]}
        assert len(side) == 20
        assert len({side[i] for i in range(10)}) == 1
        assert len({side[i] for i in range(10, 20)}) == 1
        assert side[0] != side[10]

    def test_deterministic(self, tmp_path, rng, capsys):
        save_xyz(tmp_path / "c.xyz", PointCloud(rng.normal(size=(60, 3))))
        outs = []
        for _ in range(2):
            run(["spectra", str(tmp_path / "c.xyz"), "k=16", "spectra_centroids=3"])
            outs.append(capsys.readouterr().out)
        assert outs[0] == outs[1]
        assert len(outs[0].splitlines()) == 1 + 3 * 16

    def test_bad_k(self, tmp_path, rng):
        save_xyz(tmp_path / "c.xyz", PointCloud(rng.normal(size=(5, 3))))
        assert run(["spectra", str(tmp_path / "c.xyz"), "k=9"]) == 1


class TestSelftest:
    def test_pristine(self, capsys):
        assert run(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "spectral" in out and "selftest passed" in out

    def test_injected_gft_sign_flip(self, monkeypatch, capsys):
        real = gs.gft
        monkeypatch.setattr(gs, "gft", lambda u, x: -real(u, x))
        code = run(["selftest"])
        out = capsys.readouterr().out
        assert code != 0
        assert "FAILED" in out and "spectral" in out.split("FAILED", 1)[1]


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "specpool.cli", "spectra", "--help"],
                         capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 0 and "key=value" in res.stdout
