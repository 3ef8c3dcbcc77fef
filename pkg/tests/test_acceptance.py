"""Acceptance gate: one test per criterion, with a PASS/FAIL summary line each.

The training criteria share session fixtures so every model is trained once.
Run only this file with ``pytest tests/test_acceptance.py``; the summary is
printed at the end of the session.
"""

import importlib.util
import os
import time
from pathlib import Path

import numpy as np
import pytest

from specpool import cli, selftest
from specpool import training as T

from conftest import ACCEPTANCE

ROOT = Path(__file__).resolve().parents[1]
SEED = 20240601

TOY = ["dataset=synth", "n_train=400", "n_test=100", "n_points=256", "noise=0.02", "epochs=50",
       "centroids=64,16", "ks=32,8", "widths=64,128,256", "deterministic=true", "seeds=0,1,2"]
MNIST_EPOCHS = 20
MNIST = ["dataset=mnist", "mnist_points=196", "n_train=2000", "n_test=500", f"epochs={MNIST_EPOCHS}",
         "centroids=64,16", "ks=32,8", "widths=64,128,256", "deterministic=true", "seeds=0,1,2"]
# 200 items give few optimizer steps per epoch at batch 32, so segmentation uses batch 8
SEG = ["dataset=synth_parts", "n_train=200", "n_test=50", "n_points=512", "epochs=60", "batch_size=8",
       "centroids=128,32", "ks=32,8", "widths=64,128,256", "deterministic=true", "seed=0"]


def record(key, title, ok, detail):
    ACCEPTANCE[key] = (bool(ok), title, detail)
    assert ok, f"{title}: {detail}"


def _suite(name, n=None):
    fn = selftest.SUITES[name]
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    s = fn(rng) if n is None else fn(rng, n)
    return s, time.perf_counter() - t0


def _detail(s, secs):
    text = f"{s.passed}/{s.total} checks in {secs:.1f}s"
    return text + (f"; first failure: {s.failures[0]}" if s.failures else "")


def test_spectral_identities():
    s, secs = _suite("spectral", 200)
    record(1, "spectral identities", not s.failures and secs < 30, _detail(s, secs))


def test_convolution_oracle():
    s, secs = _suite("convolution", 100)
    record(2, "convolution oracle", not s.failures, _detail(s, secs))


def test_gradient_suite():
    s, secs = _suite("gradients", 50)
    record(3, "gradient suite", not s.failures, _detail(s, secs))


def test_algorithm1_oracle():
    s, secs = _suite("algorithm1", 100)
    record(4, "cluster pooling vs literal trace", not s.failures, _detail(s, secs))


def test_set_function():
    s, secs = _suite("set_function")
    record(5, "permutation invariance", not s.failures, _detail(s, secs))


# ---------------------------------------------------------------------------
# training runs


def _ablation(overrides, out):
    cfg = cli.resolve(None, overrides)
    rows = cli.ablate(cfg, out=str(out))
    return {r[0]: {"mean": r[1], "sd": r[2], "wall": r[3], "epoch": r[4]} for r in rows}


@pytest.fixture(scope="session")
def toy(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    return out, _ablation(TOY, out)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    pytest.importorskip("mlxtend")
    spec = importlib.util.spec_from_file_location("make_mnist_idx", ROOT / "scripts" / "make_mnist_idx.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    d = tmp_path_factory.mktemp("mnist_idx")
    mod.build(str(d))
    return d


@pytest.fixture(scope="session")
def mnist(tmp_path_factory, mnist_dir):
    out = tmp_path_factory.mktemp("mnist")
    return out, _ablation(MNIST + [f"mnist_dir={mnist_dir}"], out)


@pytest.fixture(scope="session")
def seg(tmp_path_factory):
    out = tmp_path_factory.mktemp("seg")
    cfg = cli.resolve(None, SEG)
    train_set, test_set = cli.load_data(cfg)
    res = T.train(cli.train_config(cfg), cli.build_arch(cfg, train_set), train_set, test_set, out_dir=str(out))
    return out, res


def _rerun(overrides, seed, variant, out):
    cfg = cli.resolve(None, overrides)
    train_set, test_set = cli.load_data(cfg)
    T.train(cli.train_config(cfg, seed), cli.build_arch(cfg, train_set, variant), train_set, test_set,
            out_dir=str(out))
    return (Path(out) / "metrics.csv").read_bytes()


def _fmt(res):
    return ", ".join(f"{v} {r['mean']:.4f}±{r['sd']:.4f}" for v, r in res.items())


@pytest.mark.slow
def test_toy_classification(toy):
    _, res = toy
    r = res["4l-spec-cp"]
    ok = r["mean"] >= 0.95 and r["wall"] < 30 * 60
    record(6, "toy classification", ok,
           f"4l-spec-cp mean test acc {r['mean']:.4f} over 3 seeds, {r['wall']:.0f}s per run")


@pytest.mark.slow
def test_ablation_ordering(toy, mnist):
    lines, gaps = [], []
    ordered = True
    for name, (_, res) in (("toy", toy), ("mnist", mnist)):
        m = [res[v]["mean"] for v in cli.ABLATION_VARIANTS]
        ordered &= m[0] <= m[1] <= m[2]
        gaps.append(m[2] - m[0])
        lines.append(f"{name}: {_fmt(res)}")
    ok = ordered and max(gaps) >= 0.01
    record(7, "ablation ordering", ok, "; ".join(lines) + f"; spec-cp minus point-MLP {max(gaps):+.4f}")


@pytest.mark.slow
def test_toy_segmentation(seg):
    _, res = seg
    miou = res.final["miou"]
    record(8, "toy segmentation", miou >= 0.85, f"test mIoU {miou:.4f} after {len(res.rows)} epochs")


@pytest.mark.slow
def test_determinism(toy, mnist, mnist_dir, seg, tmp_path):
    pairs = {
        "toy": (_rerun(TOY, 0, "4l-spec-cp", tmp_path / "toy"),
                (toy[0] / "4l-spec-cp-seed0" / "metrics.csv").read_bytes()),
        "mnist": (_rerun(MNIST + [f"mnist_dir={mnist_dir}"], 0, "4l-spec-cp", tmp_path / "mnist"),
                  (mnist[0] / "4l-spec-cp-seed0" / "metrics.csv").read_bytes()),
        "segmentation": (_rerun(SEG, 0, "4l-spec-cp", tmp_path / "seg"), (seg[0] / "metrics.csv").read_bytes()),
    }
    same = {k: a == b for k, (a, b) in pairs.items()}
    record(9, "deterministic reruns", all(same.values()),
           ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))


@pytest.mark.slow
def test_throughput(toy):
    _, res = toy
    ratio = res["4l-spec-cp"]["epoch"] / res["4l-pointnet++"]["epoch"]
    record(10, "epoch time ratio", ratio <= 2.5,
           f"4l-spec-cp {res['4l-spec-cp']['epoch']:.2f}s vs 4l-pointnet++ "
           f"{res['4l-pointnet++']['epoch']:.2f}s per epoch, ratio {ratio:.2f} on {os.cpu_count()} CPU(s)")
