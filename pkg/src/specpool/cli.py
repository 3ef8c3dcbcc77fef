"""``specpool`` command-line interface.

Every command takes an optional config file of ``key=value`` lines (``#``
starts a comment) followed by ``key=value`` overrides. Exit codes: 0 ok,
1 usage or configuration error, 2 data error, 3 numerical failure.
"""

import argparse
import datetime
import logging
import math
import os
import sys
import time

import numpy as np

from . import backend, bench, data_io, selftest
from . import model as M
from . import training as T
from .errors import ConfigurationError, InputError, SpecPoolError
from .graph_spectral import WeightScheme, build_graph, spectral_coordinates
from .sampling import fps, knn_many

log = logging.getLogger("specpool")

DEFAULTS = {
    "arch": "4l-spec-cp",
    "arch_scale": "scaled",
    "centroids": "64,16",
    "ks": "32,8",
    "widths": "64,128,256",
    "dataset": "synth",
    "data_dir": "",
    "mnist_dir": "",
    "mnist_points": "full",
    "n_train": "400",
    "n_test": "100",
    "n_points": "256",
    "noise": "0.02",
    "data_seed": "0",
    "epochs": "50",
    "seed": "0",
    "seeds": "0,1,2",
    "lr": "0.001",
    "batch_size": "32",
    "weight_scheme": "gaussian",
    "graph_source": "spatial",
    "augment": "none",
    "deterministic": "false",
    "threads": "0",
    "out_dir": "",
    "checkpoint": "",
    "k": "16",
    "spectra_centroids": "1",
}
VALID_KEYS = tuple(sorted(DEFAULTS))
DATASETS = ("synth", "synth_parts", "mnist", "dir")
ABLATION_VARIANTS = ("4l-pointnet++", "4l-spec-max", "4l-spec-cp")
ABLATION_HEADER = "variant,acc_mean,acc_sd,wall_seconds,epoch_seconds,ordering_holds"
MANIFEST = "manifest.txt"


# ---------------------------------------------------------------------------
# config


def parse_config_text(text, path="<config>"):
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}:{n}: expected key=value, got {raw.strip()!r}")
        out[key.strip()] = value.strip()
    return out


def _check_keys(cfg):
    bad = sorted(set(cfg) - set(DEFAULTS))
    if bad:
        raise ConfigurationError(
            f"unknown config key(s) {', '.join(bad)}; valid keys: {', '.join(VALID_KEYS)}")


def resolve(config_path=None, overrides=()):
    """Defaults, then the config file, then command-line overrides."""
    cfg = dict(DEFAULTS)
    if config_path:
        if not os.path.isfile(config_path):
            raise ConfigurationError(f"config file not found: {config_path}")
        with open(config_path, encoding="utf-8") as fh:
            from_file = parse_config_text(fh.read(), config_path)
        _check_keys(from_file)
        cfg.update(from_file)
    over = parse_config_text("\n".join(overrides), "<command line>")
    _check_keys(over)
    cfg.update(over)
    return cfg


def _int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigurationError(f"{key} must be an integer, got {cfg[key]!r}") from None


def _float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigurationError(f"{key} must be a number, got {cfg[key]!r}") from None


def _ints(cfg, key):
    try:
        return tuple(int(t) for t in cfg[key].split(",") if t.strip())
    except ValueError:
        raise ConfigurationError(f"{key} must be a comma-separated list of integers") from None


def _bool(cfg, key):
    v = cfg[key].lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"{key} must be true or false, got {cfg[key]!r}")


def train_config(cfg, seed=None):
    aug = cfg["augment"].strip().lower()
    if aug in ("", "none"):
        switches = ()
    elif aug == "all":
        switches = T.AUGMENTATIONS
    else:
        switches = tuple(a.strip() for a in aug.split(","))
        unknown = sorted(set(switches) - set(T.AUGMENTATIONS))
        if unknown:
            raise ConfigurationError(f"unknown augmentation(s) {unknown}; valid: {', '.join(T.AUGMENTATIONS)}")
    return T.TrainConfig(
        epochs=_int(cfg, "epochs"),
        seed=_int(cfg, "seed") if seed is None else seed,
        base_lr=_float(cfg, "lr"),
        batch_size=_int(cfg, "batch_size"),
        augment=switches,
        deterministic=_bool(cfg, "deterministic"),
        threads=_int(cfg, "threads"),
    )


# ---------------------------------------------------------------------------
# data and architecture


def _mnist_file(directory, stem):
    for name in (stem, stem + ".gz"):
        p = os.path.join(directory, name)
        if os.path.isfile(p):
            return p
    raise InputError(f"MNIST file {stem}[.gz] not found in {directory!r}")


def load_data(cfg):
    """``(train, test)`` datasets for the configured source."""
    kind = cfg["dataset"]
    n_train, n_test = _int(cfg, "n_train"), _int(cfg, "n_test")
    n_points, noise, dseed = _int(cfg, "n_points"), _float(cfg, "noise"), _int(cfg, "data_seed")
    if kind == "synth":
        n_cls = len(data_io.SHAPES)

        def make(n, part, split):
            ds = data_io.synth_shapes(math.ceil(n / n_cls), n_points, noise, [dseed, part], split=split)
            return ds.subset(range(n), split)

        return make(n_train, 0, "train"), make(n_test, 1, "test")
    if kind == "synth_parts":
        return (data_io.synth_parts(n_train, n_points, noise, [dseed, 0], split="train"),
                data_io.synth_parts(n_test, n_points, noise, [dseed, 1], split="test"))
    if kind == "mnist":
        d = cfg["mnist_dir"]
        if not d:
            raise ConfigurationError("dataset=mnist needs mnist_dir")
        mode = cfg["mnist_points"]
        mode = mode if mode == "full" else _int(cfg, "mnist_points")
        tr = data_io.mnist_dataset(_mnist_file(d, "train-images-idx3-ubyte"),
                                   _mnist_file(d, "train-labels-idx1-ubyte"), mode, n_train, "train")
        te = data_io.mnist_dataset(_mnist_file(d, "t10k-images-idx3-ubyte"),
                                   _mnist_file(d, "t10k-labels-idx1-ubyte"), mode, n_test, "test")
        return tr, te
    if kind == "dir":
        d = cfg["data_dir"]
        if not d:
            raise ConfigurationError("dataset=dir needs data_dir (with train/ and test/ inside)")
        tr = data_io.load_dataset(os.path.join(d, "train"))
        test_dir = os.path.join(d, "test")
        te = data_io.load_dataset(test_dir) if os.path.isdir(test_dir) else None
        return tr, te
    raise ConfigurationError(f"unknown dataset {kind!r}; valid: {', '.join(DATASETS)}")


def build_arch(cfg, dataset, variant=None):
    variant = variant or cfg["arch"]
    if variant not in M.VARIANTS:
        raise ConfigurationError(f"unknown arch {variant!r}; valid: {', '.join(M.VARIANTS)}")
    first = dataset.clouds[0]
    kw = dict(
        dim=first.coords.shape[1],
        in_features=0 if first.features is None else first.features.shape[1],
        weight_scheme=WeightScheme.parse(cfg["weight_scheme"]),
        graph_source=cfg["graph_source"],
    )
    head = M.SEGMENT if dataset.task == "segment" else M.CLASSIFY
    n_out = len(dataset.class_names)
    scale = cfg["arch_scale"]
    if scale == "scaled":
        return M.scaled_arch(variant, n_out, head, centroids=_ints(cfg, "centroids"),
                             widths=_ints(cfg, "widths"), ks=_ints(cfg, "ks"), **kw)
    if scale in ("1k", "2k"):
        if head != M.CLASSIFY:
            raise ConfigurationError("full-size architectures are classification only")
        return M.table1_arch(variant, scale, n_out, **kw)
    raise ConfigurationError(f"unknown arch_scale {scale!r}; valid: scaled, 1k, 2k")


# ---------------------------------------------------------------------------
# run artifacts


def version_tag():
    try:
        from importlib.metadata import version

        v = version("specpool")
    except Exception:  # not installed as a distribution
        v = "0+unknown"
    return f"{v}+{backend.NAME}"


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, cfg, seed, fingerprint):
    """Sorted ``key=value`` record of the run, written once before training."""
    entries = {f"config.{k}": v for k, v in cfg.items()}
    entries.update(seed=str(seed), version=version_tag(), dataset_fingerprint=fingerprint,
                   start_time=_now())
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "x", encoding="utf-8", newline="\n") as fh:
        for k in sorted(entries):
            fh.write(f"{k}={entries[k]}\n")
    return path


def _finish(out_dir):
    with open(os.path.join(out_dir, "end_time.txt"), "w", encoding="utf-8") as fh:
        fh.write(_now() + "\n")


def _out_dir(cfg):
    d = cfg["out_dir"]
    if not d:
        raise ConfigurationError("out_dir is required")
    os.makedirs(d, exist_ok=True)
    if os.path.exists(os.path.join(d, MANIFEST)):
        raise ConfigurationError(f"{d} already holds a run; choose a fresh out_dir")
    return d


# ---------------------------------------------------------------------------
# commands


def cmd_train(config_path=None, overrides=()):
    cfg = resolve(config_path, overrides)
    out = _out_dir(cfg)
    tc = train_config(cfg)
    train_set, test_set = load_data(cfg)
    arch = build_arch(cfg, train_set)
    write_manifest(out, cfg, tc.seed, train_set.fingerprint())
    result = T.train(tc, arch, train_set, test_set, out_dir=out)
    _finish(out)
    for k, v in sorted(result.final.items()):
        print(f"{k}={v:.4f}")
    return 0


def cmd_evaluate(config_path=None, overrides=()):
    cfg = resolve(config_path, overrides)
    if not cfg["checkpoint"]:
        raise ConfigurationError("evaluate needs checkpoint=PATH")
    state = M.load_checkpoint(cfg["checkpoint"])
    _, test_set = load_data(cfg)
    if test_set is None:
        raise InputError("no test split to evaluate")
    with T._blas_limit(train_config(cfg)):
        metrics = T.evaluate(state, test_set)
    lines = [f"{k}={v:.6f}" for k, v in sorted(metrics.items())]
    print("\n".join(lines))
    if cfg["out_dir"]:
        os.makedirs(cfg["out_dir"], exist_ok=True)
        with open(os.path.join(cfg["out_dir"], "evaluation.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def ablate(cfg, variants=ABLATION_VARIANTS, out=None):
    """Train every variant on every seed. Returns one row per variant."""
    seeds = _ints(cfg, "seeds")
    if not seeds:
        raise ConfigurationError("seeds must list at least one seed")
    train_set, test_set = load_data(cfg)
    if test_set is None:
        raise InputError("ablation needs a test split")
    rows = []
    for variant in variants:
        arch = build_arch(cfg, train_set, variant)
        accs, walls, epoch_secs = [], [], []
        for seed in seeds:
            t0 = time.perf_counter()
            run_dir = os.path.join(out, f"{variant}-seed{seed}") if out else None
            res = T.train(train_config(cfg, seed), arch, train_set, test_set, out_dir=run_dir)
            walls.append(time.perf_counter() - t0)
            epoch_secs.extend(res.epoch_seconds)
            accs.append(T.test_metric(res.final))
            log.info("%s seed %d: %.4f", variant, seed, accs[-1])
        rows.append([variant, float(np.mean(accs)), float(np.std(accs)), float(np.mean(walls)),
                     float(np.median(epoch_secs))])
    means = [r[1] for r in rows]
    holds = all(a <= b for a, b in zip(means, means[1:]))
    for r in rows:
        r.append(holds)
    return rows


def format_ablation(rows):
    lines = [ABLATION_HEADER]
    for v, mean, sd, wall, ep, holds in rows:
        lines.append(f"{v},{mean:.4f},{sd:.4f},{wall:.2f},{ep:.3f},{str(holds).lower()}")
    return "\n".join(lines) + "\n"


def cmd_ablate(config_path=None, overrides=()):
    cfg = resolve(config_path, overrides)
    out = _out_dir(cfg)
    train_set, _ = load_data(cfg)
    write_manifest(out, cfg, cfg["seeds"], train_set.fingerprint())
    text = format_ablation(ablate(cfg, out=out))
    with open(os.path.join(out, "ablation.csv"), "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    _finish(out)
    print(text, end="")
    return 0


def load_cloud(path, n_points=1024, seed=0):
    """Read an ``.xyz`` point file or sample an ``.off`` mesh."""
    if not os.path.isfile(path):
        raise InputError(f"cloud file not found: {path}")
    if path.lower().endswith(".off"):
        return data_io.PointCloud(data_io.sample_mesh(data_io.load_off(path), n_points, seed))
    return data_io.load_xyz(path)


def spectra_rows(coords, k, n_centroids=1, scheme=None):
    """``(point_index, phi...)`` rows: one k-NN graph per FPS centroid, blocks in centroid order."""
    coords = np.asarray(coords, dtype=np.float64)
    if not 2 <= k <= len(coords):
        raise ConfigurationError(f"k must be in [2, {len(coords)}], got {k}")
    cents = fps(coords, n_centroids)
    members = knn_many(coords, cents, k)
    rows = []
    for mem in members:
        graph = build_graph(coords[mem] - coords[mem[0]], scheme or WeightScheme())
        phi = spectral_coordinates(graph)
        for i, p in zip(mem, phi):
            rows.append((int(i),) + tuple(float(v) for v in p))
    return rows


def format_spectra(rows):
    n_phi = len(rows[0]) - 1
    lines = ["point_index," + ",".join(f"phi{j + 1}" for j in range(n_phi))]
    for r in rows:
        lines.append(",".join([str(r[0])] + [repr(v) for v in r[1:]]))
    return "\n".join(lines) + "\n"


def cmd_spectra(cloud_path, overrides=()):
    cfg = resolve(None, overrides)
    cloud = load_cloud(cloud_path, _int(cfg, "n_points"), _int(cfg, "data_seed"))
    rows = spectra_rows(cloud.coords, _int(cfg, "k"), _int(cfg, "spectra_centroids"),
                        WeightScheme.parse(cfg["weight_scheme"]))
    text = format_spectra(rows)
    if cfg["out_dir"]:
        os.makedirs(cfg["out_dir"], exist_ok=True)
        with open(os.path.join(cfg["out_dir"], "spectra.csv"), "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_selftest(seed=0):
    failed = selftest.run(seed)
    if failed:
        print(f"selftest FAILED: {', '.join(failed)}")
        return 3
    print("selftest passed")
    return 0


def cmd_bench(overrides=()):
    cfg = resolve(None, overrides)
    text = bench.format_rows(bench.run())
    if cfg["out_dir"]:
        os.makedirs(cfg["out_dir"], exist_ok=True)
        with open(os.path.join(cfg["out_dir"], "bench.csv"), "w", encoding="ascii") as fh:
            fh.write(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _split(args):
    """A leading argument without ``=`` is the config path."""
    if args and "=" not in args[0]:
        return args[0], args[1:]
    return None, args


def build_parser():
    p = _Parser(prog="specpool", description="Spectral graph convolution on point sets.")
    p.add_argument("-q", "--quiet", action="store_true", help="only print results")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("train", "train a model and write metrics, checkpoint and manifest"),
                       ("evaluate", "evaluate a checkpoint on the configured test split"),
                       ("ablate", "compare point-MLP, spec-max and spec-cp over several seeds")):
        s = sub.add_parser(name, help=text)
        s.add_argument("args", nargs="*", metavar="[CONFIG] key=value", help="config file and overrides")
    s = sub.add_parser("spectra", help="dump low-frequency spectral coordinates of a cloud as CSV")
    s.add_argument("cloud", help=".xyz or .off file")
    s.add_argument("args", nargs="*", metavar="key=value")
    s = sub.add_parser("selftest", help="run the property suites")
    s.add_argument("--seed", type=int, default=0)
    s = sub.add_parser("bench", help="time the compiled kernels against the numpy fallback")
    s.add_argument("args", nargs="*", metavar="key=value")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.command == "train":
            return cmd_train(*_split(args.args))
        if args.command == "evaluate":
            return cmd_evaluate(*_split(args.args))
        if args.command == "ablate":
            return cmd_ablate(*_split(args.args))
        if args.command == "spectra":
            return cmd_spectra(args.cloud, args.args)
        if args.command == "selftest":
            return cmd_selftest(args.seed)
        return cmd_bench(args.args)
    except SpecPoolError as exc:
        print(f"specpool: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"specpool: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
