"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Verdicts are also repeated in the "acceptance criteria" section at the end
of the pytest run.
"""

import csv
import io
import math
import struct
import time

import mpmath
import numpy as np
import pytest
from skimage import color, data, transform

from conftest import record
from instances import instances
from poisson_mmse.cli import run_cli
from poisson_mmse.core import add_poisson_noise, poisson_log_pmf
from poisson_mmse.denoiser import (
    DenoiseParams,
    brute_force_mmse_clusters,
    brute_force_mmse_corpus,
    denoise_patch,
)
from poisson_mmse.indexer import (
    ClusterModel,
    PatchCorpus,
    build_index,
    build_kd_forest,
    build_knn_graph,
    ingest_corpus,
    kmeans_cluster,
    load_index,
    save_index,
)
from poisson_mmse.indexer.index import (
    IndexVersionError,
    InconsistentIndexError,
    NotAnIndexFileError,
    TruncatedIndexError,
)
from poisson_mmse.pipeline import evaluate
from poisson_mmse import imageio


def mp_log_pmf(y, x):
    with mpmath.workdps(50):
        if x == 0:
            return 0.0 if y == 0 else -math.inf
        x = mpmath.mpf(x)
        return float(mpmath.log(x ** y * mpmath.exp(-x) / mpmath.factorial(y)))


def test_criterion_01_likelihood_exactness():
    start = time.perf_counter()
    worst = 0.0
    for y in range(21):
        for x in (0.0, 0.1, 1.0, 5.0, 20.0):
            got, ref = poisson_log_pmf(y, x), mp_log_pmf(y, x)
            if math.isinf(ref):
                worst = max(worst, 0.0 if got == ref else math.inf)
            elif ref == 0.0:
                worst = max(worst, abs(got))
            else:
                worst = max(worst, abs(got - ref) / abs(ref))
    examples = (poisson_log_pmf(0, 0.0) == 0.0
                and poisson_log_pmf(3, 0.0) == -math.inf
                and math.isclose(poisson_log_pmf(2, 1.0), -1.0 - math.log(2.0), rel_tol=1e-15)
                and round(poisson_log_pmf(2, 1.0), 7) == -1.6931472)
    seconds = time.perf_counter() - start
    ok = worst <= 1e-12 and examples and seconds < 1.0
    record(1, "likelihood exactness", ok,
           f"max rel err {worst:.2e}, examples {'hold' if examples else 'FAIL'}, {seconds:.2f} s")
    assert ok


@pytest.fixture(scope="module")
def random_instances():
    """The 100 (index, y) instances shared by criteria 2 and 3."""
    start = time.perf_counter()
    pairs = list(instances(100, side=4, base_seed=2024))
    return pairs, time.perf_counter() - start


@pytest.fixture(scope="module")
def oracle_values(random_instances):
    pairs, _ = random_instances
    return [brute_force_mmse_clusters(y, index.model, y.mean()) for index, y in pairs]


def test_criterion_02_oracle_equivalence(random_instances, oracle_values):
    pairs, build_seconds = random_instances
    start = time.perf_counter()
    worst = 0.0
    covered = True
    for (index, y), ref in zip(pairs, oracle_values):
        out, info = denoise_patch(y, index, DenoiseParams(exhaustive=True), full_output=True)
        worst = max(worst, float(np.max(np.abs(out - ref) / np.abs(ref))))
        covered &= info["processed"] == index.n_clusters
    seconds = time.perf_counter() - start
    ok = worst <= 1e-9 and covered and seconds < 30.0
    record(2, "oracle equivalence (exhaustive search)", ok,
           f"max rel err {worst:.2e} over 100 instances, {seconds:.1f} s "
           f"+ {build_seconds:.1f} s building indexes")
    assert ok


def test_criterion_03_early_termination(random_instances, oracle_values):
    pairs, _ = random_instances
    start = time.perf_counter()
    faithful = below = 0
    worst = 0.0
    for (index, y), ref in zip(pairs, oracle_values):
        out, info = denoise_patch(y, index, DenoiseParams(), full_output=True)
        dev = float(np.mean(np.abs(out - ref))) / y.mean()
        worst = max(worst, dev)
        faithful += dev <= 1e-6
        below += info["processed"] < index.n_clusters
    seconds = time.perf_counter() - start
    ok = faithful == len(pairs) and below >= 0.9 * len(pairs) and seconds < 60.0
    record(3, "early-termination fidelity", ok,
           f"deviation <= 1e-6*mu in {faithful}/100 (worst {worst:.1e}*mu), "
           f"processed < N_C in {below}/100, {seconds:.1f} s")
    assert ok


def test_criterion_04_cluster_corpus_degeneracy():
    identical = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = (4, 16)[seed % 2]
        patches = rng.gamma(2.0, 0.5, (int(rng.integers(5, 300)), d))
        y = rng.poisson(rng.uniform(1, 10) * patches[rng.integers(len(patches))])
        mu = y.mean() if y.sum() else 1.0
        a = brute_force_mmse_clusters(y, ClusterModel(patches, np.ones(len(patches), int)), mu)
        b = brute_force_mmse_corpus(y, PatchCorpus(int(math.isqrt(d)), patches), mu)
        identical += a.tobytes() == b.tobytes()
    ok = identical == 20
    record(4, "unit-count clusters equal the corpus estimator", ok,
           f"{identical}/20 bitwise identical")
    assert ok


def test_criterion_05_clustering_invariants():
    rng = np.random.default_rng(5)
    # patch-like data: a few smooth prototypes plus noise
    protos = rng.gamma(2.0, 0.5, (30, 16))
    X = protos[rng.integers(30, size=10_000)] + rng.normal(0, 0.3, (10_000, 16))
    max_iters = 500
    model = kmeans_cluster(PatchCorpus(4, X), 100, max_iters=max_iters, seed=1, tol=0.0)
    hist = np.array(model.wcss_history)
    monotone = bool(np.all(np.diff(hist) <= 0))
    total = int(model.counts.sum()) == len(X)
    d2 = ((X[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
    own = d2[np.arange(len(X)), model.labels]
    nearest = bool(np.all(own <= d2.min(axis=1) + 1e-9 * (1 + own)))
    ok = monotone and total and nearest
    record(5, "clustering invariants", ok,
           f"{len(hist)} rounds, WCSS monotone {monotone}, sum n_j = N_P {total}, "
           f"nearest-centroid {nearest}")
    assert ok


def brute_knn(points, k):
    p = points.astype(np.float64)
    out = np.empty((len(p), k), dtype=np.int64)
    for j in range(len(p)):
        d2 = ((p - p[j]) ** 2).sum(axis=1)
        d2[j] = np.inf
        out[j] = np.lexsort((np.arange(len(p)), d2))[:k]
    return out


def test_criterion_06_search_structures():
    graphs_ok = partitions_ok = True
    for n, d, k in ((50, 16, 32), (500, 16, 32), (2000, 16, 32), (2000, 64, 128)):
        rng = np.random.default_rng(n + d)
        c = rng.gamma(2.0, 0.5, (n, d)).astype(np.float32)
        c[n // 2:n // 2 + 10] = c[:10]  # duplicates force distance ties
        model = ClusterModel(c, rng.integers(1, 50, n))
        graphs_ok &= np.array_equal(build_knn_graph(model, k).neighbors, brute_knn(c, k))
        for tree in build_kd_forest(model, 64, 32, seed=n).trees:
            leaves = tree.leaves()
            partitions_ok &= (np.array_equal(np.sort(np.concatenate(leaves)), np.arange(n))
                              and max(map(len, leaves)) <= 32)
    ok = bool(graphs_ok and partitions_ok)
    record(6, "search-structure exactness", ok,
           f"K-NN graph equals brute force {graphs_ok}, leaves partition {partitions_ok}")
    assert ok


def test_criterion_07_noise_generator():
    counts = add_poisson_noise(np.ones((1000, 1000)), 4.0, seed=7)
    mean, var = counts.mean(), counts.var()
    report = evaluate(np.ones((400, 400)), peaks=[4], realizations=1, seed=7,
                      denoiser=lambda c: c.astype(float))
    db = report.rows[0].psnr_noisy_db
    ok = 3.99 <= mean <= 4.01 and 3.95 <= var <= 4.05 and abs(db - 6.02) <= 0.1
    record(7, "noise generator", ok,
           f"mean {mean:.4f}, variance {var:.4f}, identity PSNR {db:.3f} dB")
    assert ok


def _gray(img):
    return color.rgb2gray(img) if img.ndim == 3 else img / 255.0


TRAINING = ("astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field",
            "immunohistochemistry")


@pytest.mark.slow
def test_criterion_08_desk_scale_experiment(tmp_path):
    start = time.perf_counter()
    train = [transform.rescale(_gray(getattr(data, name)()), 0.5, anti_aliasing=True)
             for name in TRAINING]
    corpus = ingest_corpus(train, 8, cap=100_000, seed=0)
    index = build_index(corpus, 10_000, k=128, n_trees=64, leaf_size=32, seed=0, max_iters=10)
    build_seconds = time.perf_counter() - start
    clean = transform.rescale(data.camera() / 255.0, 0.25, anti_aliasing=True)
    assert clean.shape == (128, 128)
    report = evaluate(clean, index, peaks=[1, 2, 5], realizations=5, seed=0, name="camera")
    seconds = time.perf_counter() - start
    gains = {row.peak: row.gain_db for row in report.rows}
    print(report.to_table())
    ok = (len(corpus) >= 100_000 and all(g >= 3.0 for g in gains.values())
          and gains[1.0] > gains[5.0] and seconds < 15 * 60)
    record(8, "desk-scale end-to-end", ok,
           "gains " + ", ".join(f"peak {p:g}: {g:+.2f} dB" for p, g in gains.items())
           + f", {seconds / 60:.1f} min incl. {build_seconds / 60:.1f} min indexing")
    assert ok


def test_criterion_09_persistence(tmp_path):
    rng = np.random.default_rng(9)
    index = build_index(PatchCorpus(3, rng.gamma(2.0, 5.0, (3000, 9))), 10, k=4,
                        n_trees=4, leaf_size=3, seed=2)
    path = tmp_path / "a.pmse"
    save_index(index, path)
    back = load_index(path)
    save_index(back, tmp_path / "b.pmse")
    raw = path.read_bytes()
    roundtrip = (raw == (tmp_path / "b.pmse").read_bytes()
                 and back.model.centroids.tobytes() == index.model.centroids.tobytes()
                 and int(back.model.counts.sum()) == 3000)

    header = struct.calcsize("<4sIIQIIId")
    cases = {
        NotAnIndexFileError: b"XXXX" + raw[4:],
        IndexVersionError: raw[:4] + struct.pack("<I", 9) + raw[8:],
        TruncatedIndexError: raw[:header + 4 * 13],
        InconsistentIndexError: raw + b"\0",
    }
    errors_ok = True
    for error, payload in cases.items():
        bad = tmp_path / "bad.pmse"
        bad.write_bytes(payload)
        try:
            load_index(bad)
            errors_ok = False
        except error as exc:
            if error is NotAnIndexFileError:
                errors_ok &= "not an index file" in str(exc)
            if error is TruncatedIndexError:
                errors_ok &= "unexpected end of file" in str(exc)
    ok = roundtrip and errors_ok
    record(9, "persistence", ok, f"bitwise round trip {roundtrip}, error cases {errors_ok}")
    assert ok


def _run_pipeline(root, train, test):
    """build-index, simulate, denoise, evaluate; returns the produced bytes."""
    root.mkdir()
    index, noisy, out, report = (str(root / n) for n in
                                 ("i.pmse", "n.pgm", "d.pfm", "r.csv"))
    codes = [
        run_cli(["build-index", "--input", train, "--output", index, "--side", "6",
                 "--clusters", "300", "--cap", "15000", "--trees", "8", "--max-iters", "8",
                 "--seed", "3"]),
        run_cli(["simulate", "--input", test, "--peak", "2", "--seed", "4", "--output", noisy]),
        run_cli(["denoise", "--index", index, "--input", noisy, "--output", out,
                 "--workers", "1"]),
        run_cli(["evaluate", "--clean", test, "--index", index, "--peaks", "1", "3",
                 "--realizations", "2", "--workers", "1", "--output", report]),
    ]
    # wall-clock seconds are the one column that cannot repeat
    rows = [{k: v for k, v in r.items() if k != "seconds"}
            for r in csv.DictReader(io.StringIO(open(report).read()))]
    files = [open(p, "rb").read() for p in (index, noisy, out)]
    return codes, files, rows


def test_criterion_10_determinism(tmp_path):
    rng_img = np.random.default_rng(10).random((60, 60))
    seeded = (
        add_poisson_noise(rng_img, 3, 5).tobytes() == add_poisson_noise(rng_img, 3, 5).tobytes()
        and ingest_corpus([rng_img], 5, cap=500, seed=1).patches.tobytes()
        == ingest_corpus([rng_img], 5, cap=500, seed=1).patches.tobytes()
    )
    corpus = PatchCorpus(4, np.random.default_rng(11).gamma(2.0, 0.5, (2000, 16)))
    a = build_index(corpus, 100, k=8, n_trees=4, leaf_size=8, seed=6)
    b = build_index(corpus, 100, k=8, n_trees=4, leaf_size=8, seed=6)
    save_index(a, tmp_path / "a.pmse")
    save_index(b, tmp_path / "b.pmse")
    seeded &= (tmp_path / "a.pmse").read_bytes() == (tmp_path / "b.pmse").read_bytes()

    train_dir = tmp_path / "train"
    train_dir.mkdir()
    for name in TRAINING[:3]:
        img = transform.rescale(_gray(getattr(data, name)()), 0.25, anti_aliasing=True)
        imageio.write_pgm(train_dir / f"{name}.pgm", np.rint(img * 255).astype(int))
    test = tmp_path / "camera.pgm"
    imageio.write_pgm(test, np.rint(transform.resize(data.camera(), (48, 48),
                                                     preserve_range=True)).astype(int))
    first = _run_pipeline(tmp_path / "run1", str(train_dir), str(test))
    second = _run_pipeline(tmp_path / "run2", str(train_dir), str(test))
    cli_ok = first[0] == [0, 0, 0, 0] and first == second
    ok = bool(seeded and cli_ok)
    record(10, "determinism", ok, f"seeded operations {bool(seeded)}, CLI pipeline {cli_ok}")
    assert ok
