import math

import numpy as np
import pytest

from instances import random_index
from poisson_mmse.core import add_poisson_noise, psnr
from poisson_mmse.denoiser import DenoiseParams, denoise_patch
from poisson_mmse.indexer import PatchCorpus, build_index
from poisson_mmse.pipeline import (
    CSV_COLUMNS,
    EvaluationReport,
    denoise_image,
    evaluate,
    realization_seeds,
)


@pytest.fixture(scope="module")
def flat_index():
    """Index over textured patches plus a block of perfectly flat ones."""
    rng = np.random.default_rng(0)
    textured = rng.gamma(4.0, 0.25, (600, 16))
    flat = np.ones((200, 16))
    return build_index(PatchCorpus(4, np.vstack([textured, flat])), 60, k=16,
                       n_trees=8, leaf_size=8, seed=0)


def test_patch_sized_image_is_one_patch():
    index = random_index(200, 4, 1)
    noisy = np.random.default_rng(2).poisson(3.0, (4, 4))
    out = denoise_image(noisy, index)
    assert out.tobytes() == denoise_patch(noisy.ravel(), index).reshape(4, 4).tobytes()


@pytest.mark.parametrize("shape", [(4, 9), (11, 5), (13, 13)])
def test_output_shape(shape):
    index = random_index(100, 4, 3)
    noisy = np.random.default_rng(4).poisson(2.0, shape)
    assert denoise_image(noisy, index).shape == shape


def test_too_small():
    with pytest.raises(ValueError, match="image smaller than patch"):
        denoise_image(np.ones((3, 3), int), random_index(50, 4, 0))


def test_constant_image_high_peak(flat_index):
    clean = np.full((32, 32), 50.0)
    noisy = add_poisson_noise(clean, 50.0, seed=5)
    out = denoise_image(noisy, flat_index)
    assert np.mean(np.abs(out - 50.0)) < 0.1 * 50.0


def test_workers_do_not_change_output(flat_index):
    noisy = np.random.default_rng(6).poisson(5.0, (20, 20))
    a = denoise_image(noisy, flat_index, workers=1)
    b = denoise_image(noisy, flat_index)
    assert a.tobytes() == b.tobytes()


def test_identity_psnr_at_peak_four():
    report = evaluate(np.ones((400, 400)), peaks=[4], realizations=1, seed=3,
                      denoiser=lambda counts: counts.astype(float))
    row = report.rows[0]
    assert 10 * math.log10(16 / 4) == pytest.approx(6.0206, abs=1e-4)
    assert row.psnr_noisy_db == pytest.approx(6.0206, abs=0.1)
    assert row.psnr_denoised_db == row.psnr_noisy_db


def test_evaluate_reproducible(flat_index):
    clean = np.random.default_rng(7).random((12, 12)) + 0.5
    a = evaluate(clean, flat_index, peaks=[1, 3], realizations=1, seed=9)
    b = evaluate(clean, flat_index, peaks=[1, 3], realizations=1, seed=9)
    assert a.rows == b.rows
    assert [r.peak for r in a.rows] == [1.0, 3.0]


def test_evaluate_matches_manual_loop(flat_index):
    clean = np.random.default_rng(8).random((10, 10)) + 0.2
    report = evaluate(clean, flat_index, peaks=[2], realizations=3, seed=1)
    target = clean * (2 / clean.max())
    noisy_db = [psnr(target, add_poisson_noise(clean, 2, s), 2)
                for s in realization_seeds(1, 0, 3)]
    assert report.rows[0].psnr_noisy_db == pytest.approx(np.mean(noisy_db), rel=1e-15)
    assert report.rows[0].realizations == 3


def test_realization_seeds_independent():
    a = realization_seeds(0, 0, 5)
    assert len(set(a)) == 5
    assert a == realization_seeds(0, 0, 5)
    assert set(a).isdisjoint(realization_seeds(0, 1, 5))


def test_evaluate_errors(flat_index):
    with pytest.raises(ValueError):
        evaluate(np.ones((8, 8)), flat_index, realizations=0)
    with pytest.raises(ValueError):
        evaluate(np.ones((8, 8)))


def test_report_csv_and_table(flat_index):
    report = evaluate(np.ones((8, 8)) + np.eye(8), flat_index, peaks=[2], realizations=1,
                      params=DenoiseParams(window=5), name="tiny")
    lines = report.to_csv().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert lines[1].startswith("tiny,2.0,1,")
    assert "tiny" in str(report)
    assert isinstance(report, EvaluationReport)
