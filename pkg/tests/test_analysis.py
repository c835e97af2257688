import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from skimage.metrics import structural_similarity

from fourierpet import analysis
from fourierpet.projector import build_parallel_projector
from fourierpet.simulator import DegradationConfig, make_phantom, simulate_pair

images = arrays(np.float64, (12, 12), elements=st.floats(0.0, 10.0))


def test_identical_images():
    x = np.random.default_rng(0).random((16, 16))
    assert analysis.rmse(x, x) == 0
    assert analysis.psnr(x, x) == float("inf")
    assert analysis.ssim(x, x) == pytest.approx(1.0)


def test_constant_offset_psnr():
    b = np.random.default_rng(1).random((16, 16))
    b /= b.max()
    assert analysis.rmse(b + 0.1, b) == pytest.approx(0.1)
    assert analysis.psnr(b + 0.1, b) == pytest.approx(20.0)


def test_ssim_matches_skimage():
    rng = np.random.default_rng(2)
    for _ in range(5):
        ref = rng.random((24, 20))
        img = ref + 0.2 * rng.standard_normal(ref.shape)
        ours = analysis.ssim(img, ref, data_range=1.0)
        theirs = structural_similarity(img, ref, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False)
        assert ours == pytest.approx(theirs, abs=1e-10)


def test_suv_max_empty_roi_rejected():
    with pytest.raises(ValueError, match="empty"):
        analysis.suv_max(np.ones((4, 4)), np.zeros((4, 4), bool))


def test_self_swap_identity():
    x = make_phantom("ellipse_brain", (32, 32), 0).activity
    np.testing.assert_allclose(analysis.swap_hybrid(x, x), x, atol=1e-10)


def test_swap_keeps_amplitude_of_amp_source():
    rng = np.random.default_rng(3)
    a, b = rng.random((2, 16, 16))
    h = analysis.swap_hybrid(a, b, clamp=False)
    # the real part of a Hermitian-symmetric spectrum is the spectrum itself
    np.testing.assert_allclose(np.abs(np.fft.fft2(h)), np.abs(np.fft.fft2(a)), atol=1e-9)


def test_swap_is_not_commutative():
    A = build_parallel_projector((32, 32))
    pair = simulate_pair(A, make_phantom("hot_spheres", (32, 32), 1), DegradationConfig(seed=1))
    low, full = analysis.reconstruct_pair(A, pair)
    assert np.abs(analysis.swap_hybrid(full, low) - analysis.swap_hybrid(low, full)).max() > 1e-3


def test_swap_study_table():
    A = build_parallel_projector((32, 32))
    pair = simulate_pair(A, make_phantom("ellipse_brain", (32, 32), 2), DegradationConfig(seed=2))
    low, full = analysis.reconstruct_pair(A, pair)
    rep = analysis.swap_study(pair.truth, low, full)
    assert [r["config"] for r in rep.rows] == [k for k, _ in analysis.SWAP_CONFIGS]
    assert all({"psnr", "rmse", "suv_max"} <= set(r) for r in rep.rows)
    assert rep.column("psnr")[3] == max(rep.column("psnr"))
    assert len(rep.to_table().splitlines()) == 6
    assert len(rep.to_records().splitlines()) == 4


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        analysis.swap_hybrid(np.ones((4, 4)), np.ones((4, 6)))
    with pytest.raises(ValueError):
        analysis.freq_error_map(np.ones((4, 4)), np.ones((6, 4)))
    with pytest.raises(ValueError):
        analysis.deviation_profile(np.ones((4, 4)), np.ones((6, 4)))


def test_profile_ring_partition():
    idx, edges = analysis.ring_index((32, 32), 8)
    assert edges[-1] == pytest.approx(np.sqrt(2) / 2)
    assert set(np.unique(idx)) == set(range(8))


def test_freq_error_scaling_is_log2():
    x = np.random.default_rng(4).random((16, 16)) + 0.1
    np.testing.assert_allclose(analysis.freq_error_map(2 * x, x), np.log(2), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(images, images)
def test_freq_error_antisymmetric(a, b):
    np.testing.assert_allclose(analysis.freq_error_map(a, b), -analysis.freq_error_map(b, a), atol=1e-12)
    assert not analysis.freq_error_map(a, a).any()


@settings(max_examples=40, deadline=None)
@given(images)
def test_profile_of_identical_images_is_zero(x):
    prof = analysis.deviation_profile(x, x, 4)
    for arr in (prof.amp_dev, prof.amp_var, prof.phase_dev, prof.phase_var):
        np.testing.assert_array_equal(arr, 0)
    for st_ in prof.bands.values():
        assert all(v == 0 for v in st_.values())


@settings(max_examples=40, deadline=None)
@given(images, images)
def test_rmse_symmetric_and_ssim_bounded(a, b):
    assert analysis.rmse(a, b) == pytest.approx(analysis.rmse(b, a))
    if np.ptp(b) > 0:
        assert -1 - 1e-12 <= analysis.ssim(a, b) <= 1 + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_angular_distance_wrapped(p, q):
    d = analysis.angular_distance(p, q)
    assert 0 <= d <= np.pi + 1e-12
    assert d == pytest.approx(analysis.angular_distance(p + 2 * np.pi, q), abs=1e-9)


def test_score_batch():
    rng = np.random.default_rng(5)
    t = rng.random((3, 16, 16))
    out = analysis.score_batch(t + 0.01, t)
    assert out["rmse"] == pytest.approx(0.01)
