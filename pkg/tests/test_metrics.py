"""Metric oracles: reference-implementation agreement and algebraic cases."""

import math

import numpy as np
import pytest
import torch
from skimage.metrics import structural_similarity as skimage_ssim

from dva import FeatureUnavailable
from dva.metrics import (
    ConsistencyReport,
    consistency_report,
    lpips,
    ms_ssim,
    mse,
    ssim,
    tg_id,
    tl_id,
)


def random_image(rng, c=3, h=32, w=32):
    return rng.uniform(-1, 1, (c, h, w))


# --- mse ------------------------------------------------------------------------

def test_mse_identical_is_zero_and_symmetric():
    rng = np.random.default_rng(0)
    a, b = random_image(rng), random_image(rng)
    assert mse(a, a) == 0.0
    assert math.isclose(mse(a, b), mse(b, a), rel_tol=0)


def test_mse_uses_unit_scale():
    a = -np.ones((3, 16, 16))
    b = np.ones((3, 16, 16))
    assert math.isclose(mse(a, b), 1.0)  # [-1,1] maps to [0,1]: diff 1 everywhere


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        mse(np.zeros((3, 16, 16)), np.zeros((3, 16, 17)))


# --- ssim -----------------------------------------------------------------------

def test_ssim_identical_is_one():
    rng = np.random.default_rng(1)
    a = random_image(rng)
    assert math.isclose(ssim(a, a), 1.0, abs_tol=1e-12)


def test_ssim_negated_structure_is_negative():
    rng = np.random.default_rng(2)
    a = random_image(rng)
    assert ssim(a, -a) < 0


def test_ssim_matches_reference_implementation():
    rng = np.random.default_rng(3)
    a = random_image(rng)
    for perturb in (0.05, 0.3):
        b = np.clip(a + perturb * rng.standard_normal(a.shape), -1, 1)
        ours = ssim(a, b)
        theirs = skimage_ssim(
            (a.transpose(1, 2, 0) + 1) / 2,
            (b.transpose(1, 2, 0) + 1) / 2,
            channel_axis=2,
            gaussian_weights=True,
            sigma=1.5,
            win_size=11,
            data_range=1.0,
            K1=0.01,
            K2=0.03,
        )
        assert abs(ours - theirs) < 1e-6, f"perturb={perturb}: {ours} vs {theirs}"


def test_ssim_scalar_shift_matches_reference():
    rng = np.random.default_rng(4)
    a = random_image(rng)
    b = np.clip(a + 0.2, -1, 1)
    theirs = skimage_ssim(
        (a.transpose(1, 2, 0) + 1) / 2, (b.transpose(1, 2, 0) + 1) / 2,
        channel_axis=2, gaussian_weights=True, sigma=1.5, win_size=11,
        data_range=1.0, K1=0.01, K2=0.03,
    )
    assert abs(ssim(a, b) - theirs) < 1e-6


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_ssim_symmetric():
    rng = np.random.default_rng(5)
    a, b = random_image(rng), random_image(rng)
    assert math.isclose(ssim(a, b), ssim(b, a), rel_tol=1e-12)


def test_ssim_batch_is_mean_of_frames():
    rng = np.random.default_rng(6)
    a = np.stack([random_image(rng) for _ in range(3)])
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), -1, 1)
    per_frame = [ssim(a[i], b[i]) for i in range(3)]
    assert math.isclose(ssim(a, b), float(np.mean(per_frame)), rel_tol=1e-12)


# --- ms-ssim ---------------------------------------------------------------------

def test_ms_ssim_identical_is_one():
    rng = np.random.default_rng(7)
    a = random_image(rng)
    assert math.isclose(ms_ssim(a, a), 1.0, abs_tol=1e-12)


def test_ms_ssim_decreases_with_noise():
    rng = np.random.default_rng(8)
    a = random_image(rng)
    small = ms_ssim(a, np.clip(a + 0.05 * rng.standard_normal(a.shape), -1, 1))
    large = ms_ssim(a, np.clip(a + 0.5 * rng.standard_normal(a.shape), -1, 1))
    assert large < small < 1.0


def test_ms_ssim_single_scale_equals_ssim():
    rng = np.random.default_rng(9)
    a = random_image(rng)
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), -1, 1)
    assert math.isclose(ms_ssim(a, b, scales=1), ssim(a, b), rel_tol=1e-12)


def test_ms_ssim_rejects_too_many_scales():
    with pytest.raises(ValueError):
        ms_ssim(np.zeros((3, 32, 32)), np.zeros((3, 32, 32)), scales=4)


# --- identity consistency ----------------------------------------------------------


class StubIdEncoder:
    """Maps each frame to a fixed unit vector keyed by its mean intensity sign
    pattern; deterministic and cheap, standing in for the trained encoder."""

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        feats = frames.mean(dim=(2, 3))  # (N, 3)
        z = torch.cat([feats, torch.ones(frames.shape[0], 1)], dim=1)
        return torch.nn.functional.normalize(z, dim=-1)


def make_video(rng, n=5, drift=0.0):
    base = random_image(rng)
    return np.stack(
        [np.clip(base + drift * k * rng.standard_normal(base.shape), -1, 1) for k in range(n)]
    ).astype(np.float32)


def test_consistency_metrics_equal_one_for_unedited_video():
    rng = np.random.default_rng(10)
    video = make_video(rng, drift=0.02)
    enc = StubIdEncoder()
    assert math.isclose(tl_id(video, video, enc), 1.0, abs_tol=1e-12)
    assert math.isclose(tg_id(video, video, enc), 1.0, abs_tol=1e-12)


def test_constant_edited_video_gives_inverse_cosine_mean():
    rng = np.random.default_rng(11)
    video = make_video(rng, drift=0.05)
    edited = np.repeat(video[:1], len(video), axis=0)
    enc = StubIdEncoder()
    z = enc.encode(torch.from_numpy(video))
    expected_tl = float(np.mean([1.0 / float(z[i] @ z[i + 1]) for i in range(len(video) - 1)]))
    got = tl_id(video, edited, enc)
    assert math.isclose(got, expected_tl, rel_tol=1e-6)
    assert got >= 1.0


def test_consistency_reversal_invariance():
    rng = np.random.default_rng(12)
    video = make_video(rng, drift=0.05)
    edited = make_video(rng, drift=0.05)
    enc = StubIdEncoder()
    assert math.isclose(
        tl_id(video, edited, enc), tl_id(video[::-1], edited[::-1], enc), rel_tol=1e-9
    )
    perm = np.random.default_rng(1).permutation(len(video))
    assert math.isclose(
        tg_id(video, edited, enc), tg_id(video[perm], edited[perm], enc), rel_tol=1e-9
    )


def test_consistency_needs_two_frames_and_equal_lengths():
    rng = np.random.default_rng(13)
    video = make_video(rng)
    enc = StubIdEncoder()
    with pytest.raises(ValueError):
        tl_id(video[:1], video[:1], enc)
    with pytest.raises(ValueError):
        tg_id(video, video[:3], enc)


def test_non_positive_original_cosine_reports_pair():
    class SignEncoder:
        def encode(self, frames):
            n = frames.shape[0]
            z = torch.zeros(n, 2)
            for i in range(n):
                z[i, 0] = 1.0 if i % 2 == 0 else -1.0
            return z

    video = np.zeros((3, 3, 16, 16), dtype=np.float32)
    with pytest.raises(ValueError, match=r"\(0, 1\)"):
        tl_id(video, video, SignEncoder())


def test_consistency_report_tables_and_csv(tmp_path):
    rng = np.random.default_rng(14)
    video = make_video(rng, n=4, drift=0.05)
    edited = make_video(rng, n=4, drift=0.05)
    enc = StubIdEncoder()
    report = consistency_report(video, edited, enc)
    assert isinstance(report, ConsistencyReport)
    assert len(report.tl_pairs) == 3
    assert len(report.tg_pairs) == 6
    assert math.isclose(report.tl_id, tl_id(video, edited, enc), rel_tol=1e-12)
    assert math.isclose(report.tg_id, tg_id(video, edited, enc), rel_tol=1e-12)
    out = report.write_csv(tmp_path / "report.csv")
    lines = out.read_text().splitlines()
    assert lines[0] == "metric,value"
    assert "TL-ID" in report.summary() and "TG-ID" in report.summary()


def test_lpips_is_declared_unavailable():
    with pytest.raises(FeatureUnavailable):
        lpips(np.zeros((3, 32, 32)), np.zeros((3, 32, 32)))
