"""Reconstruction quality and temporal identity-consistency metrics.

MSE/SSIM/MS-SSIM take images (or stacks of images) valued in [-1, 1] and map
them to [0, 1] internally, so the SSIM dynamic range is 1. SSIM uses the
standard 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03) with sample-
covariance normalization and border cropping, matching the common reference
implementation. MS-SSIM evaluates 3 dyadic scales with the standard weights
renormalized to sum to one, shrinking the window when a scale is smaller
than it.

TL-ID / TG-ID compare identity-feature cosines between adjacent (local) or
all (global) frame pairs of the edited video against the original: a value
near 1 means the edit preserved the original's temporal identity stability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import FeatureUnavailable

__all__ = [
    "mse",
    "ssim",
    "ms_ssim",
    "tl_id",
    "tg_id",
    "ConsistencyReport",
    "consistency_report",
    "lpips",
]

# First three of the standard five MS-SSIM scale weights, renormalized.
_MSSSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001])
_MSSSIM_WEIGHTS = _MSSSIM_WEIGHTS / _MSSSIM_WEIGHTS.sum()


def _to_unit_batch(a) -> torch.Tensor:
    """Accept (H,W), (C,H,W) or (N,C,H,W) in [-1,1]; return (N,C,H,W) in [0,1]."""
    t = torch.as_tensor(np.ascontiguousarray(a), dtype=torch.float64)
    if t.ndim == 2:
        t = t[None, None]
    elif t.ndim == 3:
        t = t[None]
    elif t.ndim != 4:
        raise ValueError(f"expected 2-4 dims, got shape {tuple(t.shape)}")
    return (t + 1.0) / 2.0


def _pair(a, b):
    ta, tb = _to_unit_batch(a), _to_unit_batch(b)
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    return ta, tb


def mse(a, b) -> float:
    """Mean squared error on the [0,1] scale."""
    ta, tb = _pair(a, b)
    return float(((ta - tb) ** 2).mean())


def _gaussian_kernel(win: int, sigma: float) -> torch.Tensor:
    half = (win - 1) / 2.0
    x = torch.arange(win, dtype=torch.float64) - half
    g = torch.exp(-(x**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return g[:, None] @ g[None, :]


def _local_stats(x, y, win, sigma):
    c = x.shape[1]
    kernel = _gaussian_kernel(win, sigma).expand(c, 1, win, win)
    conv = lambda t: F.conv2d(t, kernel, groups=c)  # valid padding: interior only
    mu_x, mu_y = conv(x), conv(y)
    np_ = win * win
    cov_norm = np_ / (np_ - 1)  # sample covariance, as in the reference
    var_x = cov_norm * (conv(x * x) - mu_x * mu_x)
    var_y = cov_norm * (conv(y * y) - mu_y * mu_y)
    cov = cov_norm * (conv(x * y) - mu_x * mu_y)
    return mu_x, mu_y, var_x, var_y, cov


def _ssim_terms(x, y, win, sigma, k1, k2):
    c1, c2 = k1 * k1, k2 * k2  # dynamic range is 1 after the [0,1] mapping
    mu_x, mu_y, var_x, var_y, cov = _local_stats(x, y, win, sigma)
    luminance = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    cs = (2 * cov + c2) / (var_x + var_y + c2)
    return luminance, cs


def _check_window(x, win):
    if min(x.shape[-2:]) < win:
        raise ValueError(
            f"image sides {tuple(x.shape[-2:])} smaller than the {win}x{win} SSIM window"
        )


def ssim(a, b, win: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity; 1.0 iff the images are identical."""
    x, y = _pair(a, b)
    _check_window(x, win)
    luminance, cs = _ssim_terms(x, y, win, sigma, k1, k2)
    return float((luminance * cs).mean())


def ms_ssim(a, b, scales: int = 3, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Multi-scale SSIM over dyadic scales with renormalized standard weights."""
    if not 1 <= scales <= len(_MSSSIM_WEIGHTS):
        raise ValueError(f"scales must be in [1, {len(_MSSSIM_WEIGHTS)}], got {scales}")
    x, y = _pair(a, b)
    if min(x.shape[-2:]) < 4 ** (scales - 1):
        raise ValueError(f"image too small for {scales} dyadic scales")
    weights = _MSSSIM_WEIGHTS[:scales] / _MSSSIM_WEIGHTS[:scales].sum()
    value = 1.0
    for level, weight in enumerate(weights):
        win = min(11, min(x.shape[-2:]))
        win -= 1 - win % 2  # keep it odd
        luminance, cs = _ssim_terms(x, y, win, sigma, k1, k2)
        term = luminance * cs if level == scales - 1 else cs
        value *= float(term.mean().clamp_min(0.0)) ** weight
        if level < scales - 1:
            x, y = F.avg_pool2d(x, 2), F.avg_pool2d(y, 2)
    return value


def _identity_features(frames, id_encoder) -> torch.Tensor:
    t = torch.as_tensor(np.ascontiguousarray(frames), dtype=torch.float32)
    if t.ndim != 4:
        raise ValueError(f"expected video frames (N, 3, H, W), got {tuple(t.shape)}")
    with torch.no_grad():
        return id_encoder.encode(t)


def _pair_ratios(z_orig, z_edit, pairs):
    rows = []
    for i, j in pairs:
        cos_orig = float(z_orig[i] @ z_orig[j])
        cos_edit = float(z_edit[i] @ z_edit[j])
        if cos_orig <= 0:
            raise ValueError(
                f"original identity cosine is non-positive ({cos_orig:.4f}) "
                f"for frame pair ({i}, {j}); the consistency ratio is undefined"
            )
        rows.append((i, j, cos_edit, cos_orig))
    return rows


def _ratio_mean(rows) -> float:
    return float(np.mean([ce / co for _, _, ce, co in rows]))


def _check_lengths(original_frames, edited_frames):
    n = len(original_frames)
    if n != len(edited_frames):
        raise ValueError(f"frame counts differ: {n} vs {len(edited_frames)}")
    if n < 2:
        raise ValueError("consistency metrics need at least 2 frames")
    return n


def tl_id(original_frames, edited_frames, id_encoder) -> float:
    """Local identity consistency: adjacent-pair cosine ratio, edited/original."""
    n = _check_lengths(original_frames, edited_frames)
    z_orig = _identity_features(original_frames, id_encoder)
    z_edit = _identity_features(edited_frames, id_encoder)
    return _ratio_mean(_pair_ratios(z_orig, z_edit, [(i, i + 1) for i in range(n - 1)]))


def tg_id(original_frames, edited_frames, id_encoder) -> float:
    """Global identity consistency: all-pair cosine ratio, edited/original."""
    n = _check_lengths(original_frames, edited_frames)
    z_orig = _identity_features(original_frames, id_encoder)
    z_edit = _identity_features(edited_frames, id_encoder)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return _ratio_mean(_pair_ratios(z_orig, z_edit, pairs))


@dataclass
class ConsistencyReport:
    """TL-ID / TG-ID plus the per-pair similarity tables behind them."""

    tl_id: float
    tg_id: float
    tl_pairs: list  # (i, j, cos_edit, cos_orig) for adjacent pairs
    tg_pairs: list  # same, over all unordered pairs

    def summary(self) -> str:
        return (
            f"TL-ID {self.tl_id:.4f} over {len(self.tl_pairs)} adjacent pairs; "
            f"TG-ID {self.tg_id:.4f} over {len(self.tg_pairs)} pairs"
        )

    def write_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerow(["tl_id", f"{self.tl_id:.6f}"])
            writer.writerow(["tg_id", f"{self.tg_id:.6f}"])
            writer.writerow([])
            writer.writerow(["scope", "frame_i", "frame_j", "cos_edit", "cos_orig"])
            for scope, rows in (("local", self.tl_pairs), ("global", self.tg_pairs)):
                for i, j, ce, co in rows:
                    writer.writerow([scope, i, j, f"{ce:.6f}", f"{co:.6f}"])
        return path


def consistency_report(original_frames, edited_frames, id_encoder) -> ConsistencyReport:
    n = _check_lengths(original_frames, edited_frames)
    z_orig = _identity_features(original_frames, id_encoder)
    z_edit = _identity_features(edited_frames, id_encoder)
    tl_rows = _pair_ratios(z_orig, z_edit, [(i, i + 1) for i in range(n - 1)])
    tg_rows = _pair_ratios(
        z_orig, z_edit, [(i, j) for i in range(n) for j in range(i + 1, n)]
    )
    return ConsistencyReport(
        tl_id=_ratio_mean(tl_rows), tg_id=_ratio_mean(tg_rows),
        tl_pairs=tl_rows, tg_pairs=tg_rows,
    )


def lpips(a, b):
    """Perceptual distance backed by a pretrained network; not bundled."""
    raise FeatureUnavailable(
        "LPIPS requires pretrained perceptual-network weights that this "
        "package does not bundle; use mse/ssim/ms_ssim instead"
    )
