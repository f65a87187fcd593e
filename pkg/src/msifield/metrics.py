"""Inverse-depth and image-quality metrics.

Depth errors are measured in inverse depth (m^-1): MAE, RMSE, and the
percentage of pixels whose absolute error exceeds 0.1 / 0.3 / 0.5.  Image
quality uses PSNR (capped at 99 dB for identical images) and SSIM with an
11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 99.0
RATIO_THRESHOLDS = (0.1, 0.3, 0.5)


@dataclass
class DepthReport:
    mae: float
    rmse: float
    ratio_gt_0_1: float
    ratio_gt_0_3: float
    ratio_gt_0_5: float

    def to_text(self) -> str:
        return "".join(f"{k}={v:.6f}\n" for k, v in vars(self).items())

    def csv_row(self) -> str:
        return ",".join(f"{v:.6f}" for v in vars(self).values())

    CSV_HEADER = "mae,rmse,ratio_gt_0_1,ratio_gt_0_3,ratio_gt_0_5"


@dataclass
class ImageReport:
    psnr: float
    ssim: float

    def to_text(self) -> str:
        return f"psnr={self.psnr:.6f}\nssim={self.ssim:.6f}\n"

    def csv_row(self) -> str:
        return f"{self.psnr:.6f},{self.ssim:.6f}"

    CSV_HEADER = "psnr,ssim"


def depth_metrics(pred_inv: np.ndarray, gt_inv: np.ndarray,
                  valid: np.ndarray | None = None) -> DepthReport:
    """Error statistics over valid pixels; by default pixels with ground-truth
    inverse depth exactly 0 (infinity) are excluded."""
    pred_inv = np.asarray(pred_inv, dtype=np.float64)
    gt_inv = np.asarray(gt_inv, dtype=np.float64)
    if pred_inv.shape != gt_inv.shape:
        raise ValueError("prediction and ground truth shapes differ")
    if valid is None:
        valid = gt_inv > 0
    valid = np.asarray(valid, dtype=bool)
    if not np.any(valid):
        raise ValueError("empty validity mask")
    e = np.abs(pred_inv[valid] - gt_inv[valid])
    n = e.size
    ratios = [100.0 * np.count_nonzero(e > k) / n for k in RATIO_THRESHOLDS]
    return DepthReport(mae=float(np.mean(e)), rmse=float(np.sqrt(np.mean(e * e))),
                       ratio_gt_0_1=ratios[0], ratio_gt_0_3=ratios[1],
                       ratio_gt_0_5=ratios[2])


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / np.sum(k)


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable valid-mode convolution of a 2D image."""
    size = k.size
    # rows
    out = np.zeros((img.shape[0], img.shape[1] - size + 1))
    for i, kv in enumerate(k):
        out += kv * img[:, i:i + img.shape[1] - size + 1]
    out2 = np.zeros((img.shape[0] - size + 1, out.shape[1]))
    for i, kv in enumerate(k):
        out2 += kv * out[i:i + img.shape[0] - size + 1, :]
    return out2


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity for images in [0, 1] (grayscale or RGB)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    if min(a.shape[0], a.shape[1]) < win_size:
        raise ValueError(f"images must be at least {win_size} pixels on each side")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    kern = _gaussian_kernel(win_size, sigma)
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = _filter_valid(x, kern)
        my = _filter_valid(y, kern)
        mxx = _filter_valid(x * x, kern)
        myy = _filter_valid(y * y, kern)
        mxy = _filter_valid(x * y, kern)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        vals.append(np.mean(s))
    return float(np.mean(vals))
