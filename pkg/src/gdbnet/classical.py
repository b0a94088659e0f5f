"""Classical thresholding and edge detection.

These produce the priori mask and edge map consumed by the network and
double as the Otsu/Sauvola/Niblack comparison baselines. Local methods
run on the 8-bit scale (pixel * 255) so thresholds match the usual
formulations; all windows use mirror padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import BinaryMap, RasterImage

__all__ = [
    "LocalStatsWindow",
    "histogram256",
    "otsu_threshold",
    "binarize_otsu",
    "binarize_sauvola",
    "binarize_niblack",
    "sobel_edge",
]


@dataclass(frozen=True)
class LocalStatsWindow:
    """Parameters for local-statistics thresholding (Sauvola/Niblack)."""

    window: int = 25
    k: float = 0.2
    R: float = 128.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")


def _gray_bins(gray: RasterImage) -> np.ndarray:
    if gray.channels != 1:
        raise ValueError("expected a single-channel image")
    return np.rint(gray.data[0] * 255.0).astype(np.int64)


def histogram256(gray: RasterImage) -> np.ndarray:
    """256-bin count histogram of an image quantized to 8 bits."""
    return np.bincount(_gray_bins(gray).ravel(), minlength=256)


def otsu_threshold(gray: RasterImage) -> int:
    """Threshold maximizing between-class variance; ties broken low.

    A constant image returns its own bin value.
    """
    hist = histogram256(gray).astype(np.float64)
    total = hist.sum()
    p = hist / total
    omega0 = np.cumsum(p)                       # class {0..t}
    mu_t = np.cumsum(p * np.arange(256))
    mu_total = mu_t[-1]
    omega1 = 1.0 - omega0
    valid = (omega0 > 0) & (omega1 > 0)
    if not valid.any():
        return int(np.nonzero(hist)[0][0])
    sigma_b = np.zeros(256)
    mu0 = np.where(valid, mu_t / np.maximum(omega0, 1e-300), 0.0)
    mu1 = np.where(valid, (mu_total - mu_t) / np.maximum(omega1, 1e-300), 0.0)
    sigma_b[valid] = (omega0 * omega1 * (mu0 - mu1) ** 2)[valid]
    return int(np.argmax(sigma_b))


def binarize_otsu(gray: RasterImage) -> BinaryMap:
    """Global Otsu binarization; darker class is text."""
    bins = _gray_bins(gray)
    hist = np.bincount(bins.ravel(), minlength=256)
    if np.count_nonzero(hist) <= 1:
        # Blank patch: no text.
        return BinaryMap(np.zeros_like(bins, dtype=np.uint8))
    t = otsu_threshold(gray)
    return BinaryMap((bins <= t).astype(np.uint8))


def _local_mean_std(gray8: np.ndarray, window: int):
    """Window mean and standard deviation via integral images."""
    r = window // 2
    padded = np.pad(gray8, r, mode="reflect").astype(np.float64)
    ii1 = np.pad(padded, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    ii2 = np.pad(padded * padded, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    h, w = gray8.shape
    n = float(window * window)

    def box(ii):
        return (ii[window:window + h, window:window + w]
                - ii[window:window + h, :w]
                - ii[:h, window:window + w]
                + ii[:h, :w])

    m = box(ii1) / n
    var = np.maximum(box(ii2) / n - m * m, 0.0)
    return m, np.sqrt(var)


def binarize_sauvola(gray: RasterImage, params: LocalStatsWindow = LocalStatsWindow()) -> BinaryMap:
    """Sauvola local threshold T = m (1 + k (s/R - 1)); pixel < T is text."""
    gray8 = _gray_bins(gray).astype(np.float64)
    m, s = _local_mean_std(gray8, params.window)
    t = m * (1.0 + params.k * (s / params.R - 1.0))
    return BinaryMap((gray8 < t).astype(np.uint8))


def binarize_niblack(gray: RasterImage, params: LocalStatsWindow = LocalStatsWindow(k=-0.2)) -> BinaryMap:
    """Niblack local threshold T = m + k s (k negative); pixel < T is text."""
    gray8 = _gray_bins(gray).astype(np.float64)
    m, s = _local_mean_std(gray8, params.window)
    t = m + params.k * s
    return BinaryMap((gray8 < t).astype(np.uint8))


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def sobel_gradients(gray: RasterImage):
    """Raw Sobel responses (gx, gy) on mirror-padded input."""
    if gray.channels != 1:
        raise ValueError("expected a single-channel image")
    img = np.pad(gray.data[0].astype(np.float64), 1, mode="reflect")
    h, w = gray.data[0].shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            patch = img[dy:dy + h, dx:dx + w]
            gx += _SOBEL_X[dy, dx] * patch
            gy += _SOBEL_Y[dy, dx] * patch
    return gx, gy


def sobel_edge(gray: RasterImage) -> RasterImage:
    """Gradient magnitude normalized by the per-image maximum."""
    gx, gy = sobel_gradients(gray)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0:
        mag /= peak
    return RasterImage(mag.astype(np.float32)[None])
