"""Image-similarity metrics for clean, adversarial and target reconstructions.

All metrics act on magnitude images scaled into [0, 1] with peak value 1.
The AC pair compares the adversarial image with the clean one; the AT pair
compares it with the attacker's target.
"""
from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import convolve2d

from .core import ConfigurationError, ReflectivityImage, ShapeError

__all__ = [
    "PSNR_SENTINEL",
    "to_magnitude",
    "psnr",
    "ssim",
    "gaussian_window",
    "roi_metrics",
    "default_roi",
    "MetricsReport",
    "evaluate",
]

# Largest finite double; reports store this in place of +inf and set a flag.
PSNR_SENTINEL = sys.float_info.max
C1 = 0.01**2
C2 = 0.03**2


def _image_array(img) -> np.ndarray:
    if isinstance(img, ReflectivityImage):
        return img.as_array()
    return np.asarray(img)


def to_magnitude(img, reference=None) -> np.ndarray:
    """Magnitude image scaled so the peak maps to 1.

    With ``reference`` the scale is the reference's peak magnitude instead
    and the result is clipped to [0, 1].  This puts several images on a
    common scale, so that a faint image stays faint next to a bright one.
    An all-zero scale leaves the image at zero.
    """
    mag = np.abs(_image_array(img)).astype(float)
    peak = float(mag.max()) if mag.size else 0.0
    if reference is not None:
        ref = np.abs(_image_array(reference))
        peak = float(ref.max()) if ref.size else 0.0
    if peak == 0.0:
        return np.zeros_like(mag)
    return np.clip(mag / peak, 0.0, 1.0)


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)`` for images on [0, 1]; ``inf`` when identical."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"psnr needs equal shapes, got {a.shape} and {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, window: int = 7, sigma: float = 1.5, constants=(C1, C2)) -> float:
    """Mean local SSIM over all fully contained Gaussian windows."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"ssim needs equal shapes, got {a.shape} and {b.shape}")
    if a.ndim != 2 or min(a.shape) < window:
        raise ConfigurationError(f"ssim needs a 2-D image of at least {window}x{window}, got {a.shape}")
    c1, c2 = constants
    w = gaussian_window(window, sigma)
    filt = lambda x: convolve2d(x, w, mode="valid")
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def _check_roi(roi, shape):
    r0, r1, c0, c1 = (int(v) for v in roi)
    if not (0 <= r0 < r1 <= shape[0] and 0 <= c0 < c1 <= shape[1]):
        raise IndexError(f"roi {roi} is empty or outside an image of shape {shape}")
    return r0, r1, c0, c1


def _grow(lo, hi, size, limit):
    # Widen [lo, hi) to at least ``size`` entries while staying inside [0, limit).
    need = size - (hi - lo)
    if need <= 0:
        return lo, hi
    lo = max(0, lo - (need + 1) // 2)
    hi = min(limit, lo + size)
    lo = max(0, hi - size)
    return lo, hi


def roi_metrics(a, b, roi, window: int = 7):
    """PSNR and SSIM on the crop ``rows r0:r1, cols c0:c1``.

    ``roi = (r0, r1, c0, c1)`` uses half-open voxel-index ranges.  Crops
    narrower than the SSIM window are widened symmetrically to fit it.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError("roi_metrics needs equal shapes")
    r0, r1, c0, c1 = _check_roi(roi, a.shape)
    r0, r1 = _grow(r0, r1, window, a.shape[0])
    c0, c1 = _grow(c0, c1, window, a.shape[1])
    ca, cb = a[r0:r1, c0:c1], b[r0:r1, c0:c1]
    return psnr(ca, cb), ssim(ca, cb, window=window)


def default_roi(mag, threshold: float = 0.1, dilate: int = 2):
    """Bounding box of voxels above ``threshold * max``, grown by ``dilate``."""
    mag = np.asarray(mag, dtype=float)
    peak = mag.max() if mag.size else 0.0
    if peak <= 0:
        return (0, mag.shape[0], 0, mag.shape[1])
    rows, cols = np.nonzero(mag > threshold * peak)
    return (
        max(0, int(rows.min()) - dilate),
        min(mag.shape[0], int(rows.max()) + 1 + dilate),
        max(0, int(cols.min()) - dilate),
        min(mag.shape[1], int(cols.max()) + 1 + dilate),
    )


@dataclass(frozen=True)
class MetricsReport:
    psnr_ac: float
    ssim_ac: float
    psnr_at: float | None
    ssim_at: float | None
    power_ratio: float
    roi: tuple | None = None
    roi_psnr_ac: float | None = None
    roi_ssim_ac: float | None = None
    roi_psnr_at: float | None = None
    roi_ssim_at: float | None = None

    def __post_init__(self):
        for name in ("ssim_ac", "ssim_at", "roi_ssim_ac", "roi_ssim_at"):
            v = getattr(self, name)
            if v is not None and not -1.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [-1, 1]")
        if self.power_ratio < 0:
            raise ValueError("power_ratio must be non-negative")

    def to_json_dict(self) -> dict:
        """Plain dict in field order with infinite PSNRs replaced by the sentinel.

        ``<name>_infinite`` flags follow each PSNR entry.
        """
        out = {}
        for key, value in asdict(self).items():
            if key == "roi":
                out[key] = None if value is None else [int(v) for v in value]
                continue
            if key.startswith(("psnr", "roi_psnr")):
                infinite = value is not None and math.isinf(value)
                out[key] = PSNR_SENTINEL if infinite else value
                out[f"{key}_infinite"] = infinite
            else:
                out[key] = value
        return out


def evaluate(clean, adv, target=None, power_ratio: float = 0.0, roi=None) -> MetricsReport:
    """AC and AT metrics with every image scaled by the clean image's peak.

    Normalising each image by its own peak would map a faint concealed
    image back to full brightness; a shared scale keeps the comparison
    against a blank target meaningful.
    """
    mc = to_magnitude(clean, reference=clean)
    ma = to_magnitude(adv, reference=clean)
    mt = None if target is None else to_magnitude(target, reference=clean)
    psnr_at = ssim_at = None
    if mt is not None:
        psnr_at, ssim_at = psnr(ma, mt), ssim(ma, mt)
    extra = {}
    if roi is not None:
        roi = tuple(int(v) for v in roi)
        extra["roi_psnr_ac"], extra["roi_ssim_ac"] = roi_metrics(ma, mc, roi)
        if mt is not None:
            extra["roi_psnr_at"], extra["roi_ssim_at"] = roi_metrics(ma, mt, roi)
    return MetricsReport(psnr(ma, mc), ssim(ma, mc), psnr_at, ssim_at, float(power_ratio), roi, **extra)
