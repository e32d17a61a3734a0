"""Image metrics and the revisit-consistency protocol."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from ._validation import ParameterError, ProtocolError, check_image, check_int, check_same_shape

__all__ = ["PSNR_CAP", "RevisitReport", "coverage_stats", "psnr", "revisit_consistency", "ssim"]

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
_LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; capped at ``PSNR_CAP``."""
    a = check_image(a, "a")
    b = check_image(b, "b")
    check_same_shape(a, b, "images")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def _gray(img: np.ndarray) -> np.ndarray:
    return img @ _LUMA if img.ndim == 3 else img


def _gaussian_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim(a, b) -> float:
    """Mean SSIM on luma with an 11x11 Gaussian window (sigma 1.5), valid region only."""
    a = _gray(check_image(a, "a"))
    b = _gray(check_image(b, "b"))
    check_same_shape(a, b, "images")
    if min(a.shape) < SSIM_WINDOW:
        raise ParameterError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = _gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class RevisitReport:
    pairs: list
    psnr: list
    ssim: list
    unknown_fraction: list = field(default_factory=list)

    @property
    def psnr_mean(self) -> float:
        vals = [v for v in self.psnr if np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def ssim_mean(self) -> float:
        vals = [v for v in self.ssim if np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "psnr": list(self.psnr),
            "ssim": list(self.ssim),
            "psnr_mean": self.psnr_mean,
            "ssim_mean": self.ssim_mean,
            "unknown_fraction": list(self.unknown_fraction),
            "psnr_cap": PSNR_CAP,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair_index", "psnr", "ssim"])
        for k, (p, s) in enumerate(zip(self.psnr, self.ssim)):
            w.writerow([k, repr(float(p)), repr(float(s))])
        return buf.getvalue()


def revisit_consistency(frames, stride: int = 1, unknown_fraction=None) -> RevisitReport:
    """Compare frame ``i`` with frame ``2N-1-i`` on a forward-then-reverse path.

    Pairs are taken for ``i = 0, stride, 2*stride, ... < N``. Each pair's poses
    must be identical, otherwise ``ProtocolError`` is raised.
    """
    frames = list(frames)
    stride = check_int(stride, "stride", minimum=1)
    if len(frames) == 0 or len(frames) % 2:
        raise ProtocolError(f"cycle needs an even, non-zero frame count, got {len(frames)}")
    n = len(frames) // 2
    pairs, ps, ss = [], [], []
    for i in range(0, n, stride):
        j = 2 * n - 1 - i
        if not frames[i].pose.same_as(frames[j].pose, atol=1e-12):
            raise ProtocolError(f"frames {i} and {j} were not rendered from the same pose")
        pairs.append((i, j))
        ps.append(psnr(frames[i].image, frames[j].image))
        ss.append(ssim(frames[i].image, frames[j].image))
    unk = [float(u) for u in unknown_fraction] if unknown_fraction is not None else []
    return RevisitReport(pairs, ps, ss, unk)


def coverage_stats(canvas, tau: float = 0.5) -> dict:
    c = np.asarray(canvas, dtype=np.float64)
    return {
        "sum": float(c.sum()),
        "mean": float(c.mean()) if c.size else 0.0,
        "min": float(c.min()) if c.size else 0.0,
        "frac_above": float(np.mean(c > tau)) if c.size else 0.0,
        "tau": float(tau),
    }
