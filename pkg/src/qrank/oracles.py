"""Full-reference quality oracles and logistic score calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, signal
from scipy.stats import rankdata

from .data import Dataset

PSNR_CLIP = 60.0
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2
SSIM_MIN_SIDE = 16


def _pair(reference, test) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(reference, test) -> float:
    """Peak signal-to-noise ratio for 8-bit range, clipped at 60 dB."""
    a, b = _pair(reference, test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CLIP
    return min(PSNR_CLIP, 10.0 * math.log10(255.0**2 / mse))


def _ssim_window() -> np.ndarray:
    t = np.arange(-5, 6, dtype=np.float64)
    g = np.exp(-(t**2) / (2 * 1.5**2))
    w = np.outer(g, g)
    return w / w.sum()


def _downsample(img: np.ndarray, factor: int) -> np.ndarray:
    # f x f box filter ('same' alignment, symmetric padding), then decimate
    if factor == 1:
        return img
    before = (factor + 1) // 2 - 1
    padded = np.pad(img, ((before, factor - 1 - before),) * 2, mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (factor, factor))
    return windows.mean(axis=(2, 3))[::factor, ::factor]


def ssim(reference, test) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows (sigma 1.5).

    Both images are first box-filtered and decimated by
    max(1, round(min(H, W) / 256)).
    """
    a, b = _pair(reference, test)
    if a.ndim != 2:
        raise ValueError("expected 2-D grayscale images")
    factor = max(1, int(round(min(a.shape) / 256)))
    a, b = _downsample(a, factor), _downsample(b, factor)
    if min(a.shape) < SSIM_MIN_SIDE:
        raise ValueError(f"image too small for SSIM: {a.shape} after downsampling")
    w = _ssim_window()
    filt = lambda x: signal.correlate2d(x, w, mode="valid")  # noqa: E731
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a**2
    sbb = filt(b * b) - mu_b**2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class LogisticParams:
    """q_hat = (beta1 - beta2) / (1 + exp(-(q - beta3) / |beta4|)) + beta2"""

    beta1: float
    beta2: float
    beta3: float
    beta4: float

    def __post_init__(self):
        if self.beta4 == 0 or not all(map(math.isfinite, self.as_tuple())):
            raise ValueError(f"invalid logistic parameters {self}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.beta1, self.beta2, self.beta3, self.beta4)

    def __call__(self, q):
        return logistic(q, *self.as_tuple())


def logistic(q, beta1, beta2, beta3, beta4):
    z = -(np.asarray(q, dtype=np.float64) - beta3) / abs(beta4)
    # 1 / (1 + exp(z)) without overflow
    return (beta1 - beta2) * np.exp(-np.logaddexp(0.0, z)) + beta2


def fit_logistic(raw_scores: Sequence[float], targets: Sequence[float]) -> LogisticParams:
    """Least-squares fit of the 4-parameter logistic by Nelder-Mead simplex.

    The fit runs on standardized data; if the scores decrease with the raw
    values the initial plateaus are swapped so the simplex starts on the
    right branch. Restarts from the incumbent until the objective stalls.
    """
    x = np.asarray(raw_scores, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("raw_scores and targets must be 1-D and of equal length")
    if len(x) < 5:
        raise ValueError(f"need at least 5 points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    if np.ptp(x) == 0:
        raise ValueError("degenerate input: all raw scores equal")

    x0, xs = np.median(x), np.ptp(x)
    y0, ys = y.mean(), max(np.ptp(y), 1e-12)
    u, v = (x - x0) / xs, (y - y0) / ys

    def sse(p):
        r = logistic(u, *p) - v
        return float(r @ r)

    hi, lo = v.max(), v.min()
    if np.ptp(v) > 0 and np.corrcoef(u, v)[0, 1] < 0:
        hi, lo = lo, hi
    p = np.array([hi, lo, 0.0, 0.25])
    best = math.inf
    for _ in range(10):
        res = optimize.minimize(
            sse, p, method="Nelder-Mead", options={"maxiter": 4000, "xatol": 1e-8, "fatol": 1e-14}
        )
        p = res.x
        if best - res.fun <= 1e-12 * (1.0 + res.fun):
            break
        best = res.fun
    b1, b2, b3, b4 = p
    if b4 == 0:
        b4 = 1e-12
    return LogisticParams(
        beta1=float(b1 * ys + y0),
        beta2=float(b2 * ys + y0),
        beta3=float(b3 * xs + x0),
        beta4=float(abs(b4) * xs),
    )


def calibrate(dataset: Dataset, oracle_name: str, anchors: Sequence[tuple[float, float]]) -> Dataset:
    """Map one oracle's raw scores onto the MOS scale of the anchor points."""
    if oracle_name not in dataset.oracle_names:
        raise KeyError(f"unknown oracle {oracle_name!r}")
    if len(anchors) == 0:
        raise ValueError("anchors must not be empty")
    raw, mos = zip(*anchors)
    params = fit_logistic(raw, mos)
    return dataset.with_scores(oracle_name, params(dataset.scores(oracle_name)))


def percentile_anchors(raw: Sequence[float], lo: float = 0.0, hi: float = 100.0) -> list[tuple[float, float]]:
    """Anchor each raw score to its mid-rank percentile on [lo, hi].

    Stand-in for subjective anchors when no MOS is available: after
    calibration every oracle spans roughly the same range.
    """
    raw = np.asarray(raw, dtype=np.float64)
    pct = (rankdata(raw, method="average") - 0.5) / len(raw)
    return list(zip(raw.tolist(), (lo + (hi - lo) * pct).tolist()))


ORACLES = {"psnr": psnr, "ssim": ssim}
