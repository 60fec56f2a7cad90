"""Image quality metrics and the quality/efficiency report."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ImageTooSmall, MalformedDocument

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
REPORT_KEYS = ("psnr_db", "ssim", "mse", "computed_steps", "total_steps", "model_call_speedup", "lpips")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / err))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, peak: float = 1.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window, averaged over valid window positions only."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs 2-D images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    w = gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def filt(img: np.ndarray) -> np.ndarray:
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, w.shape), w)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def speedup(schedule) -> float:
    return schedule.num_steps / schedule.computed_count


@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    ssim: float
    mse: float
    computed_steps: int | None
    total_steps: int | None
    lpips: float | None = None

    @property
    def model_call_speedup(self) -> float | None:
        if self.computed_steps is None or self.total_steps is None:
            return None
        return self.total_steps / self.computed_steps

    def to_dict(self) -> dict:
        return {
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "mse": self.mse,
            "computed_steps": self.computed_steps,
            "total_steps": self.total_steps,
            "model_call_speedup": self.model_call_speedup,
            "lpips": self.lpips,
        }

    @classmethod
    def from_dict(cls, doc) -> "QualityReport":
        if not isinstance(doc, dict) or any(k not in doc for k in REPORT_KEYS):
            raise MalformedDocument(f"report must be an object with keys {list(REPORT_KEYS)}")
        report = cls(
            psnr_db=float(doc["psnr_db"]),
            ssim=float(doc["ssim"]),
            mse=float(doc["mse"]),
            computed_steps=doc["computed_steps"],
            total_steps=doc["total_steps"],
            lpips=doc["lpips"],
        )
        if doc["model_call_speedup"] != report.model_call_speedup:
            raise MalformedDocument("model_call_speedup disagrees with step counts")
        return report


def compare_batches(
    baseline: np.ndarray,
    cached: np.ndarray,
    computed_steps: int | None = None,
    total_steps: int | None = None,
) -> QualityReport:
    """Per-image PSNR/SSIM/MSE between two stacks of images in [0, 1], averaged."""
    baseline, cached = _pair(baseline, cached)
    if baseline.ndim != 3 or len(baseline) == 0:
        raise ValueError("expected a non-empty stack of 2-D images")
    pairs = list(zip(baseline, cached))
    return QualityReport(
        psnr_db=float(np.mean([psnr(a, b) for a, b in pairs])),
        ssim=float(np.mean([ssim(a, b) for a, b in pairs])),
        mse=float(np.mean([mse(a, b) for a, b in pairs])),
        computed_steps=computed_steps,
        total_steps=total_steps,
    )


def dumps_report(report: QualityReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def loads_report(text: str) -> QualityReport:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc
    return QualityReport.from_dict(doc)


def save_report(report: QualityReport, destination: IO[str] | str | Path) -> None:
    text = dumps_report(report)
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(text, encoding="utf-8")
    else:
        destination.write(text)


def load_report(source: IO[str] | str | Path) -> QualityReport:
    if isinstance(source, (str, Path)):
        return loads_report(Path(source).read_text(encoding="utf-8"))
    return loads_report(source.read())
