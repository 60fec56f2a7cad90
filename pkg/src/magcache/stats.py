"""Residual-trajectory statistics.

All quantities are token-wise: channel-axis L2 norms per token, compared
between consecutive steps, then reduced over tokens. Norms and means are
accumulated in float64 whatever the storage precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStep, IndexOutOfRange
from .trace import ResidualTrace

NORM_EPS = 1e-12


@dataclass(frozen=True)
class MagnitudeStats:
    gamma: np.ndarray
    sigma: np.ndarray
    cos_dist: np.ndarray

    def rows(self):
        for t in range(len(self.gamma)):
            yield t, float(self.gamma[t]), float(self.sigma[t]), float(self.cos_dist[t])


def _row_norms(step: np.ndarray) -> np.ndarray:
    step = step.astype(np.float64)
    return np.sqrt(np.einsum("nc,nc->n", step, step))


def _token_norms(trace: ResidualTrace) -> np.ndarray:
    # one step at a time so gap_ratio reproduces these norms bit for bit
    return np.stack([_row_norms(step) for step in trace.data])


def _step_ratios(norms: np.ndarray, t: int) -> np.ndarray:
    """Admissible token-wise ratios ``|r_t[n]| / |r_{t-1}[n]|``."""
    prev = norms[t - 1]
    ok = prev >= NORM_EPS
    if not ok.any():
        raise DegenerateStep(t)
    return norms[t][ok] / prev[ok]


def magnitude_ratio(trace: ResidualTrace) -> np.ndarray:
    """Average token-wise magnitude ratio per step; ``gamma[0] = 1``."""
    norms = _token_norms(trace)
    gamma = np.ones(trace.num_steps)
    for t in range(1, trace.num_steps):
        gamma[t] = _step_ratios(norms, t).mean()
    return gamma


def ratio_variability(trace: ResidualTrace) -> np.ndarray:
    """Population std over tokens of the same ratios; ``sigma[0] = 0``."""
    norms = _token_norms(trace)
    sigma = np.zeros(trace.num_steps)
    for t in range(1, trace.num_steps):
        sigma[t] = _step_ratios(norms, t).std(ddof=0)
    return sigma


def residual_cosine_distance(trace: ResidualTrace) -> np.ndarray:
    """Mean over tokens of ``1 - cos(r_t[n], r_{t-1}[n])``; ``cos_dist[0] = 0``.

    Tokens where either vector is (numerically) zero are left out.
    """
    data = trace.data.astype(np.float64)
    norms = _token_norms(trace)
    dots = np.einsum("tnc,tnc->tn", data[1:], data[:-1])
    dist = np.zeros(trace.num_steps)
    for t in range(1, trace.num_steps):
        ok = (norms[t] >= NORM_EPS) & (norms[t - 1] >= NORM_EPS)
        if not ok.any():
            raise DegenerateStep(t, "current or predecessor")
        cos = dots[t - 1][ok] / (norms[t][ok] * norms[t - 1][ok])
        # rounding can push |cos| a hair past 1
        dist[t] = (1.0 - np.clip(cos, -1.0, 1.0)).mean()
    return dist


def compute_stats(trace: ResidualTrace) -> MagnitudeStats:
    return MagnitudeStats(
        gamma=magnitude_ratio(trace),
        sigma=ratio_variability(trace),
        cos_dist=residual_cosine_distance(trace),
    )


def gap_ratio(trace: ResidualTrace, t: int, t_hat: int) -> float:
    """Mean token-wise norm ratio between step ``t`` and an earlier step ``t_hat``."""
    if not 0 <= t_hat < t < trace.num_steps:
        raise IndexOutOfRange(f"need 0 <= t_hat < t < {trace.num_steps}, got t_hat={t_hat}, t={t}")
    cur = _row_norms(trace.data[t])
    ref = _row_norms(trace.data[t_hat])
    ok = ref >= NORM_EPS
    if not ok.any():
        raise DegenerateStep(t)
    return float((cur[ok] / ref[ok]).mean())


def product_ratio(gamma, t_hat: int, t: int) -> float:
    """Product of ``gamma[t_hat+1 .. t]``; 1 for an empty span."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if not 0 <= t_hat <= t < len(gamma):
        raise IndexOutOfRange(f"need 0 <= t_hat <= t < {len(gamma)}, got t_hat={t_hat}, t={t}")
    out = 1.0
    for i in range(t_hat + 1, t + 1):
        out *= float(gamma[i])
    return out
