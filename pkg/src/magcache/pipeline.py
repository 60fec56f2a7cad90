"""End-to-end simulator runs: baseline, calibration, cached sampling, scoring."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .cache import CacheConfig, derive_schedule
from .errors import InvariantError
from .calibrate import MagnitudeCurve, calibrate_from_trace
from .flowsim import (
    ExecutionLog,
    SimSpec,
    batch_bounds,
    render_batch,
    sample_baseline,
    sample_cached,
)
from .metrics import QualityReport, compare_batches
from .trace import ResidualTrace


@dataclass
class Baseline:
    sim: SimSpec
    final: np.ndarray
    trace: ResidualTrace
    images: np.ndarray
    lo: float
    hi: float


@dataclass
class SimulationResult:
    baseline: Baseline
    curve: MagnitudeCurve
    cached_final: np.ndarray
    cached_images: np.ndarray
    log: ExecutionLog
    report: QualityReport


def run_baseline(sim: SimSpec) -> Baseline:
    gmm = sim.gmm()
    final, trace = sample_baseline(gmm, sim.sampler(), sim.seed, model_id=f"flowsim-seed{sim.seed}")
    lo, hi = batch_bounds(final)
    return Baseline(sim, final, trace, render_batch(final, sim.dim_side, lo, hi), lo, hi)


def run_cached(baseline: Baseline, curve: MagnitudeCurve, cache_cfg: CacheConfig) -> SimulationResult:
    sim = baseline.sim
    final, log = sample_cached(sim.gmm(), sim.sampler(), curve, cache_cfg, sim.seed)
    images = render_batch(final, sim.dim_side, baseline.lo, baseline.hi)
    report = compare_batches(baseline.images, images, log.model_calls, log.total_steps)
    offline = derive_schedule(curve, cache_cfg)
    if offline.decisions.tolist() != log.decisions:
        raise InvariantError("online decisions diverged from the offline schedule")
    return SimulationResult(baseline, curve, final, images, log, report)


def simulate(sim: SimSpec, cache_cfg: CacheConfig, curve: MagnitudeCurve | None = None) -> SimulationResult:
    """Baseline and cached runs with one seed. Without a curve, calibrate on the baseline trace."""
    baseline = run_baseline(sim)
    if curve is None:
        curve = calibrate_from_trace(baseline.trace, note="baseline run of the simulator")
    return run_cached(baseline, curve, cache_cfg)


def sweep(
    sim: SimSpec,
    deltas: Iterable[float],
    ks: Iterable[int],
    base: CacheConfig,
    curve: MagnitudeCurve | None = None,
) -> list[tuple]:
    """One row ``(delta, K, computed, speedup, psnr, ssim, mse)`` per configuration, delta-major."""
    baseline = run_baseline(sim)
    if curve is None:
        curve = calibrate_from_trace(baseline.trace, note="baseline run of the simulator")
    rows = []
    for delta in deltas:
        for k in ks:
            cfg = replace(base, delta=delta, max_skip=k)
            res = run_cached(baseline, curve, cfg)
            r = res.report
            rows.append((delta, k, r.computed_steps, r.model_call_speedup, r.psnr_db, r.ssim, r.mse))
    return rows

