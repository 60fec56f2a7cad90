"""Desk-scale flow-matching sampler with an exact velocity field.

Data are a Gaussian mixture with a shared isotropic std, noise is standard
normal, and the interpolant is linear: ``x_t = (1 - t) x0 + t x1``. For this
pair the marginal velocity ``E[x1 - x0 | x_t]`` has a closed form, so the
"model" is exact and sampling needs no training. Sampling integrates from
``t = 1`` (noise) down to ``t = 0`` with uniform Euler steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .cache import CacheConfig, Decision, MagCacheController
from .calibrate import MagnitudeCurve
from .errors import ConfigError, CurveMismatch
from .trace import ResidualTrace

SIM_KEYS = ("dim_side", "num_components", "data_std", "num_steps", "batch", "seed")


@dataclass(frozen=True, eq=False)
class GmmSpec:
    weights: np.ndarray
    means: np.ndarray
    data_std: float
    seed: int = 0

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if w.ndim != 1 or w.size != mu.shape[0]:
            raise ConfigError("weights must have one entry per mixture component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("weights must be positive and sum to 1")
        if not self.data_std > 0:
            raise ConfigError("data_std must be > 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "data_std", float(self.data_std))

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def num_components(self) -> int:
        return int(self.means.shape[0])


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 50
    batch: int = 32

    def __post_init__(self) -> None:
        if self.num_steps < 2:
            raise ConfigError("num_steps must be >= 2")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")


@dataclass(frozen=True)
class SimSpec:
    """The simulator configuration document (``sim.json``)."""

    dim_side: int = 16
    num_components: int = 8
    data_std: float = 0.1
    num_steps: int = 50
    batch: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("dim_side", "num_components", "num_steps", "batch", "seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.dim_side < 1 or self.num_components < 1 or self.batch < 1:
            raise ConfigError("dim_side, num_components and batch must be positive")
        if self.num_steps < 2:
            raise ConfigError("num_steps must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if isinstance(self.data_std, bool) or not isinstance(self.data_std, (int, float)) or not self.data_std > 0:
            raise ConfigError(f"data_std must be a positive number, got {self.data_std!r}")

    @classmethod
    def from_dict(cls, doc) -> "SimSpec":
        if not isinstance(doc, dict):
            raise ConfigError("simulator spec must be a JSON object")
        unknown = sorted(set(doc) - set(SIM_KEYS))
        if unknown:
            raise ConfigError(f"unknown simulator keys: {unknown}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in SIM_KEYS}

    def gmm(self) -> GmmSpec:
        return blob_mixture(self.dim_side, self.num_components, self.data_std, self.seed)

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(num_steps=self.num_steps, batch=self.batch)


def load_sim_spec(path: str | Path) -> SimSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return SimSpec.from_dict(doc)


def blob_mixture(side: int, num_components: int, data_std: float, seed: int) -> GmmSpec:
    """Equal-weight mixture whose means are soft Gaussian blobs on a ``side x side`` grid."""
    rng = np.random.default_rng([seed, 0])
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    means = np.empty((num_components, side * side))
    for k in range(num_components):
        cy, cx = rng.uniform(0, side, size=2)
        radius = rng.uniform(0.1, 0.3) * side
        amp = rng.uniform(0.5, 1.5)
        blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))
        means[k] = blob.ravel()
    weights = np.full(num_components, 1.0 / num_components)
    return GmmSpec(weights=weights, means=means, data_std=data_std, seed=seed)


def marginal_velocity(gmm: GmmSpec, x: np.ndarray, t: float) -> np.ndarray:
    """Exact ``E[x1 - x0 | x_t = x]``; ``x`` may be one vector or a batch ``(B, d)``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    a, b = 1.0 - t, t
    s0sq = gmm.data_std**2
    var = a * a * s0sq + b * b
    shifted = xb[:, None, :] - a * gmm.means[None, :, :]  # (B, M, d)
    logits = np.log(gmm.weights)[None, :] - 0.5 * np.einsum("bmd,bmd->bm", shifted, shifted) / var
    resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))  # (B, M)
    # per component: E[x1|x,k] - E[x0|x,k] = ((b - a s0^2)/var) (x - a mu_k) - mu_k
    comp_v = ((b - a * s0sq) / var) * shifted - gmm.means[None, :, :]
    v = np.einsum("bm,bmd->bd", resp, comp_v)
    return v[0] if single else v


def euler_times(num_steps: int) -> np.ndarray:
    return 1.0 - np.arange(num_steps) / num_steps


def initial_noise(dim: int, batch: int, seed: int) -> np.ndarray:
    # stream 1 of the seed; stream 0 places the mixture means
    return np.random.default_rng([seed, 1]).standard_normal((batch, dim))


def sample_baseline(gmm: GmmSpec, cfg: SamplerConfig, seed: int, model_id: str = "flowsim"):
    """Full Euler sampling; returns the final batch and the residual trace."""
    x = initial_noise(gmm.dim, cfg.batch, seed)
    dt = 1.0 / cfg.num_steps
    residuals = np.empty((cfg.num_steps, cfg.batch, gmm.dim))
    for i, t in enumerate(euler_times(cfg.num_steps)):
        v = marginal_velocity(gmm, x, float(t))
        residuals[i] = v - x
        x = x - dt * v
    return x, ResidualTrace(residuals, model_id)


@dataclass
class ExecutionLog:
    decisions: list[bool] = field(default_factory=list)
    estimated_error: list[float] = field(default_factory=list)
    # residuals actually evaluated at computed steps (only when requested)
    residuals: dict[int, np.ndarray] = field(default_factory=dict)
    model_calls: int = 0

    @property
    def total_steps(self) -> int:
        return len(self.decisions)

    @property
    def model_call_speedup(self) -> float:
        return self.total_steps / self.model_calls


def sample_cached(
    gmm: GmmSpec,
    cfg: SamplerConfig,
    curve: MagnitudeCurve,
    cache_cfg: CacheConfig,
    seed: int,
    record_residuals: bool = False,
):
    """Euler sampling driven by the magnitude-aware cache.

    Skipped steps rebuild the velocity as ``x + r_cached`` instead of
    evaluating the field.
    """
    if curve.num_steps != cfg.num_steps:
        raise CurveMismatch(f"curve has {curve.num_steps} steps, sampler runs {cfg.num_steps}")
    controller = MagCacheController(cache_cfg, curve)
    log = ExecutionLog()
    x = initial_noise(gmm.dim, cfg.batch, seed)
    dt = 1.0 / cfg.num_steps
    for i, t in enumerate(euler_times(cfg.num_steps)):
        if controller.decide(i) is Decision.COMPUTE:
            v = marginal_velocity(gmm, x, float(t))
            r = v - x
            controller.on_residual(i, r)
            log.model_calls += 1
            log.decisions.append(True)
            log.estimated_error.append(0.0)
            if record_residuals:
                log.residuals[i] = r.copy()
        else:
            v = x + controller.cached_residual
            log.decisions.append(False)
            log.estimated_error.append(controller.accumulated_error)
        x = x - dt * v
    return x, log


def render_image(sample: np.ndarray, side: int, lo: float, hi: float) -> np.ndarray:
    """Map a flat sample onto a ``side x side`` grid in [0, 1] using fixed bounds."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.size != side * side:
        raise ValueError(f"sample of size {sample.size} cannot form a {side}x{side} image")
    if not hi > lo:
        raise ValueError(f"need hi > lo, got lo={lo}, hi={hi}")
    img = (sample.reshape(side, side) - lo) / (hi - lo)
    return np.clip(img, 0.0, 1.0)


def render_batch(batch: np.ndarray, side: int, lo: float, hi: float) -> np.ndarray:
    return np.stack([render_image(s, side, lo, hi) for s in batch])


def batch_bounds(batch: np.ndarray) -> tuple[float, float]:
    return float(np.min(batch)), float(np.max(batch))
