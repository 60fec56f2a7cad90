"""Magnitude-aware residual caching for diffusion / flow-matching samplers."""

from .cache import (
    PRESETS,
    CacheConfig,
    CacheState,
    Decision,
    ErrorModel,
    MagCacheController,
    SkipSchedule,
    decide,
    derive_schedule,
    on_residual,
    retained_prefix_length,
    skip_error,
)
from .calibrate import MagnitudeCurve, calibrate_from_trace, load_curve, save_curve
from .stats import (
    MagnitudeStats,
    compute_stats,
    gap_ratio,
    magnitude_ratio,
    product_ratio,
    ratio_variability,
    residual_cosine_distance,
)
from .trace import ResidualTrace, read_trace, write_trace

__version__ = "0.1.0"
