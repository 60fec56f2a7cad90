"""Magnitude-aware step skipping: error model and caching decisions.

The decision at step ``t`` depends only on the calibrated curve, the
configuration and two scalars of state (last computed step, accumulated
error), never on residual values. That is what makes the offline schedule
and the online controller interchangeable.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .calibrate import MagnitudeCurve
from .errors import ConfigError, IndexOutOfRange, MalformedDocument, ProtocolViolation

UNBOUNDED = math.inf


class ErrorModel(str, enum.Enum):
    MULTIPLICATIVE = "multiplicative"
    NAIVE = "naive"


class Decision(str, enum.Enum):
    COMPUTE = "compute"
    SKIP = "skip"


def _delta_to_json(delta: float):
    return "unbounded" if math.isinf(delta) else delta


def parse_delta(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("unbounded", "inf", "infinity"):
            return UNBOUNDED
        try:
            value = float(value)
        except ValueError as exc:
            raise ConfigError(f"delta must be a number or 'unbounded', got {value!r}") from exc
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"delta must be a number or 'unbounded', got {value!r}")
    return float(value)


@dataclass(frozen=True)
class CacheConfig:
    delta: float
    max_skip: int
    retain_fraction: float = 0.2
    pinned_steps: frozenset[int] = field(default_factory=frozenset)
    error_model: ErrorModel = ErrorModel.MULTIPLICATIVE

    def __post_init__(self) -> None:
        delta = float(self.delta)
        if math.isnan(delta) or delta < 0:
            raise ConfigError(f"delta must be >= 0 (or unbounded), got {self.delta!r}")
        if isinstance(self.max_skip, bool) or int(self.max_skip) != self.max_skip or self.max_skip < 0:
            raise ConfigError(f"max_skip must be a non-negative integer, got {self.max_skip!r}")
        if not 0.0 <= float(self.retain_fraction) <= 1.0:
            raise ConfigError(f"retain_fraction must lie in [0, 1], got {self.retain_fraction!r}")
        pinned = frozenset(int(p) for p in self.pinned_steps)
        if any(p < 0 for p in pinned):
            raise ConfigError("pinned steps must be non-negative")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "max_skip", int(self.max_skip))
        object.__setattr__(self, "retain_fraction", float(self.retain_fraction))
        object.__setattr__(self, "pinned_steps", pinned)
        object.__setattr__(self, "error_model", ErrorModel(self.error_model))

    def to_dict(self) -> dict:
        return {
            "delta": _delta_to_json(self.delta),
            "K": self.max_skip,
            "retain_fraction": self.retain_fraction,
            "pinned_steps": sorted(self.pinned_steps),
            "error_model": self.error_model.value,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CacheConfig":
        try:
            return cls(
                delta=parse_delta(doc["delta"]),
                max_skip=doc["K"],
                retain_fraction=doc["retain_fraction"],
                pinned_steps=frozenset(doc["pinned_steps"]),
                error_model=ErrorModel(doc["error_model"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad cache config: {exc}") from exc


PRESETS: dict[str, CacheConfig] = {
    "open-sora-fast": CacheConfig(delta=0.12, max_skip=3, retain_fraction=0.2),
    "open-sora-slow": CacheConfig(delta=0.06, max_skip=1, retain_fraction=0.2),
    "wan-fast": CacheConfig(delta=0.12, max_skip=4, retain_fraction=0.2),
    "wan-slow": CacheConfig(delta=0.12, max_skip=2, retain_fraction=0.2),
}


def retained_prefix_length(retain_fraction: float, num_steps: int) -> int:
    """Number of leading steps that are always computed: ``floor(fraction * T)``."""
    # the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    return int(math.floor(retain_fraction * num_steps + 1e-9))


def skip_error(curve: MagnitudeCurve, t_hat: int, t: int, model: ErrorModel = ErrorModel.MULTIPLICATIVE) -> float:
    if not 0 <= t_hat < t < curve.num_steps:
        raise IndexOutOfRange(f"need 0 <= t_hat < t < {curve.num_steps}, got t_hat={t_hat}, t={t}")
    gamma = curve.gamma
    if ErrorModel(model) is ErrorModel.NAIVE:
        return abs(1.0 - float(gamma[t]))
    prod = 1.0
    for i in range(t_hat + 1, t + 1):
        prod *= float(gamma[i])
    return abs(1.0 - prod)


@dataclass(frozen=True, eq=False)
class CacheState:
    last_computed: int | None = None
    accumulated_error: float = 0.0
    cached_residual: np.ndarray | None = None
    run_length: int = 0
    # step whose residual the caller still owes after a Compute decision
    pending: int | None = None


def _forced_compute(config: CacheConfig, curve: MagnitudeCurve, t: int) -> bool:
    return (
        t < retained_prefix_length(config.retain_fraction, curve.num_steps)
        or t in config.pinned_steps
        or t in curve.pinned_steps
    )


def decide(state: CacheState, config: CacheConfig, curve: MagnitudeCurve, t: int) -> tuple[Decision, CacheState]:
    """Decide whether step ``t`` is computed or served from the cache.

    Skipping requires the candidate accumulated error to stay within
    ``delta`` and the distance to the last computed step to stay within
    ``max_skip``. A zero budget never skips.
    """
    if not 0 <= t < curve.num_steps:
        raise IndexOutOfRange(f"step {t} outside [0, {curve.num_steps})")
    if state.pending is not None:
        raise ProtocolViolation(f"residual for computed step {state.pending} was never supplied")
    if state.last_computed is not None and t <= state.last_computed:
        raise ProtocolViolation(f"step {t} is not after last computed step {state.last_computed}")

    compute = state.cached_residual is None or _forced_compute(config, curve, t)
    candidate = 0.0
    if not compute:
        t_hat = state.last_computed
        candidate = state.accumulated_error + skip_error(curve, t_hat, t, config.error_model)
        compute = config.delta <= 0.0 or candidate > config.delta or t - t_hat > config.max_skip

    if compute:
        return Decision.COMPUTE, replace(state, last_computed=t, accumulated_error=0.0, run_length=0, pending=t)
    return Decision.SKIP, replace(state, accumulated_error=candidate, run_length=state.run_length + 1)


def on_residual(state: CacheState, t: int, residual) -> CacheState:
    """Store the freshly computed residual for step ``t``."""
    if state.pending != t:
        raise ProtocolViolation(f"no Compute decision outstanding for step {t}")
    return replace(state, cached_residual=residual, last_computed=t, pending=None)


class MagCacheController:
    """Stateful wrapper around :func:`decide` / :func:`on_residual` for one sampling run."""

    def __init__(self, config: CacheConfig, curve: MagnitudeCurve):
        self.config = config
        self.curve = curve
        self.state = CacheState()

    def decide(self, t: int) -> Decision:
        decision, self.state = decide(self.state, self.config, self.curve, t)
        return decision

    def on_residual(self, t: int, residual) -> None:
        self.state = on_residual(self.state, t, residual)

    @property
    def cached_residual(self):
        return self.state.cached_residual

    @property
    def accumulated_error(self) -> float:
        return self.state.accumulated_error


# stands in for the residual during offline derivation; decisions never read it
_NO_RESIDUAL = np.empty((0, 0))


@dataclass(frozen=True, eq=False)
class SkipSchedule:
    decisions: np.ndarray
    estimated_error: np.ndarray
    config: CacheConfig

    @property
    def num_steps(self) -> int:
        return int(self.decisions.size)

    @property
    def computed_count(self) -> int:
        return int(np.count_nonzero(self.decisions))

    @property
    def model_call_speedup(self) -> float:
        return self.num_steps / self.computed_count

    @property
    def computed_steps(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.decisions)]

    def to_dict(self) -> dict:
        return {
            "decisions": [int(bool(d)) for d in self.decisions],
            "estimated_error": [float(e) for e in self.estimated_error],
            "computed_count": self.computed_count,
            "model_call_speedup": self.model_call_speedup,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc) -> "SkipSchedule":
        try:
            decisions = np.array([bool(int(d)) for d in doc["decisions"]], dtype=bool)
            errors = np.array([float(e) for e in doc["estimated_error"]], dtype=np.float64)
            config = CacheConfig.from_dict(doc["config"])
            computed = doc["computed_count"]
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise MalformedDocument(f"bad schedule document: {exc}") from exc
        if decisions.size != errors.size or decisions.size == 0:
            raise MalformedDocument("decisions and estimated_error must have equal non-zero length")
        sched = cls(decisions=decisions, estimated_error=errors, config=config)
        if computed != sched.computed_count:
            raise MalformedDocument(f"computed_count {computed} disagrees with decisions")
        return sched

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SkipSchedule):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.decisions, other.decisions)
            and self.estimated_error.tobytes() == other.estimated_error.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]


def derive_schedule(curve: MagnitudeCurve, config: CacheConfig) -> SkipSchedule:
    """Run the decision process over every step ahead of time."""
    state = CacheState()
    decisions = np.zeros(curve.num_steps, dtype=bool)
    errors = np.zeros(curve.num_steps)
    for t in range(curve.num_steps):
        decision, state = decide(state, config, curve, t)
        if decision is Decision.COMPUTE:
            decisions[t] = True
            state = on_residual(state, t, _NO_RESIDUAL)
        else:
            errors[t] = state.accumulated_error
    return SkipSchedule(decisions=decisions, estimated_error=errors, config=config)


def dumps_schedule(schedule: SkipSchedule) -> str:
    return json.dumps(schedule.to_dict(), indent=2) + "\n"


def loads_schedule(text: str) -> SkipSchedule:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc
    return SkipSchedule.from_dict(doc)


def save_schedule(schedule: SkipSchedule, destination: IO[str] | str | Path) -> None:
    text = dumps_schedule(schedule)
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(text, encoding="utf-8")
    else:
        destination.write(text)


def load_schedule(source: IO[str] | str | Path) -> SkipSchedule:
    if isinstance(source, (str, Path)):
        return loads_schedule(Path(source).read_text(encoding="utf-8"))
    return loads_schedule(source.read())


def with_pins(config: CacheConfig, pins: Iterable[int]) -> CacheConfig:
    return replace(config, pinned_steps=config.pinned_steps | frozenset(pins))
