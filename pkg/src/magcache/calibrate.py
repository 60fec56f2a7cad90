"""Single-trace calibration of the per-step magnitude curve."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import MalformedCurve
from .stats import magnitude_ratio
from .trace import ResidualTrace

CURVE_KEYS = ("model_id", "num_steps", "gamma", "pinned_steps", "source_note")


@dataclass(frozen=True, eq=False)
class MagnitudeCurve:
    """Calibrated average magnitude ratios, one per sampler step.

    ``pinned_steps`` are steps the scheduler must always compute, whatever
    the error budget says.
    """

    model_id: str
    gamma: np.ndarray
    pinned_steps: frozenset[int] = field(default_factory=frozenset)
    source_note: str = ""

    def __post_init__(self) -> None:
        gamma = np.array(self.gamma, dtype=np.float64, copy=True)
        if gamma.ndim != 1 or gamma.size < 1:
            raise MalformedCurve("gamma must be a non-empty 1-D array")
        if not np.all(np.isfinite(gamma)):
            raise MalformedCurve("gamma contains non-finite values")
        if np.any(gamma <= 0):
            raise MalformedCurve("gamma values must be > 0")
        if gamma[0] != 1.0:
            raise MalformedCurve(f"gamma[0] must be 1, got {gamma[0]!r}")
        pinned = frozenset(int(p) for p in self.pinned_steps)
        bad = sorted(p for p in pinned if not 0 <= p < gamma.size)
        if bad:
            raise MalformedCurve(f"pinned steps {bad} outside [0, {gamma.size})")
        gamma.flags.writeable = False
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "pinned_steps", pinned)

    @property
    def num_steps(self) -> int:
        return int(self.gamma.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MagnitudeCurve):
            return NotImplemented
        return (
            self.model_id == other.model_id
            and self.pinned_steps == other.pinned_steps
            and self.source_note == other.source_note
            and self.gamma.tobytes() == other.gamma.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "num_steps": self.num_steps,
            "gamma": [float(g) for g in self.gamma],
            "pinned_steps": sorted(self.pinned_steps),
            "source_note": self.source_note,
        }

    @classmethod
    def from_dict(cls, doc) -> "MagnitudeCurve":
        if not isinstance(doc, dict):
            raise MalformedCurve("curve document must be a JSON object")
        missing = [k for k in CURVE_KEYS if k not in doc]
        if missing:
            raise MalformedCurve(f"missing keys: {missing}")
        model_id, num_steps, gamma, pinned, note = (doc[k] for k in CURVE_KEYS)
        if not isinstance(model_id, str) or not isinstance(note, str):
            raise MalformedCurve("model_id and source_note must be strings")
        if isinstance(num_steps, bool) or not isinstance(num_steps, int) or num_steps < 1:
            raise MalformedCurve(f"num_steps must be a positive integer, got {num_steps!r}")
        if not isinstance(gamma, list) or not all(
            isinstance(g, (int, float)) and not isinstance(g, bool) for g in gamma
        ):
            raise MalformedCurve("gamma must be an array of numbers")
        if len(gamma) != num_steps:
            raise MalformedCurve(f"len(gamma)={len(gamma)} but num_steps={num_steps}")
        if not isinstance(pinned, list) or not all(
            isinstance(p, int) and not isinstance(p, bool) for p in pinned
        ):
            raise MalformedCurve("pinned_steps must be an array of integers")
        if not all(math.isfinite(g) and g > 0 for g in gamma):
            raise MalformedCurve("gamma values must be finite and > 0")
        return cls(model_id=model_id, gamma=np.array(gamma, dtype=np.float64),
                   pinned_steps=frozenset(pinned), source_note=note)


def calibrate_from_trace(trace: ResidualTrace, pinned: Iterable[int] = (), note: str = "") -> MagnitudeCurve:
    """Build a curve from the average magnitude ratios of one trace."""
    return MagnitudeCurve(
        model_id=trace.model_id,
        gamma=magnitude_ratio(trace),
        pinned_steps=frozenset(pinned),
        source_note=note,
    )


def dumps_curve(curve: MagnitudeCurve) -> str:
    # json writes floats with repr(), which round-trips float64 exactly
    return json.dumps(curve.to_dict(), indent=2) + "\n"


def loads_curve(text: str) -> MagnitudeCurve:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedCurve(f"invalid JSON: {exc}") from exc
    return MagnitudeCurve.from_dict(doc)


def save_curve(curve: MagnitudeCurve, destination: IO[str] | str | Path) -> None:
    text = dumps_curve(curve)
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(text, encoding="utf-8")
    else:
        destination.write(text)


def load_curve(source: IO[str] | str | Path) -> MagnitudeCurve:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    return loads_curve(text)
