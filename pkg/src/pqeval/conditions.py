"""Weather / time-of-day condition tags and the per-condition weight table."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping


class Weather(str, Enum):
    CLEAR = "clear"
    FOG = "fog"
    RAIN = "rain"
    SNOW = "snow"


class TimeOfDay(str, Enum):
    DAY = "day"
    NIGHT = "night"


@dataclass(frozen=True, order=True)
class ConditionTag:
    """One cell of the weather x time-of-day grid, e.g. fog/night."""

    weather: Weather
    tod: TimeOfDay

    @classmethod
    def parse(cls, text: str) -> "ConditionTag":
        """Parse a "<weather>/<tod>" string such as "fog/night"."""
        parts = text.strip().split("/")
        if len(parts) != 2:
            raise ValueError(f"condition must be '<weather>/<tod>', got {text!r}")
        try:
            return cls(Weather(parts[0]), TimeOfDay(parts[1]))
        except ValueError:
            raise ValueError(f"unknown condition {text!r}") from None

    @classmethod
    def all(cls) -> tuple["ConditionTag", ...]:
        """All eight combinations, in a fixed deterministic order."""
        return tuple(cls(w, t) for w in Weather for t in TimeOfDay)

    def __str__(self) -> str:
        return f"{self.weather.value}/{self.tod.value}"


CLEAR_DAY = ConditionTag(Weather.CLEAR, TimeOfDay.DAY)

# Adverse-emphasis weighting: clear daytime counts half, the seven other
# condition subsets count in full.
DEFAULT_WEIGHTS: Mapping[ConditionTag, Fraction] = {
    tag: (Fraction(1, 2) if tag == CLEAR_DAY else Fraction(1)) for tag in ConditionTag.all()
}


def _as_fraction(value: object) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, float)):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    raise TypeError(f"cannot interpret weight {value!r}")


@dataclass(frozen=True)
class WeightConfig:
    """Nonnegative per-condition weights used by the aggregate scores.

    Weights are kept as exact rationals so weighted means are reproducible
    bit for bit regardless of accumulation order.
    """

    weights: Mapping[ConditionTag, Fraction] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def __post_init__(self) -> None:
        cleaned = {tag: _as_fraction(lam) for tag, lam in self.weights.items()}
        for tag, lam in cleaned.items():
            if lam < 0:
                raise ValueError(f"weight for {tag} must be >= 0, got {lam}")
        if not any(lam > 0 for lam in cleaned.values()):
            raise ValueError("at least one condition weight must be positive")
        object.__setattr__(self, "weights", cleaned)

    def __getitem__(self, tag: ConditionTag) -> Fraction:
        try:
            return self.weights[tag]
        except KeyError:
            raise KeyError(f"no weight configured for condition {tag}") from None

    def total(self, tags: Iterable[ConditionTag] | None = None) -> Fraction:
        """Sum of weights over ``tags`` (default: every configured condition)."""
        if tags is None:
            tags = self.weights.keys()
        return sum((self[t] for t in tags), Fraction(0))

    def to_json(self) -> str:
        payload = {str(tag): float(lam) for tag, lam in sorted(self.weights.items())}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, raw: bytes | str) -> "WeightConfig":
        payload = json.loads(raw)
        if not isinstance(payload, dict):
            raise ValueError("weights file must be a JSON object of '<weather>/<tod>' -> weight")
        weights = {ConditionTag.parse(key): _as_fraction(value) for key, value in payload.items()}
        return cls(weights)

    @classmethod
    def default(cls) -> "WeightConfig":
        return cls(dict(DEFAULT_WEIGHTS))
