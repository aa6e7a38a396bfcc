"""Shared domain types: source configuration, photon streams, slices."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

PS_PER_S = 10**12
TWO_PI = 2.0 * math.pi
DEFAULT_BANDWIDTH = TWO_PI * 5e3  # rad/s


class ConfigError(ValueError):
    """Raised when a SourceConfig violates one or more invariants."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class SourceConfig:
    n_stages: int = 2
    bandwidths: tuple[float, ...] = (DEFAULT_BANDWIDTH, DEFAULT_BANDWIDTH)
    mean_rate_per_detector: float = 6500.0  # counts/s
    duration: float = 150.0  # s
    modes_per_stage: int = 256
    sample_dt: float = 5e-6  # s
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bandwidths", tuple(float(b) for b in self.bandwidths))

    @property
    def coherence_times(self) -> tuple[float, ...]:
        return tuple(TWO_PI / b for b in self.bandwidths)

    def replace(self, **changes) -> "SourceConfig":
        d = asdict(self)
        d.update(changes)
        return SourceConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bandwidths"] = list(self.bandwidths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SourceConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown config key: {k}" for k in unknown])
        return cls(**d)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SourceConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def check(config: SourceConfig) -> list[str]:
    """Return the list of violated invariants (empty if the config is valid)."""
    problems = []
    n = config.n_stages
    if not isinstance(n, (int, np.integer)) or n < 0:
        problems.append("n_stages must be a non-negative integer")
        n = None
    bws = config.bandwidths
    if n is not None and len(bws) != n:
        problems.append(f"bandwidth count mismatch: n_stages={n} but {len(bws)} bandwidths")
    if any(not (b > 0 and math.isfinite(b)) for b in bws):
        problems.append("non-positive bandwidth")
    if not (config.mean_rate_per_detector > 0):
        problems.append("mean_rate_per_detector must be positive")
    if not (config.duration > 0):
        problems.append("duration must be positive")
    if not (config.sample_dt > 0):
        problems.append("sample_dt must be positive")
    elif config.sample_dt * PS_PER_S < 1:
        problems.append("sample_dt below 1 ps timestamp resolution")
    if not isinstance(config.modes_per_stage, (int, np.integer)) or config.modes_per_stage < 1:
        problems.append("modes_per_stage must be a positive integer")
    if not (isinstance(config.seed, (int, np.integer)) and 0 <= config.seed < 2**64):
        problems.append("seed must be a 64-bit unsigned integer")

    good = [b for b in bws if b > 0 and math.isfinite(b)]
    if good and config.sample_dt > 0 and config.duration > 0:
        if config.sample_dt > 0.1 * TWO_PI / max(good):
            problems.append("undersampled field: sample_dt must be <= 0.1 coherence time")
        if config.duration < 100 * TWO_PI / min(good):
            problems.append("duration too short: need >= 100 coherence times")
    return problems


def validate(config: SourceConfig) -> SourceConfig:
    problems = check(config)
    if problems:
        raise ConfigError(problems)
    return config


class TimeTuple(NamedTuple):
    """Detection times (s) at D1, D2, D3."""

    t1: float
    t2: float
    t3: float


@dataclass(frozen=True, eq=False)
class PhotonStream:
    """Strictly ascending integer-picosecond detection times for one channel.

    Channel 0 denotes the undivided stream before the three-way splitter.
    """

    channel: int
    timestamps: np.ndarray = field(repr=False)
    duration_ps: int | None = None

    def __post_init__(self):
        if self.channel not in (0, 1, 2, 3):
            raise ValueError(f"channel must be in 0..3, got {self.channel}")
        ts = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        if ts.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if ts.size:
            if ts[0] < 0:
                raise ValueError("timestamps must be non-negative")
            if np.any(np.diff(ts) <= 0):
                raise ValueError("timestamps must be strictly ascending")
            if self.duration_ps is not None and ts[-1] >= self.duration_ps:
                raise ValueError("timestamp beyond stream duration")
        ts.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return self.timestamps.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhotonStream):
            return NotImplemented
        return self.channel == other.channel and np.array_equal(self.timestamps, other.timestamps)

    __hash__ = None


def merge(streams: Sequence[PhotonStream], channel: int = 0) -> PhotonStream:
    """Merge disjoint streams into one ascending stream (duplicates are an error)."""
    if not streams:
        return PhotonStream(channel, np.empty(0, dtype=np.int64))
    ts = np.sort(np.concatenate([s.timestamps for s in streams]), kind="stable")
    durations = [s.duration_ps for s in streams if s.duration_ps is not None]
    return PhotonStream(channel, ts, max(durations) if durations else None)


class SliceDirection(str, enum.Enum):
    T1_EQ_T3 = "t1_eq_t3"  # anti-diagonal, t1-t2 = -(t2-t3)
    T1T2_EQ_T2T3 = "t1t2_eq_t2t3"  # main diagonal
    T1_EQ_T2 = "t1_eq_t2"  # t1-t2 = 0, runs along the t2-t3 axis


@dataclass(frozen=True)
class SliceSpec:
    direction: SliceDirection
    alpha: float = float("nan")

    def __post_init__(self):
        d = SliceDirection(self.direction)
        object.__setattr__(self, "direction", d)
        expected = 1.0 if d is SliceDirection.T1_EQ_T2 else math.sqrt(2.0)
        if math.isnan(self.alpha):
            object.__setattr__(self, "alpha", expected)
        elif not math.isclose(self.alpha, expected):
            raise ValueError(f"alpha for {d.value} must be {expected}, got {self.alpha}")


ALL_SLICES = tuple(SliceSpec(d) for d in SliceDirection)
