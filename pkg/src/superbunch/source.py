"""Monte-Carlo synthesis of cascaded pseudothermal light.

Each scattering stage is modelled as a stationary complex field with a flat
spectrum of angular width dw. Its intensity is thermal, with
g1(tau) = sinc(dw*tau/2). Stages are independent, so the cascade intensity
is the pointwise product of the stage intensities. Photons are drawn as an
inhomogeneous Poisson process and routed at random to three detectors.

Random streams are numpy PCG64 generators seeded from the config seed
XOR a sha256-derived 64-bit label hash, so they are portable across
platforms.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .model import PS_PER_S, TWO_PI, PhotonStream, SourceConfig, validate

log = logging.getLogger(__name__)

MIN_MODES = 64
MAX_BIN_OCCUPANCY = 0.1
_BLOCK = 4096  # samples per matmul block of the mode sum


def label_hash(label) -> int:
    digest = hashlib.sha256(str(label).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, label) -> int:
    return (int(seed) ^ label_hash(label)) & (2**64 - 1)


def make_rng(seed: int, label) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, label)))


def dt_to_ps(dt: float) -> int:
    dt_ps = int(round(dt * PS_PER_S))
    if dt_ps < 1:
        raise ValueError("sample interval below 1 ps")
    return dt_ps


@dataclass(frozen=True, eq=False)
class IntensityTrace:
    samples: np.ndarray = field(repr=False)
    dt: float
    duration: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if s.size and s.min() < 0:
            raise ValueError("intensity samples must be non-negative")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def mean(self) -> float:
        return float(self.samples.mean())


class ModeSumField:
    """E(t) = M^-1/2 sum_k exp(i(w_k t + phi_k)) with w_k spanning [-dw/2, dw/2).

    Frequencies are stratified: one uniform draw inside each of M equal
    sub-bands. The expected spectrum is still flat, but the sample
    autocorrelation tracks sinc with O(1/M) error rather than O(1/sqrt(M)).
    """

    def __init__(self, bandwidth: float, modes: int, rng: np.random.Generator):
        if modes < MIN_MODES:
            raise ValueError(f"modes must be >= {MIN_MODES}, got {modes}")
        if not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        self.bandwidth = float(bandwidth)
        self.modes = int(modes)
        self.omega = bandwidth * ((np.arange(modes) + rng.random(modes)) / modes - 0.5)
        self.phase = rng.random(modes) * TWO_PI

    def evaluate(self, start: int, count: int, dt: float) -> np.ndarray:
        """Complex field at samples start .. start+count-1 spaced by dt seconds."""
        nblocks = -(-count // _BLOCK)
        j = np.arange(_BLOCK) * dt
        basis = np.exp(1j * np.outer(j, self.omega))  # (block, M)
        block_t = (start + np.arange(nblocks) * _BLOCK) * dt
        coef = np.exp(1j * (np.outer(self.omega, block_t) + self.phase[:, None]))
        field = (basis @ coef).T.reshape(-1)[:count]
        return field / math.sqrt(self.modes)


def fft_field(bandwidth: float, n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian field with a rectangular spectrum, unit mean power."""
    freqs = TWO_PI * np.fft.fftfreq(n, dt)
    mask = np.abs(freqs) <= bandwidth / 2
    spec = np.zeros(n, dtype=complex)
    k = int(mask.sum())
    if k == 0:
        raise ValueError("bandwidth narrower than the frequency resolution of the grid")
    spec[mask] = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / math.sqrt(2 * k)
    return np.fft.ifft(spec) * n


def synthesize_field(bandwidth, duration, dt, modes, rng, method="modes") -> np.ndarray:
    n = int(round(duration / dt))
    if method == "modes":
        return ModeSumField(bandwidth, modes, rng).evaluate(0, n, dt)
    if method == "fft":
        if modes < MIN_MODES:
            raise ValueError(f"modes must be >= {MIN_MODES}, got {modes}")
        return fft_field(bandwidth, n, dt, rng)
    raise ValueError(f"unknown synthesis method {method!r}")


def synthesize_stage_field(bandwidth, duration, dt, modes, rng, method="modes") -> IntensityTrace:
    """Thermal intensity trace for one rotating-groundglass stage (unit mean)."""
    e = synthesize_field(bandwidth, duration, dt, modes, rng, method)
    return IntensityTrace(e.real**2 + e.imag**2, dt, duration)


def cascade(traces: Sequence[IntensityTrace]) -> IntensityTrace:
    if not traces:
        raise ValueError("cascade needs at least one trace")
    first = traces[0]
    out = first.samples.copy()
    for tr in traces[1:]:
        if tr.dt != first.dt or tr.duration != first.duration or len(tr) != len(first):
            raise ValueError("traces must share dt and duration")
        out *= tr.samples
    return IntensityTrace(out, first.dt, first.duration)


def _check_rate(mean_rate: float, dt: float):
    if mean_rate * dt > MAX_BIN_OCCUPANCY:
        raise ValueError(
            f"rate*dt = {mean_rate * dt:.3g} exceeds {MAX_BIN_OCCUPANCY}; "
            f"shrink sample_dt below {MAX_BIN_OCCUPANCY / mean_rate:.3g} s"
        )


def _emit(intensity: np.ndarray, mean_rate: float, dt_ps: int, start: int, rng) -> np.ndarray:
    lam = intensity * (mean_rate * dt_ps / PS_PER_S)
    counts = rng.poisson(lam)
    idx = np.repeat(np.arange(start, start + intensity.size, dtype=np.int64), counts)
    return idx * dt_ps + rng.integers(0, dt_ps, size=idx.size)


def sample_photons(trace: IntensityTrace, mean_rate: float, rng, start_sample: int = 0) -> PhotonStream:
    """Photodetection of `trace` at `mean_rate` counts/s (pre-splitter, channel 0).

    Each sample bin emits a Poisson number of events with mean
    rate*I*dt, placed uniformly inside the bin at integer-ps resolution.
    """
    _check_rate(mean_rate, trace.dt)
    dt_ps = dt_to_ps(trace.dt)
    ts = np.unique(_emit(trace.samples, mean_rate, dt_ps, start_sample, rng))
    return PhotonStream(0, ts, (start_sample + len(trace)) * dt_ps)


def split_three(stream: PhotonStream, rng) -> tuple[PhotonStream, PhotonStream, PhotonStream]:
    """Route each event to D1, D2 or D3 with probability 1/3 (1:1:1 splitter)."""
    ch = rng.integers(0, 3, size=len(stream))
    return tuple(
        PhotonStream(k + 1, stream.timestamps[ch == k], stream.duration_ps) for k in range(3)
    )


def stage_fields(config: SourceConfig) -> list[ModeSumField]:
    return [
        ModeSumField(bw, config.modes_per_stage, make_rng(config.seed, l))
        for l, bw in enumerate(config.bandwidths, start=1)
    ]


def intensity_chunks(config: SourceConfig, chunk: int = 1 << 20) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (first sample index, cascade intensity) chunk by chunk."""
    n = int(round(config.duration / config.sample_dt))
    dt = dt_to_ps(config.sample_dt) / PS_PER_S
    fields = stage_fields(config)
    for start in range(0, n, chunk):
        count = min(chunk, n - start)
        out = np.ones(count)
        for f in fields:
            e = f.evaluate(start, count, dt)
            out *= e.real**2 + e.imag**2
        yield start, out


def simulate(config: SourceConfig, chunk: int = 1 << 20) -> tuple[PhotonStream, PhotonStream, PhotonStream]:
    """Run source, detection and splitter; deterministic given config.seed."""
    validate(config)
    total_rate = 3.0 * config.mean_rate_per_detector
    _check_rate(total_rate, config.sample_dt)
    dt_ps = dt_to_ps(config.sample_dt)
    n = int(round(config.duration / config.sample_dt))
    rng = make_rng(config.seed, "photons")
    parts = []
    for start, intensity in intensity_chunks(config, chunk):
        parts.append(_emit(intensity, total_rate, dt_ps, start, rng))
    ts = np.unique(np.concatenate(parts)) if parts else np.empty(0, np.int64)
    log.info("simulated %d photons over %.3g s", ts.size, config.duration)
    stream = PhotonStream(0, ts, n * dt_ps)
    return split_three(stream, make_rng(config.seed, "split"))


def empirical_g2(samples: np.ndarray, max_lag: int) -> np.ndarray:
    """Time-averaged <I(t)I(t+k)>/<I>^2 for k = 0..max_lag (circular-free)."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    ac = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    ac /= n - np.arange(max_lag + 1)
    return ac / x.mean() ** 2


def empirical_g1(field: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized field autocorrelation <E*(t)E(t+k)>/<|E|^2> for k = 0..max_lag."""
    e = np.asarray(field, dtype=complex)
    n = e.size
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.fft(e, nfft)
    ac = np.fft.ifft(np.conj(f) * f, nfft)[: max_lag + 1]
    ac /= n - np.arange(max_lag + 1)
    return ac / ac[0].real


def empirical_g3_zero(samples: np.ndarray) -> float:
    x = np.asarray(samples, dtype=float)
    return float(np.mean(x**3) / np.mean(x) ** 3)
