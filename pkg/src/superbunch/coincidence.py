"""Three-fold (and two-fold) coincidence counting over timestamp streams.

Bins are half-open, [k*bw - bw/2, k*bw + bw/2), so the centre bin straddles
zero delay. A delay d is counted when |d| <= max_delay; the two outermost
bins are therefore truncated and `bin_widths` reports the exact number of
integer-picosecond delays each bin covers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .model import PS_PER_S, PhotonStream, SliceDirection, SliceSpec

BRUTE_FORCE_LIMIT = 10_000


class AnalysisError(ValueError):
    pass


def _check_geometry(bin_width: int, max_delay: int) -> int:
    if bin_width < 1 or max_delay < 0:
        raise AnalysisError("bin_width must be >= 1 ps and max_delay >= 0")
    if max_delay % bin_width:
        raise AnalysisError("max_delay must be a multiple of bin_width")
    return max_delay // bin_width


def _ts(s) -> np.ndarray:
    ts = s.timestamps if isinstance(s, PhotonStream) else np.asarray(s, dtype=np.int64)
    if ts.size > 1 and np.any(np.diff(ts) < 0):
        raise AnalysisError("input stream is not sorted")
    return np.ascontiguousarray(ts, dtype=np.int64)


def bin_index(d, bin_width: int):
    """Signed bin index of integer delay(s) d."""
    return (2 * np.asarray(d, dtype=np.int64) + bin_width) // (2 * bin_width)


def bin_widths(bin_width: int, max_delay: int) -> np.ndarray:
    """Number of integer-ps delays inside each bin, k = -K..K."""
    half = _check_geometry(bin_width, max_delay)
    k = np.arange(-half, half + 1, dtype=np.int64)
    # integer d in bin k: ceil(k*bw - bw/2) <= d < ceil(k*bw + bw/2)
    lo = -((bin_width - 2 * k * bin_width) // 2)
    hi = -((-2 * k * bin_width - bin_width) // 2) - 1
    lo = np.maximum(lo, -max_delay)
    hi = np.minimum(hi, max_delay)
    return hi - lo + 1


@numba.njit(cache=True, nogil=True)
def _sweep(a, b, c, bw, max_delay, half, i0, i1, counts):
    """Forward sweep anchored on b[i0:i1] with sliding windows over a and c."""
    na = a.size
    nc = c.size
    lo1 = np.searchsorted(a, b[i0] - max_delay) if i0 < i1 else 0
    hi1 = lo1
    lo3 = np.searchsorted(c, b[i0] - max_delay) if i0 < i1 else 0
    hi3 = lo3
    idx1 = np.empty(16, np.int64)
    idx3 = np.empty(16, np.int64)
    for j in range(i0, i1):
        t = b[j]
        while lo1 < na and a[lo1] < t - max_delay:
            lo1 += 1
        if hi1 < lo1:
            hi1 = lo1
        while hi1 < na and a[hi1] <= t + max_delay:
            hi1 += 1
        while lo3 < nc and c[lo3] < t - max_delay:
            lo3 += 1
        if hi3 < lo3:
            hi3 = lo3
        while hi3 < nc and c[hi3] <= t + max_delay:
            hi3 += 1
        n1 = hi1 - lo1
        n3 = hi3 - lo3
        if n1 == 0 or n3 == 0:
            continue
        if n1 > idx1.size:
            idx1 = np.empty(2 * n1, np.int64)
        if n3 > idx3.size:
            idx3 = np.empty(2 * n3, np.int64)
        for p in range(n1):
            idx1[p] = (2 * (a[lo1 + p] - t) + bw) // (2 * bw) + half
        for q in range(n3):
            idx3[q] = (2 * (t - c[lo3 + q]) + bw) // (2 * bw) + half
        for p in range(n1):
            row = idx1[p]
            for q in range(n3):
                counts[row, idx3[q]] += 1


@numba.njit(cache=True, nogil=True)
def _pair_sweep(a, b, bw, max_delay, half, counts):
    na = a.size
    lo = 0
    hi = 0
    for j in range(b.size):
        t = b[j]
        while lo < na and a[lo] < t - max_delay:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < na and a[hi] <= t + max_delay:
            hi += 1
        for p in range(lo, hi):
            counts[(2 * (a[p] - t) + bw) // (2 * bw) + half] += 1


@dataclass(eq=False)
class CoincidenceHistogram:
    """Triple counts indexed by (bin of t1-t2, bin of t2-t3)."""

    bin_width: int
    max_delay: int
    counts: np.ndarray = field(repr=False)
    totals: tuple[int, int, int]
    duration: int  # ps

    @property
    def half(self) -> int:
        return self.max_delay // self.bin_width

    @property
    def taus(self) -> np.ndarray:
        """Bin centres in ps along either axis."""
        return np.arange(-self.half, self.half + 1, dtype=np.int64) * self.bin_width

    def __add__(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        if (self.bin_width, self.max_delay) != (other.bin_width, other.max_delay):
            raise AnalysisError("cannot add histograms with different geometry")
        return CoincidenceHistogram(
            self.bin_width,
            self.max_delay,
            self.counts + other.counts,
            tuple(x + y for x, y in zip(self.totals, other.totals)),
            self.duration + other.duration,
        )


def _duration_of(streams, duration):
    if duration is not None:
        return int(duration)
    ds = [s.duration_ps for s in streams if isinstance(s, PhotonStream) and s.duration_ps]
    if ds:
        return max(ds)
    last = [int(_ts(s)[-1]) + 1 for s in streams if len(_ts(s))]
    return max(last) if last else 0


def count_triples(s1, s2, s3, bin_width: int, max_delay: int, duration: int | None = None,
                  anchor: tuple[int, int] | None = None) -> CoincidenceHistogram:
    """Count every triple (a, b, c) with |a-b| <= max_delay and |b-c| <= max_delay.

    `anchor` restricts the sweep to s2 events with index in [start, stop);
    histograms over a partition of s2 sum to the full histogram.
    """
    half = _check_geometry(bin_width, max_delay)
    a, b, c = _ts(s1), _ts(s2), _ts(s3)
    i0, i1 = anchor if anchor is not None else (0, b.size)
    counts = np.zeros((2 * half + 1, 2 * half + 1), dtype=np.int64)
    _sweep(a, b, c, np.int64(bin_width), np.int64(max_delay), np.int64(half), i0, i1, counts)
    return CoincidenceHistogram(bin_width, max_delay, counts, (a.size, b.size, c.size),
                                _duration_of((s1, s2, s3), duration))


def brute_force_triples(s1, s2, s3, bin_width: int, max_delay: int,
                        duration: int | None = None) -> CoincidenceHistogram:
    """Naive triple loop; testing oracle for count_triples."""
    half = _check_geometry(bin_width, max_delay)
    a, b, c = _ts(s1), _ts(s2), _ts(s3)
    if a.size + b.size + c.size > BRUTE_FORCE_LIMIT:
        raise AnalysisError(f"brute force limited to {BRUTE_FORCE_LIMIT} events")
    counts = np.zeros((2 * half + 1, 2 * half + 1), dtype=np.int64)
    for ta in a.tolist():
        for tb in b.tolist():
            d12 = ta - tb
            if abs(d12) > max_delay:
                continue
            for tc in c.tolist():
                d23 = tb - tc
                if abs(d23) > max_delay:
                    continue
                i = (2 * d12 + bin_width) // (2 * bin_width) + half
                j = (2 * d23 + bin_width) // (2 * bin_width) + half
                counts[i, j] += 1
    return CoincidenceHistogram(bin_width, max_delay, counts, (a.size, b.size, c.size),
                                _duration_of((s1, s2, s3), duration))


def segment_bounds(s2, duration: int, n_segments: int) -> list[tuple[int, int, int, int]]:
    """Split [0, duration) into equal time segments.

    Returns (t_start, t_stop, i_start, i_stop) with s2 index ranges.
    """
    b = _ts(s2)
    edges = np.linspace(0, duration, n_segments + 1).round().astype(np.int64)
    idx = np.searchsorted(b, edges)
    return [(int(edges[k]), int(edges[k + 1]), int(idx[k]), int(idx[k + 1]))
            for k in range(n_segments)]


def count_triples_segmented(s1, s2, s3, bin_width: int, max_delay: int,
                            duration: int | None = None, n_segments: int = 1,
                            threads: int = 1) -> list[CoincidenceHistogram]:
    """Per-time-segment histograms; their sum equals count_triples on the whole record.

    Each segment owns the s2 anchors inside it and sees s1/s3 events beyond
    its edges, so no triple is lost or double counted. Totals and duration
    are per segment.
    """
    a, b, c = _ts(s1), _ts(s2), _ts(s3)
    T = _duration_of((s1, s2, s3), duration)
    bounds = segment_bounds(b, T, n_segments)

    def work(bd):
        t0, t1, i0, i1 = bd
        h = count_triples(a, b, c, bin_width, max_delay, t1 - t0, anchor=(i0, i1))
        n1 = int(np.searchsorted(a, t1) - np.searchsorted(a, t0))
        n3 = int(np.searchsorted(c, t1) - np.searchsorted(c, t0))
        h.totals = (n1, i1 - i0, n3)
        return h

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(work, bounds))
    return [work(bd) for bd in bounds]


def sum_histograms(hists: Sequence[CoincidenceHistogram]) -> CoincidenceHistogram:
    out = hists[0]
    for h in hists[1:]:
        out = out + h
    return out


@dataclass(eq=False)
class G3Surface:
    bin_width: int
    max_delay: int
    values: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)

    @property
    def half(self) -> int:
        return self.max_delay // self.bin_width

    @property
    def taus(self) -> np.ndarray:
        return np.arange(-self.half, self.half + 1, dtype=np.int64) * self.bin_width

    @property
    def center(self) -> float:
        return float(self.values[self.half, self.half])

    @classmethod
    def from_function(cls, fn, bin_width: int, max_delay: int) -> "G3Surface":
        """Noise-free surface with values fn(tau12_s, tau23_s) at the bin centres."""
        half = _check_geometry(bin_width, max_delay)
        t = np.arange(-half, half + 1) * bin_width / PS_PER_S
        v = np.asarray(fn(t[:, None], t[None, :]), dtype=float)
        v = np.broadcast_to(v, (t.size, t.size)).copy()
        return cls(bin_width, max_delay, v, np.zeros_like(v))


def accidental_expectation(hist: CoincidenceHistogram) -> np.ndarray:
    """Expected counts per bin for uncorrelated Poisson streams with the same rates."""
    if hist.duration <= 0:
        raise AnalysisError("duration must be positive")
    if min(hist.totals) <= 0:
        raise AnalysisError("zero rate on at least one channel")
    T = float(hist.duration)
    r1, r2, r3 = (n / T for n in hist.totals)
    w = bin_widths(hist.bin_width, hist.max_delay).astype(float)
    return r1 * r2 * r3 * T * np.outer(w, w)


def normalize(hist: CoincidenceHistogram) -> G3Surface:
    """Divide counts by the accidental expectation r1 r2 r3 T w12 w23.

    sigma is the Poisson error sqrt(max(count, 1)) / expectation; empty
    bins get the one-count error rather than zero.
    """
    exp = accidental_expectation(hist)
    values = hist.counts / exp
    sigma = np.sqrt(np.maximum(hist.counts, 1)) / exp
    return G3Surface(hist.bin_width, hist.max_delay, values, sigma)


@dataclass(eq=False)
class SliceProfile:
    direction: SliceDirection
    alpha: float
    tau: np.ndarray  # ps, per-axis delay
    value: np.ndarray
    sigma: np.ndarray

    def rows(self) -> list[tuple[int, float, float]]:
        return list(zip(self.tau.tolist(), self.value.tolist(), self.sigma.tolist()))

    @property
    def center(self) -> float:
        return float(self.value[self.tau.size // 2])


def slice_indices(half: int, direction: SliceDirection) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(-half, half + 1)
    if direction is SliceDirection.T1_EQ_T3:
        return k + half, -k + half
    if direction is SliceDirection.T1T2_EQ_T2T3:
        return k + half, k + half
    if direction is SliceDirection.T1_EQ_T2:
        return np.full_like(k, half), k + half
    raise ValueError(direction)


def slice(surface: G3Surface, spec: SliceSpec) -> SliceProfile:  # noqa: A001
    """Bins along a line through the centre.

    The abscissa is t1-t2 for the two diagonals and t2-t3 for t1 = t2.
    """
    spec = spec if isinstance(spec, SliceSpec) else SliceSpec(spec)
    i, j = slice_indices(surface.half, spec.direction)
    return SliceProfile(spec.direction, spec.alpha, surface.taus.copy(),
                        surface.values[i, j].copy(), surface.sigma[i, j].copy())


def background_mask(half: int, bin_width: int, tau_c: float) -> np.ndarray:
    """Bins where all three pairwise delays exceed 3 coherence times (tau_c in ps)."""
    t = np.arange(-half, half + 1) * float(bin_width)
    t12 = t[:, None]
    t23 = t[None, :]
    m = np.minimum(np.minimum(np.abs(t12), np.abs(t23)), np.abs(t12 + t23))
    return m > 3.0 * tau_c


def background_mean(surface: G3Surface, tau_c: float) -> float:
    mask = background_mask(surface.half, surface.bin_width, tau_c)
    if not mask.any():
        raise AnalysisError("no background bins: max_delay must exceed 3 coherence times")
    return float(surface.values[mask].mean())


def slice_tail_mean(profile: SliceProfile, tau_c: float) -> float:
    mask = np.abs(profile.tau) > 3.0 * tau_c
    if not mask.any():
        raise AnalysisError("slice too short for a background estimate")
    return float(profile.value[mask].mean())


def summarize(surface: G3Surface, tau_c: float) -> dict:
    """Centre value, background mean, peak/background ratio and per-slice ratios."""
    bg = background_mean(surface, tau_c)
    out = {
        "center": surface.center,
        "background": bg,
        "ratio": surface.center / bg,
        "slices": {},
    }
    for spec in (SliceSpec(d) for d in SliceDirection):
        p = slice(surface, spec)
        tail = slice_tail_mean(p, tau_c)
        out["slices"][spec.direction.value] = {
            "alpha": spec.alpha,
            "center": p.center,
            "tail": tail,
            "ratio": p.center / tail,
        }
    return out


def flat_summary(summary: dict) -> dict:
    flat = {k: summary[k] for k in ("center", "background", "ratio")}
    for name, s in summary["slices"].items():
        flat[f"{name}_ratio"] = s["ratio"]
    return flat


def leave_one_out(segments: Sequence[CoincidenceHistogram]):
    """Yield the sum of all segments but one, for each segment in turn."""
    full = sum_histograms(segments)
    for seg in segments:
        yield CoincidenceHistogram(
            full.bin_width, full.max_delay, full.counts - seg.counts,
            tuple(x - y for x, y in zip(full.totals, seg.totals)), full.duration - seg.duration)


def jackknife_std(values) -> float:
    v = np.asarray(values, dtype=float)
    k = v.size
    return float(math.sqrt((k - 1) / k * np.sum((v - v.mean()) ** 2)))


def jackknife(segments: Sequence[CoincidenceHistogram], tau_c: float) -> dict:
    """Leave-one-segment-out standard errors of the summary quantities."""
    if len(segments) < 2:
        return {}
    est = [flat_summary(summarize(normalize(rest), tau_c)) for rest in leave_one_out(segments)]
    return {key: jackknife_std([e[key] for e in est]) for key in est[0]}


def leave_one_out_slices(segments: Sequence[CoincidenceHistogram], spec: SliceSpec):
    """Slice profiles of each leave-one-segment-out surface (for jackknifing fits)."""
    return [slice(normalize(rest), spec) for rest in leave_one_out(segments)]


# -- second order ------------------------------------------------------------

@dataclass(eq=False)
class PairHistogram:
    bin_width: int
    max_delay: int
    counts: np.ndarray = field(repr=False)  # indexed by bin of t1 - t2
    totals: tuple[int, int]
    duration: int

    @property
    def taus(self) -> np.ndarray:
        half = self.max_delay // self.bin_width
        return np.arange(-half, half + 1, dtype=np.int64) * self.bin_width


def count_pairs(s1, s2, bin_width: int, max_delay: int, duration: int | None = None) -> PairHistogram:
    half = _check_geometry(bin_width, max_delay)
    a, b = _ts(s1), _ts(s2)
    counts = np.zeros(2 * half + 1, dtype=np.int64)
    _pair_sweep(a, b, np.int64(bin_width), np.int64(max_delay), np.int64(half), counts)
    return PairHistogram(bin_width, max_delay, counts, (a.size, b.size), _duration_of((s1, s2), duration))


def normalize_pairs(hist: PairHistogram) -> tuple[np.ndarray, np.ndarray]:
    """Empirical g2 per bin and its Poisson error."""
    if hist.duration <= 0 or min(hist.totals) <= 0:
        raise AnalysisError("zero rate on at least one channel")
    T = float(hist.duration)
    w = bin_widths(hist.bin_width, hist.max_delay)
    exp = hist.totals[0] * hist.totals[1] / T * w
    return hist.counts / exp, np.sqrt(np.maximum(hist.counts, 1)) / exp


@dataclass(eq=False)
class Analysis:
    histogram: CoincidenceHistogram
    surface: G3Surface
    slices: dict
    summary: dict
    errors: dict
    tau_c: float
    segments: list = field(default_factory=list, repr=False)


def analyze(s1, s2, s3, bin_width: int, max_delay: int, tau_c: float,
            duration: int | None = None, n_segments: int = 16, threads: int = 1) -> Analysis:
    """Histogram, g3 surface, slices and summary with jackknife errors (tau_c in ps)."""
    segs = count_triples_segmented(s1, s2, s3, bin_width, max_delay, duration,
                                   max(n_segments, 1), threads)
    hist = sum_histograms(segs)
    surf = normalize(hist)
    slices = {spec.direction.value: slice(surf, spec) for spec in (SliceSpec(d) for d in SliceDirection)}
    return Analysis(hist, surf, slices, summarize(surf, tau_c), jackknife(segs, tau_c), tau_c,
                    segs)
