"""Weighted least-squares fits of g3 slice profiles.

The fitted curve is f(tau) = B + A * h(tau; dw), where h is the slice model
rescaled to run from 1 at tau = 0 to 0 in the tails. The peak/background
ratio g3(0) = (A + B) / B is therefore free to fall below the ideal value
while dw sets the shape.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .coherence import dsinc, sinc
from .model import PS_PER_S

MODELS = ("eq4", "eq5")


class FitError(ValueError):
    pass


def _check_model(model: str):
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}, got {model!r}")


def _bracket(tau, w, model):
    """Per-stage bracket on the slice and its derivative with respect to w."""
    x = w * tau / 2.0
    u = sinc(x)
    du = dsinc(x) * tau / 2.0
    if model == "eq4":
        return 1.0 + 2.0 * u * u, 4.0 * u * du
    v = sinc(2.0 * x)
    dv = dsinc(2.0 * x) * tau
    b = 1.0 + 2.0 * u * u + v * v + 2.0 * u * u * v
    db = 4.0 * u * du + 2.0 * v * dv + 4.0 * u * du * v + 2.0 * u * u * dv
    return b, db


def peak_value(model: str, n_stages: int) -> float:
    _check_model(model)
    return float((3 if model == "eq4" else 6) ** n_stages)


def _stage_widths(params, n_stages):
    ws = np.asarray(params[2:], dtype=float)
    if ws.size == 1:
        return np.repeat(ws, n_stages), True
    if ws.size != n_stages:
        raise ValueError("need one shared bandwidth or one per stage")
    return ws, False


def shape(tau, bandwidths: Sequence[float], model: str) -> np.ndarray:
    """Rescaled slice model h: 1 at zero delay, 0 for large delays."""
    tau = np.asarray(tau, dtype=float)
    s = np.ones_like(tau)
    for w in bandwidths:
        s = s * _bracket(tau, w, model)[0]
    return (s - 1.0) / (peak_value(model, len(bandwidths)) - 1.0)


def model_value(params, tau, model: str, n_stages: int) -> np.ndarray:
    ws, _ = _stage_widths(params, n_stages)
    return params[1] + params[0] * shape(tau, ws, model)


def model_jacobian(params, tau, model: str, n_stages: int) -> np.ndarray:
    """Analytic d f / d (A, B, dw...) at each tau; shape (len(tau), len(params))."""
    _check_model(model)
    tau = np.asarray(tau, dtype=float)
    ws, shared = _stage_widths(params, n_stages)
    brackets = [_bracket(tau, w, model) for w in ws]
    s = np.ones_like(tau)
    for b, _ in brackets:
        s = s * b
    norm = peak_value(model, n_stages) - 1.0
    jac = np.empty((tau.size, len(params)))
    jac[:, 0] = (s - 1.0) / norm
    jac[:, 1] = 1.0
    dws = [params[0] * s / b * db / norm for b, db in brackets]
    if shared:
        jac[:, 2] = np.sum(dws, axis=0)
    else:
        for k, d in enumerate(dws):
            jac[:, 2 + k] = d
    return jac


@dataclass
class FitResult:
    model: str
    n_stages: int
    g3_zero: float
    g3_zero_err: float
    bandwidth: float | list[float]
    bandwidth_err: float | list[float]
    amplitude: float
    offset: float
    covariance: np.ndarray = field(repr=False)
    rms_residual: float
    chi2: float
    dof: int
    gradient_norm: float
    iterations: int
    converged: bool
    message: str = ""
    sse_history: list[float] = field(default_factory=list, repr=False)

    @property
    def params(self) -> np.ndarray:
        ws = self.bandwidth if isinstance(self.bandwidth, list) else [self.bandwidth]
        return np.array([self.amplitude, self.offset, *ws])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["covariance"] = np.asarray(self.covariance).tolist()
        d["parameters"] = ["amplitude", "offset"] + (
            [f"bandwidth_{k + 1}" for k in range(len(self.bandwidth))]
            if isinstance(self.bandwidth, list) else ["bandwidth"])
        return d


def _half_width(tau, y, level):
    """Smallest |tau| at which the profile falls through `level`, per side, averaged."""
    widths = []
    for side in (tau >= 0, tau <= 0):
        t = np.abs(tau[side])
        v = y[side]
        order = np.argsort(t)
        t, v = t[order], v[order]
        below = np.nonzero(v < level)[0]
        if below.size == 0 or below[0] == 0:
            continue
        i = below[0]
        t0, t1, v0, v1 = t[i - 1], t[i], v[i - 1], v[i]
        widths.append(t0 + (v0 - level) * (t1 - t0) / (v0 - v1))
    return float(np.mean(widths)) if widths else float("nan")


def _half_point(model, n_stages):
    """x = dw*tau where the rescaled shape equals 1/2, by bisection on [0, 2 pi]."""
    lo, hi = 0.0, 2.0 * math.pi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if shape(np.array([mid]), [1.0] * n_stages, model)[0] > 0.5:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def initial_guess(tau, y, model: str, n_stages: int) -> np.ndarray:
    """Background from the outer third, amplitude from the centre, dw from the FWHM."""
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(y, dtype=float)
    outer = np.abs(tau) >= (2.0 / 3.0) * np.abs(tau).max()
    b = float(np.median(y[outer]))
    a = float(y[np.argmin(np.abs(tau))]) - b
    if not a > 0:
        raise FitError("degenerate profile: no peak above background")
    half = _half_width(tau, y, b + a / 2.0)
    if not (half > 0 and math.isfinite(half)):
        raise FitError("degenerate profile: cannot locate half maximum")
    return np.array([a, b, _half_point(model, n_stages) / half])


def fit_slice(tau, value, sigma, model: str = "eq5", n_stages: int = 2, init=None,
              separate_bandwidths: bool = False, absolute_sigma: bool = False,
              max_iter: int = 200, ftol: float = 1e-10, gtol: float = 1e-8) -> FitResult:
    """Levenberg-Marquardt fit of a slice profile (tau in seconds).

    Accepted steps never increase the weighted SSE. Stops when the relative
    SSE change of an accepted step drops below `ftol` or the gradient norm
    (in parameters scaled by their initial values) below `gtol`. The
    covariance is scaled by the reduced chi-square unless `absolute_sigma`.
    """
    _check_model(model)
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(value, dtype=float)
    sig = np.asarray(sigma, dtype=float)
    if not (tau.shape == y.shape == sig.shape and tau.ndim == 1):
        raise FitError("tau, value and sigma must be equal-length vectors")
    if tau.size < 10:
        raise FitError("need at least 10 points")
    if np.any(~(sig > 0)):
        raise FitError("sigmas must be positive")
    if np.ptp(y) == 0:
        raise FitError("degenerate profile: all values equal")
    if n_stages < 1:
        raise FitError("n_stages must be >= 1")

    p0 = initial_guess(tau, y, model, n_stages) if init is None else np.asarray(init, dtype=float)
    if np.ptp(tau) < 3 * 2 * math.pi / np.max(p0[2:]):
        raise FitError("profile spans fewer than 3 coherence times")
    if separate_bandwidths and p0.size == 3:
        p0 = np.concatenate([p0[:2], p0[2] * np.geomspace(0.8, 1.25, n_stages)])

    scale = np.where(p0 != 0, np.abs(p0), 1.0)
    q = p0 / scale

    def resid(qq):
        return (y - model_value(qq * scale, tau, model, n_stages)) / sig

    def jac(qq):
        return model_jacobian(qq * scale, tau, model, n_stages) * scale / sig[:, None]

    r = resid(q)
    sse = float(r @ r)
    history = [sse]
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    J = jac(q)
    grad = J.T @ r
    while it < max_iter:
        it += 1
        if np.linalg.norm(grad) < gtol or sse == 0.0:
            converged, message = True, "gradient norm below tolerance"
            break
        JTJ = J.T @ J
        d = np.diag(JTJ).copy()
        d[d == 0] = 1.0
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(JTJ + lam * np.diag(d), grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            q_new = q + step
            r_new = resid(q_new)
            sse_new = float(r_new @ r_new)
            if np.isfinite(sse_new) and sse_new <= sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            message = "no downhill step found"
            converged = np.linalg.norm(grad) < gtol
            break
        rel = (sse - sse_new) / sse if sse > 0 else 0.0
        q, r, sse = q_new, r_new, sse_new
        history.append(sse)
        J = jac(q)
        grad = J.T @ r
        lam = max(lam / 10.0, 1e-12)
        if rel < ftol:
            converged, message = True, "relative SSE change below tolerance"
            break

    p = q * scale
    m, k = tau.size, p.size
    dof = max(m - k, 1)
    Jp = model_jacobian(p, tau, model, n_stages) / sig[:, None]
    cov = np.linalg.pinv(Jp.T @ Jp)
    if not absolute_sigma:
        cov = cov * (sse / dof)
    cov = 0.5 * (cov + cov.T)
    a, b = p[0], p[1]
    g3 = (a + b) / b
    dg = np.zeros(k)
    dg[0] = 1.0 / b
    dg[1] = -a / b**2
    g3_err = float(math.sqrt(max(dg @ cov @ dg, 0.0)))
    w_err = np.sqrt(np.clip(np.diag(cov)[2:], 0, None))
    if k == 3:
        bandwidth, bandwidth_err = float(p[2]), float(w_err[0])
    else:
        bandwidth, bandwidth_err = p[2:].tolist(), w_err.tolist()
    return FitResult(
        model=model, n_stages=n_stages, g3_zero=float(g3), g3_zero_err=g3_err,
        bandwidth=bandwidth, bandwidth_err=bandwidth_err,
        amplitude=float(a), offset=float(b), covariance=cov,
        rms_residual=float(math.sqrt(sse / m)), chi2=sse, dof=dof,
        gradient_norm=float(np.linalg.norm(grad)), iterations=it,
        converged=bool(converged), message=message, sse_history=history,
    )


def jackknife_g3_zero(profiles, model: str = "eq5", n_stages: int = 2, init=None,
                      separate_bandwidths: bool = False) -> float:
    """Jackknife standard error of g3_zero from leave-one-segment-out profiles.

    Neighbouring bins of a measured slice share the same intensity
    fluctuations, so the per-bin Poisson covariance understates the scatter
    of the fitted peak; refitting each leave-one-out profile does not.
    `profiles` holds objects with tau (ps), value and sigma arrays.
    """
    est = np.array([
        fit_slice(p.tau / PS_PER_S, p.value, p.sigma, model, n_stages, init,
                  separate_bandwidths).g3_zero for p in profiles])
    k = est.size
    if k < 2:
        raise FitError("jackknife needs at least two profiles")
    return float(math.sqrt((k - 1) / k * np.sum((est - est.mean()) ** 2)))
