"""Recombination-limited QP density decay and the resulting frequency-shift recovery."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .device_model import QubitParams
from .junction_response import QpDensities, frequency_shift, shift_coefficients


class FitError(RuntimeError):
    def __init__(self, msg, log=None):
        super().__init__(msg)
        self.log = log or []


@dataclass(frozen=True)
class RecombinationModel:
    r: float
    x0: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("recombination rate must be positive")
        if self.x0 < 0:
            raise ValueError("initial density must be non-negative")


@dataclass
class RecoveryFit:
    delta_f0: float
    t_rec: float
    r: float
    residual: float
    model: str = "hyperbolic"
    qubit_id: int | None = None

    def to_json(self) -> str:
        d = {"qubit_id": self.qubit_id, "delta_f0_hz": self.delta_f0, "t_rec_s": self.t_rec,
             "r_per_s": self.r, "residual": self.residual, "model": self.model}
        return json.dumps(d)


@dataclass
class ShiftTrace:
    times: np.ndarray
    shifts: np.ndarray
    qubit_id: int | None = None
    fit: RecoveryFit | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.shifts = np.asarray(self.shifts, dtype=float)
        if self.times.shape != self.shifts.shape:
            raise ValueError("times and shifts differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def to_csv(self) -> str:
        lines = ["time_s,shift_hz"]
        lines += [f"{float(t)!r},{float(s)!r}" for t, s in zip(self.times, self.shifts)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, qubit_id=None) -> "ShiftTrace":
        rows = [ln.split(",") for ln in text.strip().splitlines()[1:] if ln.strip()]
        arr = np.array(rows, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], qubit_id)


def evolve_density(model: RecombinationModel, t):
    """x(t) = x0 / (1 + r x0 t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    out = model.x0 / (1.0 + model.r * model.x0 * t)
    return float(out) if out.ndim == 0 else out


def recovery_time(model: RecombinationModel) -> float:
    return np.inf if model.x0 == 0 else 1.0 / (model.r * model.x0)


def hyperbolic(t, delta_f0, t_rec):
    return delta_f0 / (1.0 + np.asarray(t) / t_rec)


def shift_trajectory(model: RecombinationModel, qubit: QubitParams, times, qubit_id=None) -> ShiftTrace:
    times = np.asarray(times, dtype=float)
    df0 = frequency_shift(QpDensities(model.x0), qubit)
    if model.x0 == 0:
        return ShiftTrace(times, np.zeros_like(times), qubit_id)
    return ShiftTrace(times, hyperbolic(times, df0, recovery_time(model)), qubit_id)


def _half_time(t, y):
    peak = y[np.argmax(np.abs(y))]
    below = np.nonzero(np.abs(y) <= 0.5 * abs(peak))[0]
    i0 = int(np.argmax(np.abs(y)))
    below = below[below > i0]
    if below.size == 0:
        return None
    return t[below[0]] - t[i0]


def fit_recovery(trace: ShiftTrace, a: float, f_q: float, peak_window: float = 0.2) -> RecoveryFit:
    """Least-squares fit of the hyperbolic recovery law.

    The initial shift is confined to ``±peak_window`` around the measured
    peak; ``r`` follows from ``t_rec = a f_q / (r |delta_f0|)``.
    """
    t = trace.times - trace.times[0]
    y = trace.shifts
    if t.size < 10:
        raise FitError("need at least 10 samples")
    peak = y[np.argmax(np.abs(y))]
    if peak >= 0:
        raise FitError("recovery fit expects a negative shift")
    th = _half_time(t, y)
    if th is None or th <= 0:
        raise FitError("trace never recovers to half of its peak")
    if t[-1] < 2 * th:
        raise FitError("trace must span at least two recovery times")

    lo, hi = sorted([peak * (1 - peak_window), peak * (1 + peak_window)])
    log = []

    def resid(p):
        return hyperbolic(t, p[0], np.exp(p[1])) - y

    def jac(p):
        tr = np.exp(p[1])
        den = 1.0 + t / tr
        d0 = 1.0 / den
        # d/dlog(t_rec) of df0 / (1 + t/t_rec) = df0 * (t/t_rec) / den^2
        d1 = p[0] * (t / tr) / den**2
        return np.column_stack([d0, d1])

    p0 = np.array([np.clip(peak, lo, hi), np.log(th)])
    res = optimize.least_squares(resid, p0, jac=jac, bounds=([lo, -np.inf], [hi, np.inf]),
                                 x_scale=[abs(peak), 1.0], xtol=1e-14, ftol=1e-14, gtol=1e-14,
                                 max_nfev=500)
    log.append({"status": int(res.status), "nfev": int(res.nfev), "cost": float(res.cost)})
    if not res.success:
        raise FitError(f"recovery fit did not converge: {res.message}", log)
    df0, t_rec = float(res.x[0]), float(np.exp(res.x[1]))
    r = a * f_q / (t_rec * abs(df0))
    rms = float(np.sqrt(np.mean(res.fun**2)))
    fit = RecoveryFit(df0, t_rec, r, rms, "hyperbolic", trace.qubit_id)
    trace.fit = fit
    return fit


def fit_exponential(trace: ShiftTrace) -> RecoveryFit:
    """Comparator: least-squares fit of delta_f0 * exp(-t / t_rec)."""
    t = trace.times - trace.times[0]
    y = trace.shifts
    peak = y[np.argmax(np.abs(y))]
    th = _half_time(t, y) or t[-1] / 2

    def resid(p):
        return p[0] * np.exp(-t / np.exp(p[1])) - y

    res = optimize.least_squares(resid, [peak, np.log(th / np.log(2))], x_scale=[abs(peak) or 1.0, 1.0],
                                 xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
    rms = float(np.sqrt(np.mean(res.fun**2)))
    return RecoveryFit(float(res.x[0]), float(np.exp(res.x[1])), float("nan"), rms, "exponential",
                       trace.qubit_id)


def recombination_from_shift(delta_f0: float, t_rec: float, qubit: QubitParams) -> float:
    c_L, _ = shift_coefficients(qubit)
    return c_L * qubit.f_q / (t_rec * abs(delta_f0))
