"""Quasiparticle-loaded Josephson junction admittance and qubit frequency shift.

All energies are in joules, angular frequencies in rad/s and admittances in
siemens.  Occupations ``n(eps)`` may be given as an ``EnergyDistribution``
(from :mod:`qpburst.qp_spectral`) or any callable of energy; callables may
carry a ``support`` attribute ``(eps_min, eps_max)`` that bounds the
integration range.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from .device_model import E_CHARGE, H, HBAR, QubitParams


class NumericError(RuntimeError):
    """Quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class QpDensities:
    x_L: float
    x_H: float = 0.0

    def __post_init__(self):
        if self.x_L < 0 or self.x_H < 0:
            raise ValueError("densities must be non-negative")
        if max(self.x_L, self.x_H) > 1e-2:
            warnings.warn("QP density above 1e-2: first-order theory is unreliable", stacklevel=2)


@dataclass(frozen=True)
class AdmittanceParts:
    omega: float
    im_inductive: float
    im_dynamic: float
    re_dissipative: float = 0.0
    capacitance: float | None = None
    junction: int = 1


# ---------------------------------------------------------------------------
# closed forms


def coefficient_a(delta: float, d_delta: float, f_q: float) -> float:
    """Proportionality coefficient between relative shift and density.

    ``delta`` is the mean gap, ``d_delta`` the gap difference (both J).
    """
    hf = H * f_q
    if d_delta <= hf:
        raise ValueError("closed form requires d_delta > h*f_q")
    return 0.25 + (math.sqrt(2 * delta / (d_delta - hf)) + math.sqrt(2 * delta / (d_delta + hf))) / (4 * math.pi)


def josephson_inductance(g_T: float, delta: float) -> float:
    """L_J from the tunnel conductance (small gap-difference form)."""
    return HBAR / (math.pi * g_T * delta)


def tunnel_conductance(L_J: float, delta: float) -> float:
    return HBAR / (math.pi * L_J * delta)


def im_y_inductive(omega: float, phi: float, qp: QpDensities, L_J: float, delta: float,
                   d_delta: float) -> float:
    """Reactive admittance from the QP reduction of the supercurrent."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    coef_L = 0.5 + math.sqrt(2 * delta / d_delta) / math.pi
    return (1.0 / (omega * L_J)) * math.cos(phi) * (coef_L * qp.x_L + 0.5 * qp.x_H)


def im_y_dynamic_cold(omega: float, phi: float, x_L: float, L_J: float, delta: float,
                      d_delta: float) -> float:
    """Dynamic reactive admittance for QPs cold compared to d_delta - hbar*omega."""
    hw = HBAR * abs(omega)
    if hw >= d_delta:
        raise ValueError("closed form requires hbar*omega < d_delta")
    bracket = (math.sqrt(2 * delta / (d_delta - hw)) + math.sqrt(2 * delta / (d_delta + hw))
               - 2 * math.sqrt(2 * delta / d_delta))
    return (1.0 / (omega * L_J)) * 0.5 * (1 + math.cos(phi)) * x_L / (2 * math.pi) * bracket


def im_y_dynamic_capacitive(omega: float, phi: float, x_L: float, L_J: float, delta: float,
                            d_delta: float) -> float:
    """Low-frequency limit of :func:`im_y_dynamic_cold` (capacitance renormalization)."""
    w_gap = d_delta / HBAR
    return (3 * omega / (4 * L_J * w_gap**2)) * 0.5 * (1 + math.cos(phi)) * x_L / (2 * math.pi) \
        * math.sqrt(2 * delta / d_delta)


def shift_coefficients(qubit: QubitParams) -> tuple[float, float]:
    """(c_L, c_H) such that delta_f / f_q = -(c_L*x_L + c_H*x_H) at the bias of ``qubit``."""
    hw = H * qubit.f_q
    dd, dm = qubit.d_delta, qubit.delta
    inv_c = (qubit.f_q_zero_flux / qubit.f_q) ** 2
    r_sum = math.sqrt(2 * dm / (dd - hw)) + math.sqrt(2 * dm / (dd + hw))
    r0 = math.sqrt(2 * dm / dd)
    c_L = 0.25 + (inv_c + 1) / (8 * math.pi) * r_sum - (inv_c - 1) / (4 * math.pi) * r0
    return c_L, 0.25


def frequency_shift(qp_densities: QpDensities, qubit: QubitParams) -> float:
    """Qubit frequency shift (Hz) for given low/high-gap QP densities."""
    c_L, c_H = shift_coefficients(qubit)
    return -(c_L * qp_densities.x_L + c_H * qp_densities.x_H) * qubit.f_q


def shift_from_admittances(im_y: list[float], capacitance: float) -> float:
    """Angular-frequency shift from the summed reactive QP admittance of the junctions."""
    return -sum(im_y) / (2 * capacitance)


# ---------------------------------------------------------------------------
# general distributions


def _occupation(dist) -> tuple[Callable, tuple[float, float] | None, np.ndarray]:
    """Return (n(eps), support or None, breakpoints) for a distribution-like object."""
    if dist is None:
        return (lambda e: 0.0 * np.asarray(e, dtype=float)), (0.0, 0.0), np.array([])
    if hasattr(dist, "occupation_at"):
        bps = np.asarray(getattr(dist, "edges", None) if getattr(dist, "edges", None) is not None else dist.grid)
        return dist.occupation_at, (float(bps[0]), float(bps[-1])), bps
    support = getattr(dist, "support", None)
    bps = np.asarray(getattr(dist, "breakpoints", []), dtype=float)
    return dist, support, bps


def _quad(fn, a, b, points=None, **kw):
    if b <= a:
        return 0.0
    pts = None
    if points is not None and len(points):
        pts = [p for p in points if a < p < b]
        pts = sorted(set(pts))[:40] or None
    val, err = integrate.quad(fn, a, b, points=pts, limit=400, epsabs=kw.get("epsabs", 0.0),
                              epsrel=kw.get("epsrel", 1e-10))
    return val


def supercurrent(phi: float, dist, qp: QubitParams, g_T: float) -> float:
    """Supercurrent through a junction with unequal gaps at phase ``phi``.

    Uses eps^2 = dL^2 cos^2(t) + dH^2 sin^2(t), under which the measure
    d eps / sqrt((dH^2 - eps^2)(eps^2 - dL^2)) becomes dt / eps.
    """
    dL, dH = qp.delta_L, qp.delta_H
    n, _, _ = _occupation(dist)

    def eps(t):
        return math.sqrt(dL**2 * math.cos(t) ** 2 + dH**2 * math.sin(t) ** 2)

    def integrand(t):
        e = eps(t)
        return (1.0 - 2.0 * float(n(e))) / e

    val, err = integrate.quad(integrand, 0.0, math.pi / 2, limit=200, epsabs=1e-14, epsrel=1e-12)
    if not np.isfinite(val) or err > 1e-6 * max(abs(val), 1e-30):
        raise NumericError(f"supercurrent quadrature did not converge (value={val}, err={err})")
    return (g_T / E_CHARGE) * dL * dH * math.sin(phi) * val


def _bracket_term(n, lo_gap, c, support, bps, eps_off):
    """int_0^c n(lo_gap + E) dE / sqrt(E (c - E)) via E = c sin^2(t)."""
    if c <= 0:
        return 0.0
    tmax = math.pi / 2
    if support is not None:
        e_hi = support[1] - lo_gap
        if e_hi <= 0:
            return 0.0
        if e_hi < c:
            tmax = math.asin(math.sqrt(e_hi / c))
    pts = []
    for b in bps:
        e = b - lo_gap
        if 0 < e < c:
            pts.append(math.asin(math.sqrt(e / c)))
    f = lambda t: 2.0 * float(n(lo_gap + c * math.sin(t) ** 2))
    return _quad(f, 0.0, tmax, points=pts, epsabs=1e-14)


def im_y_dynamic_general(omega: float, phi: float, dist, g_T: float, delta_L: float,
                         delta_H: float, return_flag: bool = False):
    """Dynamic reactive admittance for an arbitrary low-energy occupation.

    Returns the value (and, with ``return_flag``, whether the distribution has
    weight above the validity window E >~ d_delta - hbar*omega).
    """
    n, support, bps = _occupation(dist)
    hw = HBAR * omega
    pref = g_T * math.sqrt(delta_L * delta_H) / hw * 0.5 * (1 + math.cos(phi))
    total = 0.0
    for lo, dd in ((delta_L, delta_H - delta_L), (delta_H, delta_L - delta_H)):
        # [c_minus, c_plus, c_zero] with weights (1, 1, -2)
        for c, w in ((dd - hw, 1.0), (dd + hw, 1.0), (dd, -2.0)):
            total += w * _bracket_term(n, lo, c, support, bps, 0.0)
    value = pref * total
    if return_flag:
        flag = False
        if support is not None:
            flag = support[1] - delta_L > 0.5 * (delta_H - delta_L - hw)
        return value, flag
    return value


def matrix_element(eps_L, eps_H, delta_L, delta_H, phi):
    r = delta_L * delta_H / (eps_L * eps_H)
    c = math.cos(phi)
    return (1 + r) * 0.5 * (1 + c) + (1 - r) * 0.5 * (1 - c)


def _dos(eps, gap):
    return eps / math.sqrt((eps - gap) * (eps + gap))


def re_y_dissipative(omega: float, phi: float, dist, g_T: float, delta_L: float,
                     delta_H: float) -> float:
    """Dissipative admittance of a gap-engineered junction, any sign of omega."""
    n, support, bps = _occupation(dist)
    if support is None:
        raise ValueError("distribution needs a finite support for the dissipative integral")
    if omega == 0:
        raise ValueError("omega must be non-zero")
    hw = HBAR * omega
    total = 0.0
    for ga, gb in ((delta_L, delta_H), (delta_L, delta_H)[::-1]):
        eps_min = max(ga, gb - hw)
        # n(eps) - n(eps + hw) vanishes unless eps or eps + hw lies in the support
        eps_max = max(support[1], support[1] - hw)
        if eps_max <= eps_min:
            continue
        # eps = eps_min + s^2 removes the inverse square-root edge
        smax = math.sqrt(eps_max - eps_min)

        def f(s, ga=ga, gb=gb, eps_min=eps_min):
            e1 = eps_min + s * s
            e2 = e1 + hw
            if e1 <= ga or e2 <= gb:
                return 0.0
            eL, eH = (e1, e2) if ga == delta_L else (e2, e1)
            m = matrix_element(eL, eH, delta_L, delta_H, phi)
            return 2 * s * _dos(e1, ga) * _dos(e2, gb) * m * (float(n(e1)) - float(n(e2)))

        pts = []
        for b in list(bps) + [support[0], support[1], support[0] - hw, support[1] - hw]:
            if b > eps_min:
                pts.append(math.sqrt(b - eps_min))
        total += _quad(f, 0.0, smax, points=pts, epsabs=1e-16)
    return g_T / hw * total


def im_y_dynamic_kk(omega: float, phi: float, dist, g_T: float, delta_L: float, delta_H: float,
                    u_max_factor: float = 40.0, window: float | None = None,
                    method: str = "exclusion") -> float:
    """Dynamic reactive admittance by a Kramers-Kronig transform of Re Y.

    Uses the evenness of Re Y to fold the transform onto u > 0:
    Im Y(w) = (1/pi) int_0^inf Re Y(u) [1/(u - w) - 1/(u + w)] du.
    ``method='exclusion'`` removes a symmetric window around the pole and
    extrapolates in the window size; ``method='cauchy'`` uses QUADPACK's
    Cauchy-weight rule.  Validation path only: it is slow.
    """
    n, support, bps = _occupation(dist)
    if support is None:
        raise ValueError("distribution needs a finite support")
    dd = delta_H - delta_L
    # thresholds where Re Y switches on, in angular frequency
    thresholds = sorted({max(0.0, (delta_H - support[1]) / HBAR), max(0.0, (delta_H - support[0]) / HBAR),
                         dd / HBAR})
    u_max = u_max_factor * max(dd, support[1] - delta_L) / HBAR
    u_on = thresholds[0]

    def re(u):
        if u <= 0.0 or u < u_on:
            return 0.0
        return re_y_dissipative(u, phi, dist, g_T, delta_L, delta_H)

    breaks = [t for t in thresholds if 0 < t < u_max]

    def piecewise(fn, a, b):
        edges = [a] + [t for t in breaks if a < t < b] + [b]
        return sum(_quad(fn, lo, hi, epsabs=0.0, epsrel=1e-8) for lo, hi in zip(edges[:-1], edges[1:]))

    tail_fn = lambda u: re(u) * 2 * omega / (u * u - omega * omega)
    if method == "cauchy":
        # Cauchy-weight rule on a pole window free of thresholds, plain quadrature elsewhere
        lo = omega / 2
        hi = min([1.5 * omega] + [t for t in breaks if t > omega])
        lo = max([lo] + [t for t in breaks if t < omega])
        val, err = integrate.quad(lambda u: re(u) * 2 * omega / (u + omega), lo, hi, weight="cauchy",
                                  wvar=omega, limit=400, epsrel=1e-10)
        core = val + piecewise(tail_fn, 0.0, lo) + piecewise(tail_fn, hi, u_max)
    elif method == "exclusion":
        delta = window if window is not None else 1e-3 * omega

        def excluded(d):
            return piecewise(tail_fn, 0.0, omega - d) + piecewise(tail_fn, omega + d, u_max)

        i1, i2 = excluded(delta), excluded(delta / 2)
        core = 2 * i2 - i1
        if abs(i2 - i1) > 1e-3 * max(abs(core), 1e-300) and abs(i2 - i1) > 1e-12 * g_T:
            raise NumericError("principal-value window too coarse: extrapolation step "
                               f"{abs(i2 - i1):.3e} vs value {core:.3e}")
    else:
        raise ValueError(f"unknown method {method!r}")
    # tail beyond u_max: Re Y ~ A/u, kernel ~ 2w/u^2
    a_tail = re(u_max) * u_max
    tail = a_tail * omega / u_max**2
    return (core + tail) / math.pi


def ambegaokar_baratoff_current(g_T: float, delta: float) -> float:
    """Critical current (pi g_T / 2e) * delta."""
    return math.pi * g_T * delta / (2 * E_CHARGE)


def supercurrent_closed_form(phi: float, qp: QubitParams, g_T: float) -> float:
    """Zero-occupation supercurrent via a complete elliptic integral (test oracle)."""
    dL, dH = qp.delta_L, qp.delta_H
    m = 1.0 - (dL / dH) ** 2
    return (g_T / E_CHARGE) * dL * dH * math.sin(phi) * special.ellipk(m) / dH
