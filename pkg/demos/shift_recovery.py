"""Hyperbolic frequency recovery after an impact, and what an exponential fit misses.

Run: python3 demos/shift_recovery.py
"""
import numpy as np

from qpburst import qp_dynamics as qd
from qpburst.device_model import default_profile
from qpburst.junction_response import shift_coefficients

prof = default_profile()
q = prof.qubits[30]
a = shift_coefficients(q)[0]

model = qd.RecombinationModel(1 / 105e-9, 2.7e6 / (a * q.f_q))
times = np.arange(0, 2.5e-3, 49e-6)
trace = qd.shift_trajectory(model, q, times)

rng = np.random.default_rng(0)
noisy = qd.ShiftTrace(times, trace.shifts + rng.normal(0, 50e3, times.size))

hyp = qd.fit_recovery(noisy, a, q.f_q)
exp = qd.fit_exponential(noisy)
print(f"x_qp(0) = {model.x0:.2e}, t_rec = {qd.recovery_time(model) * 1e6:.0f} us")
print(f"hyperbolic fit: df0 = {hyp.delta_f0 / 1e6:.2f} MHz, 1/r = {1e9 / hyp.r:.0f} ns, rms {hyp.residual / 1e3:.0f} kHz")
print(f"exponential fit rms {exp.residual / 1e3:.0f} kHz")
print()
print(" t (us)   shift (MHz)   noisy")
for t, s, n in list(zip(times, trace.shifts, noisy.shifts))[::5]:
    print(f"{t * 1e6:7.0f}   {s / 1e6:9.3f}   {n / 1e6:7.3f}")
