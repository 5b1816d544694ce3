"""Excitation (P1) and relaxation (T1) burst curves from the cooling model.

The excitation channel closes first: once QPs cool below delta_Delta - h f_q they
can no longer excite the qubit, but can still relax it until they reach the gap.
Run: python3 demos/burst_curves.py
"""
import numpy as np

from qpburst import qp_spectral as qs
from qpburst.device_model import default_profile, normal_phonon_time

prof = default_profile()
qp = prof.qubits[0]
tau = normal_phonon_time(prof.material, qp.delta_L)
t = np.geomspace(1e-9, 1e-3, 25)
p1, t1 = qs.burst_error_curves(1e-6, tau, 1.0, t, 1e-6, qp)     # per qubit, x_qp = 1e-6
print(f"tau_phN = {tau * 1e9:.1f} ns")
print("   t (s)     P1 excess   T1 excess")
for ti, a, b in zip(t, p1, t1):
    print(f"{ti:9.2e}   {a:9.3e}   {b:9.3e}")
ratio = qs.threshold_crossing(t, t1) / qs.threshold_crossing(t, p1)
print(f"T1/P1 duration ratio {ratio:.1f}, closed form {qs.duration_ratio_formula(qp.d_delta, qp.f_q):.1f}")
