"""The two-element Windkessel forward model: closed form, RK4 check, vitals.

Run: python3 demos/02_windkessel.py
"""

# %% Vitals for a healthy adult concept vector.
from lps.windkessel import (
    ConceptVector, closed_form_waveform, rk4_vitals, simulate_vitals, transient_bound,
)

z = ConceptVector(R=1000.0, C=0.0015, Ts=0.3, Td=0.6, CO=6.0)
v = simulate_vitals(z)
print(f"HR {float(v.hr):.1f} bpm, BP {float(v.bp_sys):.1f}/{float(v.bp_dias):.1f} mmHg")

# %% The same vitals from a fine RK4 integration of the ODE.
ref = rk4_vitals(z, dt=1e-4)
print(f"RK4 BP {float(ref.bp_sys):.4f}/{float(ref.bp_dias):.4f} mmHg "
      f"(closed form differs by {abs(float(v.bp_sys - ref.bp_sys)):.1e})")

# %% How the starting pressure leaks into the averaged vitals.
for tau_c in (0.0002, 0.0015):
    zz = ConceptVector(1000.0, tau_c, 0.3, 0.6, 6.0)
    print(f"tau = {1000 * tau_c:.1f} s: a 20 mmHg change in P0 moves the vitals by at most "
          f"{float(transient_bound(zz, 20.0)):.4f} mmHg")

# %% Lower output and higher resistance, as in the high-risk group.
for label, zz in (("low risk", z), ("high risk", ConceptVector(1400.0, 0.001, 0.25, 0.45, 3.8))):
    vv = simulate_vitals(zz)
    print(f"{label:9s}: HR {float(vv.hr):5.1f}, BP {float(vv.bp_sys):5.1f}/{float(vv.bp_dias):5.1f}")

# %% A few cycles of the pressure waveform.
t, p = closed_form_waveform(z, n_cycles=3, points_per_phase=6)
for ti, pi in zip(t[::4], p[::4]):
    print(f"t = {ti:5.2f} s  P = {pi:6.2f} mmHg  " + "#" * int((pi - 60) / 2))
