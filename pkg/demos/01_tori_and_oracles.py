"""Polarized tori, flat metrics, and the closed-form oracles.

A principally polarized torus is C^n / (Z^n + Omega Z^n) with Omega in the
Siegel upper half space; its Ricci-flat Kahler metric in the polarization
class is the constant matrix g = (1/2) (Im Omega)^{-1}, normalized so the
fiber has unit volume.  Families Omega(s) come with two closed forms used
as oracles everywhere else: the Weil-Petersson pairing of the deformation
direction, and the flat-torus Green kernel built from theta functions.
"""

import numpy as np

from cyfam import (
    PeriodMatrix,
    flat_metric,
    get_preset,
    polarized_volume,
    theta_green_oracle,
    wp_closed_form,
)

print("== presets ==")
for name in ("elliptic", "elliptic2i", "constant", "siegel-e", "product"):
    preset = get_preset(name)
    print(f"  {name:12s} n={preset.n}  {preset.description}")

print()
print("== flat metric on the square torus (tau = i) ==")
omega = PeriodMatrix(np.array([[1j]]))
g = flat_metric(omega)
print(f"  g = {g.real.ravel()[0]:.3f} (half the inverse imaginary part)")
print(f"  polarized volume = {polarized_volume(omega):.12f} (normalized to 1)")

print()
print("== Weil-Petersson pairing along the elliptic family Omega(s) = tau + s ==")
print("  closed form: -d_s d_sbar log det Im Omega = 1 / (4 (Im tau)^2)")
for tau in (1j, 2j, 1 + 1j, 0.5 + 3j):
    family = get_preset("elliptic").family(tau)
    wp = wp_closed_form(family, 0j)
    print(f"  tau = {tau}: wp = {wp:.10f}  (oracle {1.0 / (4.0 * tau.imag**2):.10f})")

print()
print("== theta-function Green kernel on the square torus ==")
print("  G solves box G = delta - 1 with fiber mean zero; minimum at (1/2, 1/2)")
for u in ((0.5, 0.5), (0.25, 0.25), (0.1, 0.0)):
    print(f"  G{u} = {theta_green_oracle(1j, u):+.10f}")
print("  the half-period value is the lower-bound constant -c of the kernel")
