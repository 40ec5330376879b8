"""Unit conversions used at I/O boundaries (internal state is SI)."""
from __future__ import annotations

UM = 1e-6               # micrometre in m
CM = 1e-2               # centimetre in m
PER_CM3 = 1e6           # 1/m^3 -> 1/cm^3 divide by this
KG_M3_TO_MG_CM3 = 1.0   # 1 kg/m^3 == 1 mg/cm^3


def m_to_cm(z):
    return z / CM


def m_to_um(r):
    return r / UM


def per_m3_to_per_cm3(n):
    return n / PER_CM3
