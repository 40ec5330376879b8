"""Named test cases for the decelerating-nozzle problem."""
from __future__ import annotations

from dataclasses import replace

from .errors import ConfigError
from .physics import (ES_NONLINEAR, EV_BIMODAL, EV_MONOMODAL, M0_INJECTED, RHO_LIQUID, V0_GAS,
                      Z0_BIMODAL, Z0_MONOMODAL, CoalescenceModel, DragLaw, EvaporationLaw, GasField,
                      SprayCase, build_initial_distribution)

DISTRIBUTIONS = ("mono", "bi")
EVAPORATION = ("noevap", "lin", "nonlin")

Z_END = {"mono": 0.30, "bi": 0.16}

#: parcel injection rates (parcels/s) at full scale
FULL_SCALE_RATES = {
    "mono_lin_nocoal": 100_000,
    "mono_nonlin_nocoal": 1_000_000,
    "bi_nonlin_nocoal": 200_000,
    "mono_lin_coal": 200_000,
    "bi_lin_coal": 560_000,
    "mono_nonlin_coal": 1_300_000,
    "mono_noevap_coal": 300_000,
}

#: default multi-fluid section layouts: (N, r_max in m, spacing)
SECTION_DEFAULTS = {
    "mono_lin_nocoal": (10, 35e-6, "uniform_radius"),
    "mono_nonlin_nocoal": (12, 35e-6, "optimal12"),
    "mono_nonlin_coal": (15, 50e-6, "uniform_radius"),
    "mono_lin_coal": (100, 150e-6, "uniform_radius"),
    "mono_noevap_coal": (500, 200e-6, "uniform_radius"),
    "mono_noevap_nocoal": (10, 35e-6, "uniform_radius"),
    "bi_nonlin_nocoal": (30, 35e-6, "uniform_radius"),
    "bi_nonlin_coal": (30, 50e-6, "uniform_radius"),
    "bi_lin_coal": (500, 200e-6, "uniform_radius"),
    "bi_lin_nocoal": (30, 35e-6, "uniform_radius"),
    "bi_noevap_nocoal": (30, 35e-6, "uniform_radius"),
    "bi_noevap_coal": (500, 200e-6, "uniform_radius"),
}


def parse_case_id(case_id: str) -> tuple[str, str, bool]:
    parts = case_id.split("_")
    if len(parts) != 3 or parts[0] not in DISTRIBUTIONS or parts[1] not in EVAPORATION \
            or parts[2] not in ("coal", "nocoal"):
        raise ConfigError(f"unknown case {case_id!r}: expected <mono|bi>_<noevap|lin|nonlin>_<coal|nocoal>")
    return parts[0], parts[1], parts[2] == "coal"


def build_case(case_id: str, z_end: float | None = None, drag_alpha: float | None = None) -> SprayCase:
    """Assemble the :class:`SprayCase` for an identifier such as ``mono_lin_coal``."""
    dist, evap_kind, coal = parse_case_id(case_id)
    mono = dist == "mono"
    gas = GasField(Z0_MONOMODAL if mono else Z0_BIMODAL, V0_GAS)
    if evap_kind == "lin":
        evap = EvaporationLaw.linear(EV_MONOMODAL if mono else EV_BIMODAL)
    elif evap_kind == "nonlin":
        evap = EvaporationLaw.nonlinear(ES_NONLINEAR)
    else:
        evap = EvaporationLaw.none()
    init = build_initial_distribution("monomodal" if mono else "bimodal", M0_INJECTED, RHO_LIQUID)
    drag = DragLaw() if drag_alpha is None else DragLaw(drag_alpha)
    return SprayCase(case_id, gas, evap, drag, CoalescenceModel(1.0 if coal else 0.0), init,
                     Z_END[dist] if z_end is None else z_end, RHO_LIQUID)


def with_drag(case: SprayCase, alpha: float) -> SprayCase:
    return replace(case, drag=DragLaw(alpha))
