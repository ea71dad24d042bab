"""Unit conventions.

Frequencies are MHz, times are microseconds, fields are Gauss. A frequency
``f`` and a duration ``t`` give a phase ``2*pi*f*t`` in radians; the 2*pi is
applied only where propagators are built.
"""

import numpy as np

TWO_PI = 2.0 * np.pi

MHZ_PER_KHZ = 1e-3
KHZ_PER_MHZ = 1e3
US_PER_NS = 1e-3
GS_PER_TESLA = 1e4

# gyromagnetic defaults
GAMMA_E_MHZ_PER_GS = 0.28          # 2.8 GHz/T
GAMMA_N_KHZ_PER_GS = 0.85          # 8.5 MHz/T

CONVERSIONS = {
    "MHz/kHz": MHZ_PER_KHZ,
    "us/ns": US_PER_NS,
    "Gs/T": GS_PER_TESLA,
}


def mhz_per_tesla_to_mhz_per_gs(value):
    return value / GS_PER_TESLA


def khz_to_mhz(value):
    return value * MHZ_PER_KHZ


def mhz_to_khz(value):
    return value * KHZ_PER_MHZ
