"""Closed-form coplanar waveguide capacitance by conformal mapping.

Used as an independent reference for the finite-element solver, so it
deliberately avoids scipy and evaluates the complete elliptic integral with
the arithmetic-geometric mean.
"""

import math

from scipy.constants import epsilon_0


def agm(a, b, rtol=1e-15):
    """Arithmetic-geometric mean of two positive numbers."""
    while abs(a - b) > rtol * abs(a):
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return a


def ellipk_modulus(k):
    """Complete elliptic integral of the first kind, K(k), for modulus ``k``.

    Note the argument is the modulus, not the parameter ``m = k**2`` used by
    ``scipy.special.ellipk``.
    """
    if not 0.0 <= k < 1.0:
        raise ValueError(f"modulus must lie in [0, 1), got {k}")
    return math.pi / (2.0 * agm(1.0, math.sqrt(1.0 - k * k)))


def cpw_capacitance(w, g, eps_r):
    """Per-unit-length capacitance (F/m) of an ideal CPW.

    Zero-thickness conductors, infinite ground planes and two infinite
    half-spaces (substrate of relative permittivity ``eps_r`` below, vacuum
    above). ``w`` and ``g`` only enter through their ratio.
    """
    k = w / (w + 2.0 * g)
    kp = math.sqrt(1.0 - k * k)
    return 2.0 * epsilon_0 * (1.0 + eps_r) * ellipk_modulus(k) / ellipk_modulus(kp)


def cpw_substrate_filling(eps_r):
    """Fraction of the ideal CPW's field energy stored in the substrate.

    Each half-space carries half of the vacuum-normalized field, so the
    substrate share is ``eps_r / (1 + eps_r)``.
    """
    return eps_r / (1.0 + eps_r)
