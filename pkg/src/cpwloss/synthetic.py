"""Synthetic device ensembles with known ground truth, for tests and demos."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np
from scipy import stats

from .lossfit import LossFactorVector
from .qdata import DeviceRecord


def true_qtls(p, x: LossFactorVector):
    return 1.0 / float(p.loss_row() @ x.as_array())


def synthetic_measurements(participations: Mapping, x: LossFactorVector, n_devices=12, rel_scatter=0.15,
                           q_hp=2.0e7, seed=0):
    """Device records whose TLS-limited Q follows ``1 / (P @ x)``.

    Each device's Q_TLS is drawn from a normal distribution of relative
    width ``rel_scatter`` about the model value (redrawn if not positive);
    the low-power Q then folds in a fixed high-power loss ``1/q_hp``.
    Geometry ids and dimensions come from the participation vectors.
    """
    rng = np.random.default_rng(seed)
    out = []
    for gid, p in participations.items():
        q0 = true_qtls(p, x)
        geom = p.geometry
        for k in range(n_devices):
            q = -1.0
            while q <= 0:
                q = q0 * (1 + rel_scatter * rng.standard_normal())
            q_lp = 1.0 / (1.0 / q + 1.0 / q_hp)
            out.append(DeviceRecord(f"{gid}-{k:02d}", gid, geom.w, geom.g, geom.d, geom.phi, q_lp, q_hp))
    return out


def lognormal_q(n, mean=1.6e6, frac_above=0.87, threshold=1e6, seed=0):
    """Lognormal Q sample with a given mean and exceedance fraction.

    With ``ln Q ~ N(mu, s)``, the mean fixes ``mu + s^2/2`` and the
    exceedance fixes ``(mu - ln threshold) / s``; the two give a quadratic
    in ``s``.
    """
    z = stats.norm.ppf(frac_above)
    a = math.log(mean / threshold)
    s = -z + math.sqrt(z * z + 2 * a)
    mu = math.log(mean) - 0.5 * s * s
    return np.exp(mu + s * np.random.default_rng(seed).standard_normal(n))
