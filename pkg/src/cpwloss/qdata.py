"""Measured quality factors: TLS correction, CSV I/O and ensemble statistics.

Each device contributes a low-power and a high-power internal quality
factor.  Subtracting the high-power loss isolates the TLS-limited part,
which is then averaged per geometry with a Student-t confidence interval.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np
from scipy import stats

from .errors import DataError

HEADER = ("device_id", "geometry_id", "w_um", "g_um", "d_um", "phi_deg", "q_lp", "q_hp")
YIELD_THRESHOLD = 1e6
MAX_REJECT_FRACTION = 0.5
CLAMP_FACTOR = 10.0


class NonPhysicalPolicy(str, enum.Enum):
    """What ``aggregate`` does with records whose ``q_hp <= q_lp``."""

    EXCLUDE = "exclude"
    CLAMP = "clamp"


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    geometry_id: str
    w: float
    g: float
    d: float
    phi: float
    q_lp: float
    q_hp: float

    def __post_init__(self):
        if not self.device_id or not self.geometry_id:
            raise DataError("device_id and geometry_id must be non-empty")
        for name in ("q_lp", "q_hp"):
            v = getattr(self, name)
            if not (v > 0) or math.isnan(v):
                raise DataError(f"{name} must be positive (got {v})")
        if math.isinf(self.q_lp):
            raise DataError("q_lp must be finite")
        if not (self.w > 0 and self.g > 0 and self.d >= 0):
            raise DataError(f"bad dimensions w={self.w}, g={self.g}, d={self.d}")
        if not math.isfinite(self.phi):
            raise DataError(f"phi must be finite (got {self.phi})")

    @property
    def q_tls(self):
        return qtls_correct(self.q_lp, self.q_hp)


@dataclass(frozen=True)
class QtlsStat:
    """Per-geometry TLS quality factor with its 95% confidence interval."""

    geometry_id: str
    n: int
    mean_qtls: float
    ci95_lo: float
    ci95_hi: float
    yield_fraction: float = float("nan")
    n_excluded: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise DataError("a QtlsStat needs at least one device")
        tol = 1e-12 * abs(self.mean_qtls)
        if not (self.ci95_lo - tol <= self.mean_qtls <= self.ci95_hi + tol):
            raise DataError(f"mean {self.mean_qtls} outside CI [{self.ci95_lo}, {self.ci95_hi}]")

    @property
    def sigma(self):
        """Standard deviation implied by the CI under a normal approximation."""
        return (self.ci95_hi - self.ci95_lo) / (2 * 1.96)


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str
    raw: str = ""


def qtls_correct(q_lp, q_hp):
    """TLS-limited Q from low- and high-power internal Q.

    ``q_hp = inf`` means no high-power loss and returns ``q_lp``.

    Raises
    ------
    DataError
        If either value is non-positive or ``q_hp <= q_lp``, where the
        correction diverges or turns negative.
    """
    q_lp = float(q_lp)
    q_hp = float(q_hp)
    if not (q_lp > 0 and q_hp > 0):
        raise DataError(f"quality factors must be positive (q_lp={q_lp}, q_hp={q_hp})")
    if math.isinf(q_hp):
        return q_lp
    if q_hp <= q_lp:
        raise DataError(f"non-physical record: q_hp={q_hp:g} <= q_lp={q_lp:g}")
    return 1.0 / (1.0 / q_lp - 1.0 / q_hp)


def yield_fraction(records: Iterable[DeviceRecord], threshold=YIELD_THRESHOLD):
    """Fraction of devices whose low-power Q exceeds ``threshold``."""
    q = np.array([r.q_lp for r in records], dtype=float)
    if len(q) == 0:
        return float("nan")
    return float(np.mean(q > threshold))


def ci95(values):
    """Mean and two-sided 95% Student-t interval of a sample.

    A single value gives a zero-width interval.
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    m = float(np.mean(v))
    if n == 1:
        return m, m, m
    half = float(stats.t.ppf(0.975, n - 1) * np.std(v, ddof=1) / math.sqrt(n))
    return m, m - half, m + half


def aggregate(records: Iterable[DeviceRecord], geometry_id: str,
              policy: NonPhysicalPolicy = NonPhysicalPolicy.EXCLUDE) -> QtlsStat:
    """Ensemble statistics of the corrected Q of one geometry.

    Records of other geometries are ignored.  ``policy`` decides whether
    records with ``q_hp <= q_lp`` are dropped or counted as ``10 * q_lp``.
    """
    policy = NonPhysicalPolicy(policy)
    mine = sorted((r for r in records if r.geometry_id == geometry_id), key=lambda r: r.device_id)
    values = []
    excluded = 0
    for r in mine:
        try:
            values.append(r.q_tls)
        except DataError:
            if policy is NonPhysicalPolicy.CLAMP:
                values.append(CLAMP_FACTOR * r.q_lp)
            else:
                excluded += 1
                warnings.warn(f"excluding device {r.device_id}: q_hp <= q_lp", stacklevel=2)
    if not values:
        raise DataError(f"no valid records for geometry '{geometry_id}'")
    if len(values) == 1:
        warnings.warn(f"geometry '{geometry_id}' has one device; confidence interval has zero width",
                      stacklevel=2)
    # sorted input makes the float sum independent of record order
    m, lo, hi = ci95(np.sort(values))
    return QtlsStat(geometry_id=geometry_id, n=len(values), mean_qtls=m, ci95_lo=lo, ci95_hi=hi,
                    yield_fraction=yield_fraction(mine), n_excluded=excluded)


def aggregate_all(records: List[DeviceRecord], policy=NonPhysicalPolicy.EXCLUDE):
    """``aggregate`` for every geometry, in order of first appearance."""
    ids = list(dict.fromkeys(r.geometry_id for r in records))
    return {gid: aggregate(records, gid, policy) for gid in ids}


# --------------------------------------------------------------------------
# CSV


def _parse_row(row):
    if len(row) != len(HEADER):
        raise ValueError(f"expected {len(HEADER)} fields, got {len(row)}")
    dev, gid = row[0].strip(), row[1].strip()
    try:
        nums = [float(x) for x in row[2:]]
    except ValueError as exc:
        raise ValueError(f"non-numeric field ({exc})") from None
    if any(math.isnan(v) for v in nums):
        raise ValueError("NaN value")
    return DeviceRecord(dev, gid, *nums)


def parse_measurements(stream, delimiter=",", rejects: Optional[list] = None) -> List[DeviceRecord]:
    """Read device records from CSV with the exact header ``HEADER``.

    Malformed rows are skipped and reported as ``Reject`` entries, appended
    to ``rejects`` when a list is given and otherwise issued as warnings.

    Raises
    ------
    DataError
        For a missing or wrong header, or when more than half of the rows
        are rejected.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: missing header") from None
    except csv.Error as exc:
        raise DataError(f"unreadable header: {exc}") from None
    header = [h.strip().lstrip("﻿") for h in header]
    if tuple(header) != HEADER:
        raise DataError(f"unexpected header {header}; expected {','.join(HEADER)}")
    records, bad = [], []
    total = 0
    while True:
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            total += 1
            bad.append(Reject(reader.line_num, f"CSV error: {exc}"))
            continue
        if not row or all(not c.strip() for c in row):
            continue
        total += 1
        try:
            records.append(_parse_row(row))
        except (ValueError, DataError) as exc:
            bad.append(Reject(reader.line_num, str(exc), delimiter.join(row)))
    if rejects is not None:
        rejects.extend(bad)
    else:
        for r in bad:
            warnings.warn(f"line {r.line}: {r.reason}", stacklevel=2)
    if total and len(bad) > MAX_REJECT_FRACTION * total:
        raise DataError(f"{len(bad)} of {total} rows rejected (first at line {bad[0].line}: {bad[0].reason})")
    return records


def emit_measurements(records: Iterable[DeviceRecord], stream, delimiter=","):
    """Write records so that ``parse_measurements`` reproduces them exactly."""
    w = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    w.writerow(HEADER)
    for r in records:
        w.writerow([r.device_id, r.geometry_id, *(repr(float(v)) for v in (r.w, r.g, r.d, r.phi, r.q_lp, r.q_hp))])
