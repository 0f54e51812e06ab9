"""Loss-factor extraction from participation ratios and measured Q_TLS.

The model is linear: ``1/Q_TLS = P @ x`` with one row of participation
ratios per geometry and one non-negative loss factor per lossy region.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from decimal import ROUND_HALF_UP, Decimal
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import DataError, PreconditionError, SolverError
from .geometry import CpwGeometry, InterfaceLayerSpec, interpolate_sidewall_angle
from .qdata import QtlsStat

log = logging.getLogger(__name__)

COLUMNS = ("MS", "SA", "MA", "Si")
X_NAMES = ("x_ms", "x_sa", "x_ma", "x_si")
KKT_TOL = 1e-12
# Rejected Monte Carlo draws may use at most this many attempts per iteration.
RESAMPLE_CAP = 10


# --------------------------------------------------------------------------
# participation matrix


@dataclass
class ParticipationMatrix:
    """Rows of ``[P_MS,perp, P_SA,par, P_MA,perp, P_Si]`` keyed by geometry id."""

    rows: list
    values: np.ndarray
    columns: tuple = COLUMNS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(COLUMNS))
        if len(self.rows) != len(self.values):
            raise PreconditionError("row labels and values differ in length")
        if len(set(self.rows)) != len(self.rows):
            raise PreconditionError("duplicate geometry ids")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise PreconditionError("participation entries must be finite and non-negative")

    @property
    def shape(self):
        return self.values.shape

    @property
    def singular_values(self):
        return np.linalg.svd(self.values, compute_uv=False)

    @property
    def condition_number(self):
        """2-norm condition number; ``inf`` when the matrix has rank below 4."""
        s = self.singular_values
        if len(s) < len(COLUMNS) or s[-1] <= s[0] * len(COLUMNS) * np.finfo(float).eps:
            return math.inf
        return float(s[0] / s[-1])

    def collinearity(self):
        """Pearson correlation between every pair of columns (NaN if undefined)."""
        out = {}
        v = self.values
        for i in range(len(COLUMNS)):
            for j in range(i + 1, len(COLUMNS)):
                a, b = v[:, i], v[:, j]
                if len(a) < 2 or np.std(a) == 0 or np.std(b) == 0:
                    r = math.nan
                else:
                    r = float(np.corrcoef(a, b)[0, 1])
                out[f"{COLUMNS[i]}/{COLUMNS[j]}"] = r
        return out

    def subset(self, ids):
        idx = [self.rows.index(i) for i in ids]
        return ParticipationMatrix(list(ids), self.values[idx])


def assemble(participations) -> ParticipationMatrix:
    """Stack participation vectors into the loss-model matrix.

    ``participations`` maps geometry id to ``ParticipationVector`` (or is a
    sequence of ``(id, vector)`` pairs).  Only the dominant orientation of
    each interface enters: MS and MA normal, SA tangential.
    """
    items = list(participations.items()) if isinstance(participations, Mapping) else list(participations)
    if not items:
        raise PreconditionError("no participation vectors given")
    rows, vals = [], []
    for gid, p in items:
        comps = [getattr(p, c, None) for c in ("p_ms_perp", "p_sa_par", "p_ma_perp", "p_si")]
        if any(c is None or not np.isfinite(c) for c in comps):
            raise PreconditionError(f"geometry '{gid}' lacks a participation component")
        rows.append(gid)
        vals.append(comps)
    return ParticipationMatrix(rows, np.array(vals))


# --------------------------------------------------------------------------
# loss factors


@dataclass(frozen=True)
class LossFactorVector:
    x_ms: float
    x_sa: float
    x_ma: float
    x_si: float

    def __post_init__(self):
        for n in X_NAMES:
            v = getattr(self, n)
            if not (v >= 0) or not math.isfinite(v):
                raise PreconditionError(f"{n}={v} must be finite and non-negative")

    def as_array(self):
        return np.array([self.x_ms, self.x_sa, self.x_ma, self.x_si])

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(*(float(v) for v in a))


def _lawson_hanson(A, b, max_iter=None):
    """Active-set NNLS on a problem whose columns are already scaled."""
    m, n = A.shape
    max_iter = max_iter or 3 * n + 10
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    tol = 10 * np.finfo(float).eps * max(m, n) * max(np.abs(A).sum(axis=0).max(), 1.0)
    w = A.T @ (b - A @ x)
    it = 0
    while np.any(~passive) and np.max(np.where(passive, -np.inf, w)) > tol:
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            it += 1
            if it > max_iter * n:
                raise SolverError("NNLS active-set iteration did not terminate")
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                x = z
                break
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
        w = A.T @ (b - A @ x)
    return x


def kkt_residuals(A, b, x):
    """Gradient of ``0.5*|A x - b|^2`` at ``x`` after scaling columns and ``b`` to unit norm.

    At a non-negative least-squares optimum the entries are ~0 where
    ``x > 0`` and non-negative where ``x == 0``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.linalg.norm(A, axis=0)
    c[c == 0] = 1.0
    nb = np.linalg.norm(b) or 1.0
    As = A / c
    xs = np.asarray(x) * c / nb
    return As.T @ (As @ xs - b / nb)


def nnls(A, b):
    """Non-negative least squares ``min |A x - b|`` for any column count.

    Columns are scaled to unit norm before the active-set iteration, which
    leaves the minimiser unchanged up to the inverse scaling and keeps tiny
    columns on the same footing as large ones.

    Raises
    ------
    SolverError
        If the result fails the KKT check.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    c = np.linalg.norm(A, axis=0)
    c[c == 0] = 1.0
    nb = np.linalg.norm(b) or 1.0
    x = _lawson_hanson(A / c, b / nb) / c * nb
    g = kkt_residuals(A, b, x)
    active = x == 0
    if np.any(g[active] < -KKT_TOL) or np.any(np.abs(g[~active]) > 1e-8):
        raise SolverError(f"NNLS result fails KKT check (gradient {g})")
    return x


def nnls_solve(P, inv_q) -> LossFactorVector:
    """Loss factors for ``P @ x ~ inv_q`` with ``x >= 0``.

    Raises
    ------
    PreconditionError
        On a shape mismatch or non-positive ``inv_q``.
    SolverError
        If the result fails the KKT check.
    """
    A = P.values if isinstance(P, ParticipationMatrix) else np.asarray(P, dtype=float)
    b = np.asarray(inv_q, dtype=float).ravel()
    if A.ndim != 2 or A.shape[0] != len(b):
        raise PreconditionError(f"P has {A.shape[0] if A.ndim == 2 else '?'} rows but inv_q has {len(b)} entries")
    if A.shape[1] != len(COLUMNS):
        raise PreconditionError(f"P must have {len(COLUMNS)} columns")
    if np.any(b <= 0) or not np.all(np.isfinite(b)):
        raise PreconditionError("inv_q entries must be positive and finite")
    return LossFactorVector.from_array(nnls(A, b))


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass
class LossFactorDistribution:
    """Monte Carlo ensemble of loss-factor vectors (one row per sample)."""

    samples: np.ndarray
    seed: Optional[int] = None
    layer_spec: InterfaceLayerSpec = InterfaceLayerSpec()
    attempts: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).reshape(-1, len(X_NAMES))
        if len(self.samples) == 0:
            raise PreconditionError("distribution needs at least one sample")
        if np.any(self.samples < 0) or not np.all(np.isfinite(self.samples)):
            raise PreconditionError("samples must be finite and non-negative")

    @classmethod
    def point(cls, x: LossFactorVector, layer_spec=InterfaceLayerSpec()):
        return cls(x.as_array()[None, :], seed=None, layer_spec=layer_spec, attempts=1)

    @property
    def iterations(self):
        return len(self.samples)

    def _mean_array(self):
        # clipping only removes rounding that could push the mean outside the samples
        return np.clip(self.samples.mean(axis=0), self.samples.min(axis=0), self.samples.max(axis=0))

    @property
    def mean(self) -> LossFactorVector:
        return LossFactorVector.from_array(self._mean_array())

    @property
    def std(self):
        return self.samples.std(axis=0, ddof=1) if self.iterations > 1 else np.zeros(len(X_NAMES))

    @property
    def range95(self):
        """Central 95% interval per component, widened if needed to hold the mean."""
        lo, hi = np.percentile(self.samples, [2.5, 97.5], axis=0)
        m = self._mean_array()
        return {n: (float(min(a, c)), float(max(b, c))) for n, a, b, c in zip(X_NAMES, lo, hi, m)}

    @property
    def support(self):
        return {n: (float(a), float(b)) for n, a, b in
                zip(X_NAMES, self.samples.min(axis=0), self.samples.max(axis=0))}

    def summary(self):
        """Flat dictionary of means, spreads and ranges."""
        out = {"iterations": self.iterations, "seed": self.seed, "attempts": self.attempts}
        r95, sup = self.range95, self.support
        for i, n in enumerate(X_NAMES):
            out[f"{n}_mean"] = float(self._mean_array()[i])
            out[f"{n}_std"] = float(self.std[i])
            out[f"{n}_lo95"], out[f"{n}_hi95"] = r95[n]
            out[f"{n}_min"], out[f"{n}_max"] = sup[n]
        return out

    def write_csv(self, stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(X_NAMES)
        for row in self.samples:
            w.writerow([repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, stream, layer_spec=InterfaceLayerSpec()):
        """Parse a sample table; errors name the offending line."""
        if isinstance(stream, str):
            stream = io.StringIO(stream)
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != X_NAMES:
            raise DataError(f"line 1: expected header {','.join(X_NAMES)}")
        rows = []
        for row in reader:
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
                if len(vals) != len(X_NAMES):
                    raise ValueError(f"expected {len(X_NAMES)} values")
                LossFactorVector(*vals)
            except (ValueError, PreconditionError) as exc:
                raise DataError(f"line {reader.line_num}: {exc}") from None
            rows.append(vals)
        if not rows:
            raise DataError("distribution file has no samples")
        return cls(np.array(rows), layer_spec=layer_spec)


def _draw_iteration(A, mean, sigma, seed, i, cap):
    """One Monte Carlo sample; its RNG stream depends only on (seed, i)."""
    rng = np.random.default_rng([seed, i])
    for attempt in range(1, cap + 1):
        q = mean + sigma * rng.standard_normal(len(mean))
        if np.any(q <= 0):
            continue
        try:
            return nnls_solve(A, 1.0 / q).as_array(), attempt
        except SolverError:
            continue
    return None, cap


def _draw_block(args):
    A, mean, sigma, seed, idx, cap = args
    out = np.empty((len(idx), A.shape[1]))
    used = 0
    for k, i in enumerate(idx):
        x, n = _draw_iteration(A, mean, sigma, seed, i, cap)
        used += n
        if x is None:
            return None, used, i
        out[k] = x
    return out, used, None


def monte_carlo_extract(P: ParticipationMatrix, stats: Sequence[QtlsStat], iterations: int = 10000,
                        seed: int = 0, workers: int = 1,
                        layer_spec: InterfaceLayerSpec = InterfaceLayerSpec()) -> LossFactorDistribution:
    """Propagate Q_TLS uncertainty into the loss factors.

    Every iteration draws each geometry's Q_TLS from a normal distribution
    with the stat's mean and ``sigma = CI width / (2 * 1.96)``, redraws
    until all values are positive, and solves the NNLS problem for ``1/Q``.
    Iteration ``i`` uses its own generator seeded by ``(seed, i)``, so the
    result does not depend on ``workers``.
    """
    if iterations < 1:
        raise PreconditionError("iterations must be >= 1")
    stats = list(stats)
    ids = [s.geometry_id for s in stats]
    if ids != list(P.rows):
        raise PreconditionError("stats must be aligned with the participation matrix rows")
    mean = np.array([s.mean_qtls for s in stats], dtype=float)
    sigma = np.array([s.sigma for s in stats], dtype=float)
    if P.condition_number == math.inf:
        warnings.warn("participation matrix is rank deficient: the system is underdetermined "
                      "and loss factors are not unique", stacklevel=2)
    A = P.values
    # each iteration may redraw; the total budget is RESAMPLE_CAP draws per iteration
    cap = RESAMPLE_CAP
    if workers > 1 and iterations > 1:
        blocks = np.array_split(np.arange(iterations), workers)
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_draw_block, [(A, mean, sigma, seed, b, cap) for b in blocks]))
    else:
        parts = [_draw_block((A, mean, sigma, seed, np.arange(iterations), cap))]
    failed = [p[2] for p in parts if p[0] is None]
    if failed:
        raise DataError(f"Monte Carlo iteration {failed[0]} found no valid sample in {cap} draws")
    samples = np.vstack([p[0] for p in parts])
    attempts = sum(p[1] for p in parts)
    return LossFactorDistribution(samples, seed=seed, layer_spec=layer_spec, attempts=attempts)


# --------------------------------------------------------------------------
# loss tangents and prediction


@dataclass(frozen=True)
class InterfaceAssumptions:
    """Assumed physical thickness (nm) and relative permittivity per interface."""

    t_ms_nm: float = 2.0
    eps_ms: float = 11.7
    t_sa_nm: float = 2.0
    eps_sa: float = 4.0
    t_ma_nm: float = 2.0
    eps_ma: float = 10.0

    # normal field dominates MS and MA, tangential field dominates SA
    orientation = {"MS": "perp", "SA": "par", "MA": "perp"}

    def __post_init__(self):
        for k in ("t_ms_nm", "t_sa_nm", "t_ma_nm", "eps_ms", "eps_sa", "eps_ma"):
            if not getattr(self, k) > 0:
                raise PreconditionError(f"{k} must be positive")

    def scale(self, layer_spec: InterfaceLayerSpec = InterfaceLayerSpec()):
        """Factors mapping each loss tangent to its loss factor, ``x = scale * tan_delta``."""
        t0, e0 = layer_spec.t_nom, layer_spec.eps_nom
        if t0 <= 0:
            raise PreconditionError("layer_spec.t_nom must be positive")
        out = []
        for name in ("MS", "SA", "MA"):
            t = getattr(self, f"t_{name.lower()}_nm")
            e = getattr(self, f"eps_{name.lower()}")
            if self.orientation[name] == "perp":
                out.append((t / t0) / (e / e0))
            else:
                out.append((t / t0) / (e0 / e))
        return np.array([*out, 1.0])


def to_loss_tangents(x, assume: InterfaceAssumptions = InterfaceAssumptions(),
                     layer_spec: InterfaceLayerSpec = InterfaceLayerSpec()):
    """Loss tangents ``[MS, SA, MA, Si]`` from loss factors.

    ``x`` may be a ``LossFactorVector``, a length-4 array or an ``(N, 4)``
    array of samples.
    """
    arr = x.as_array() if isinstance(x, LossFactorVector) else np.asarray(x, dtype=float)
    return arr / assume.scale(layer_spec)


def round_sig(value, digits=2):
    """Round half-up to ``digits`` significant figures.

    The value is first reduced to 12 significant figures so that binary
    noise (``5.8499999...e-4`` for an exact ``5.85e-4``) does not decide
    the rounding direction.
    """
    if value == 0 or not math.isfinite(value):
        return float(value)
    d = Decimal(repr(float(value)))
    d = d.quantize(Decimal(1).scaleb(d.adjusted() - 11), rounding=ROUND_HALF_UP)
    return float(d.quantize(Decimal(1).scaleb(d.adjusted() - digits + 1), rounding=ROUND_HALF_UP))


def predict_qtls(p, dist: LossFactorDistribution, geometry_id: str = "") -> QtlsStat:
    """Q_TLS of a participation vector under every loss-factor sample.

    Samples giving zero total loss are skipped and counted in
    ``n_excluded``.  The interval is the central 95% of the finite values.
    """
    if getattr(p, "layer_spec", dist.layer_spec) != dist.layer_spec:
        raise PreconditionError("participation and loss factors use different layer normalisations")
    row = p.loss_row() if hasattr(p, "loss_row") else np.asarray(p, dtype=float)
    loss = dist.samples @ row
    ok = loss > 0
    if not np.any(ok):
        raise DataError("every loss-factor sample gives zero loss")
    q = 1.0 / loss[ok]
    lo, hi = np.percentile(q, [2.5, 97.5])
    m = float(q.mean())
    return QtlsStat(geometry_id=geometry_id, n=int(ok.sum()), mean_qtls=m, ci95_lo=float(min(lo, m)),
                    ci95_hi=float(max(hi, m)), n_excluded=int((~ok).sum()))


def predicted_vs_measured(P: ParticipationMatrix, stats: Sequence[QtlsStat], x: LossFactorVector):
    """Rows ``(geometry_id, measured, predicted)`` and the R^2 about the identity line."""
    pred = 1.0 / (P.values @ x.as_array())
    meas = np.array([s.mean_qtls for s in stats])
    ss_res = float(np.sum((meas - pred) ** 2))
    ss_tot = float(np.sum((meas - meas.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    return list(zip(P.rows, meas.tolist(), pred.tolist())), r2


# --------------------------------------------------------------------------
# reference geometry set

# Mean loss factors of the highest-Q process, in the order of X_NAMES.
REFERENCE_LOSS_FACTORS = LossFactorVector(1.0e-4, 5.7e-5, 7.8e-4, 1.2e-7)

# (depth µm, sidewall angle deg) measured on etched trenches; other depths
# are interpolated.
SIDEWALL_CALIBRATION = ((0.15, 93.0), (0.68, 100.0), (1.2, 104.0), (2.2, 109.0))

_REFERENCE_DEPTHS = {
    (16.0, 8.0): (0.15, 0.68, 1.2, 1.7, 2.2),
    (3.0, 1.5): (0.15, 0.68),
    (6.0, 3.0): (0.15, 0.68, 1.2),
    (10.0, 5.0): (0.15, 0.68, 1.2, 2.2),
    (22.0, 11.0): (0.15, 0.68, 1.2, 2.2),
    (8.0, 4.0): (0.68,),
}


def geometry_id(w, g, d):
    return f"w{w:g}_g{g:g}_d{d:g}"


def reference_geometry_set(calibration=SIDEWALL_CALIBRATION) -> Dict[str, CpwGeometry]:
    """Nineteen trenched CPW geometries over six (w, g) pairs and five depths."""
    out = {}
    for (w, g), depths in _REFERENCE_DEPTHS.items():
        for d in depths:
            out[geometry_id(w, g, d)] = CpwGeometry(w, g, d, interpolate_sidewall_angle(d, calibration))
    return out
