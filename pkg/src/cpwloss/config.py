"""Run configuration (TOML) and the on-disk participation cache.

Every length key carries its unit in the name (``_um`` or ``_nm``).  A
minimal ``solve`` configuration::

    [geometry]
    w_um = 16
    g_um = 8
    d_um = 0.68
    phi_deg = 100

Sections and keys
-----------------
``[geometry]``
    ``w_um``, ``g_um`` (required), ``d_um`` (0), ``phi_deg`` (90),
    ``t_metal_um`` (0.15), ``eps_substrate`` (11.7),
    ``domain_halfwidth_um``, ``domain_height_um`` (derived when absent).
``[layers]``
    ``t_nom_nm`` (10), ``eps_nom`` (10).
``[mesh]``
    ``h_max_um`` (w + 2g), ``h_edge_um`` (0.01), ``grading`` (1.25),
    ``layer_elements`` (2), ``min_angle_deg`` (20).
``[sweep]``
    ``depths_um`` (array), or ``depth_min_um``, ``depth_max_um`` and
    ``n_depths`` for log spacing; ``tolerance`` (0.01).
``[fit]``
    ``measurements`` (CSV path, relative to the config file),
    ``iterations`` (10000), ``policy`` ("exclude" or "clamp").
``[calibration]``
    ``depths_um`` and ``phi_deg`` arrays for sidewall-angle interpolation.
``[assumptions]``
    ``t_ms_nm``, ``eps_ms``, ``t_sa_nm``, ``eps_sa``, ``t_ma_nm``, ``eps_ma``.
``[predict]``
    ``distribution`` (CSV path), optional ``depths_um`` for a band plot.

Cache layout
------------
``<cache_dir>/participation/<sha256>.json`` where the hash covers the
geometry, layer spec, mesh policy and the package version.  Each file holds
the participation components of one cross-section.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .errors import ConfigError
from .geometry import CpwGeometry, InterfaceLayerSpec
from .lossfit import SIDEWALL_CALIBRATION, InterfaceAssumptions
from .mesh import RefinementPolicy
from .participation import LAYER_COMPONENTS, Method, ParticipationVector, simulate

_KNOWN = {
    "geometry": {"w_um", "g_um", "d_um", "phi_deg", "t_metal_um", "eps_substrate", "domain_halfwidth_um",
                 "domain_height_um"},
    "layers": {"t_nom_nm", "eps_nom"},
    "mesh": {"h_max_um", "h_edge_um", "grading", "layer_elements", "min_angle_deg"},
    "sweep": {"depths_um", "depth_min_um", "depth_max_um", "n_depths", "tolerance"},
    "fit": {"measurements", "iterations", "policy"},
    "calibration": {"depths_um", "phi_deg"},
    "assumptions": {"t_ms_nm", "eps_ms", "t_sa_nm", "eps_sa", "t_ma_nm", "eps_ma"},
    "predict": {"distribution", "depths_um"},
}


class RunConfig:
    """Parsed configuration with typed accessors for each section."""

    def __init__(self, data: dict, base_dir: Path = Path(".")):
        self.data = data
        self.base_dir = Path(base_dir)
        for section, body in data.items():
            if section not in _KNOWN:
                raise ConfigError(f"unknown section [{section}]")
            if not isinstance(body, dict):
                raise ConfigError(f"[{section}] must be a table")
            unknown = set(body) - _KNOWN[section]
            if unknown:
                raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls(data, path.parent)

    def section(self, name):
        return self.data.get(name, {})

    def _num(self, section, key, default=None, required=False):
        body = self.section(section)
        if key not in body:
            if required:
                raise ConfigError(f"missing required key `{key}` in [{section}]")
            return default
        v = body[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"`{key}` in [{section}] must be a number, got {v!r}")
        return float(v)

    def _array(self, section, key):
        v = self.section(section).get(key)
        if v is None:
            return None
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise ConfigError(f"`{key}` in [{section}] must be an array of numbers")
        return [float(x) for x in v]

    def path(self, section, key, required=True):
        v = self.section(section).get(key)
        if v is None:
            if required:
                raise ConfigError(f"missing required key `{key}` in [{section}]")
            return None
        if not isinstance(v, str):
            raise ConfigError(f"`{key}` in [{section}] must be a string path")
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    # -- typed views -------------------------------------------------------

    def geometry(self, domain_scale=1.0, **override) -> CpwGeometry:
        n = lambda k, d=None, r=False: self._num("geometry", k, d, r)
        w, g = n("w_um", r=True), n("g_um", r=True)
        d = override.get("d", n("d_um", 0.0))
        phi = override.get("phi", n("phi_deg", 90.0))
        hw, hh = n("domain_halfwidth_um"), n("domain_height_um")
        base = CpwGeometry(w, g, d, phi, t_metal=n("t_metal_um", 0.15), eps_substrate=n("eps_substrate", 11.7),
                           domain_halfwidth=hw, domain_height=hh)
        if domain_scale != 1.0:
            base = base.replace(domain_halfwidth=base.domain_halfwidth * domain_scale,
                                domain_height=base.domain_height * domain_scale)
        return base

    def geometry_template(self):
        """Fixed cross-section parameters, for geometries whose w, g, d, phi come from data."""
        return {"t_metal": self._num("geometry", "t_metal_um", 0.15),
                "eps_substrate": self._num("geometry", "eps_substrate", 11.7)}

    def layer_spec(self) -> InterfaceLayerSpec:
        return InterfaceLayerSpec(self._num("layers", "t_nom_nm", 10.0), self._num("layers", "eps_nom", 10.0))

    def policy(self, geom: CpwGeometry) -> RefinementPolicy:
        n = lambda k, d: self._num("mesh", k, d)
        le = n("layer_elements", 2)
        if le != int(le):
            raise ConfigError("`layer_elements` in [mesh] must be an integer")
        return RefinementPolicy(h_max=n("h_max_um", geom.w + 2 * geom.g), h_edge=n("h_edge_um", 0.01),
                                grading=n("grading", 1.25), layer_elements=int(le),
                                min_angle=n("min_angle_deg", 20.0))

    def depths(self):
        arr = self._array("sweep", "depths_um")
        if arr is not None:
            return arr
        lo = self._num("sweep", "depth_min_um", required=True)
        hi = self._num("sweep", "depth_max_um", required=True)
        k = self._num("sweep", "n_depths", 12)
        if not (0 < lo < hi) or k < 2 or k != int(k):
            raise ConfigError("[sweep] needs 0 < depth_min_um < depth_max_um and integer n_depths >= 2")
        return [float(v) for v in np.geomspace(lo, hi, int(k))]

    def calibration(self):
        d = self._array("calibration", "depths_um")
        p = self._array("calibration", "phi_deg")
        if d is None and p is None:
            return SIDEWALL_CALIBRATION
        if d is None or p is None or len(d) != len(p):
            raise ConfigError("[calibration] needs equal-length `depths_um` and `phi_deg` arrays")
        return tuple(zip(d, p))

    def assumptions(self) -> InterfaceAssumptions:
        default = InterfaceAssumptions()
        kw = {k: self._num("assumptions", k, getattr(default, k)) for k in
              ("t_ms_nm", "eps_ms", "t_sa_nm", "eps_sa", "t_ma_nm", "eps_ma")}
        return InterfaceAssumptions(**kw)

    def to_json(self):
        return json.dumps(self.data, sort_keys=True, indent=2)


# --------------------------------------------------------------------------
# cache


def cache_key(geom: CpwGeometry, layer_spec: InterfaceLayerSpec, policy: RefinementPolicy) -> str:
    payload = {"geometry": asdict(geom), "layers": asdict(layer_spec), "policy": asdict(policy),
               "version": __version__}
    blob = json.dumps(payload, sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()


class ParticipationCache:
    """Content-addressed store of perturbative participation results."""

    def __init__(self, root=None, enabled=True):
        self.enabled = enabled and root is not None
        self.root = Path(root) / "participation" if root is not None else None
        self.hits = 0
        self.misses = 0

    def _file(self, key):
        return self.root / f"{key}.json"

    def get(self, geom, layer_spec, policy):
        if not self.enabled:
            return None
        f = self._file(cache_key(geom, layer_spec, policy))
        if not f.exists():
            return None
        d = json.loads(f.read_text())
        self.hits += 1
        return ParticipationVector(**{k: d[k] for k in (*LAYER_COMPONENTS, "p_si", "p_vac")}, geometry=geom,
                                   layer_spec=layer_spec, method=Method(d["method"]))

    def put(self, geom, layer_spec, policy, p: ParticipationVector):
        if not self.enabled:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        f = self._file(cache_key(geom, layer_spec, policy))
        tmp = f.with_suffix(f".tmp{os.getpid()}")
        # repr round-trips floats exactly, so hits equal cold runs
        tmp.write_text(json.dumps(p.as_dict(), sort_keys=True))
        tmp.replace(f)

    def compute(self, geom, layer_spec, policy):
        p = self.get(geom, layer_spec, policy)
        if p is None:
            self.misses += 1
            p = simulate(geom, layer_spec, policy)
            self.put(geom, layer_spec, policy, p)
        return p
