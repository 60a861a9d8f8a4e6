"""Density of states estimation and its consistency checks.

Two estimators are provided: pooled eigen-angles of decoupled unitary
truncations, and the density of zeros of the monic orthogonal polynomials
(roots projected to the circle by their angles).  On top of the empirical
CDF sit the Thouless-formula check, window-mass / Holder-slope tables and
the rotation-number consistency check 2 rho(e^{i zeta}) = k(0, zeta).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .cmv import assemble_cmv, truncation_spectrum
from .cocycle import LyapunovResult, default_phase_grid, rotation_curve
from .model import VerblunskyModel, sample_alpha

COLLAR_FACTOR = 4.0  # circle-log singularities excluded within 4/N of the pole


@dataclass(frozen=True)
class DosTable:
    """Empirical integrated density of states.

    gridAngles holds the pooled sorted sample angles in [0, 2pi); cdf[i] is
    the empirical mass of [0, gridAngles[i]].
    """

    gridAngles: np.ndarray
    cdf: np.ndarray
    rhoInf: float
    provenance: Dict[str, object]

    def __post_init__(self):
        a = np.asarray(self.gridAngles, dtype=float)
        c = np.asarray(self.cdf, dtype=float)
        if a.shape != c.shape:
            raise ValueError("grid and cdf shape mismatch")
        if np.any(np.diff(a) < 0) or np.any(np.diff(c) < -1e-15):
            raise ValueError("grid and cdf must be nondecreasing")
        if c.size and (c[0] < -1e-12 or c[-1] > 1.0 + 1e-12):
            raise ValueError("cdf must stay within [0, 1]")

    @property
    def resolution(self) -> float:
        n = int(self.provenance.get("N", len(self.gridAngles)))
        return COLLAR_FACTOR / max(n, 1)

    def evaluate(self, zetas) -> np.ndarray:
        """k(0, zeta) as a right-continuous step function."""
        zetas = np.asarray(zetas, dtype=float) % (2.0 * np.pi)
        idx = np.searchsorted(self.gridAngles, zetas, side="right")
        out = np.zeros_like(zetas, dtype=float)
        nonzero = idx > 0
        out[nonzero] = self.cdf[idx[nonzero] - 1]
        return out

    def to_json(self) -> str:
        return json.dumps({
            "grid": [float(a) for a in self.gridAngles],
            "cdf": [float(c) for c in self.cdf],
            "rhoInf": float(self.rhoInf),
            "provenance": self.provenance,
        })

    @classmethod
    def from_json(cls, text: str) -> "DosTable":
        obj = json.loads(text)
        return cls(np.asarray(obj["grid"], dtype=float),
                   np.asarray(obj["cdf"], dtype=float),
                   float(obj["rhoInf"]), dict(obj["provenance"]))


def _monic_polynomial_roots(model: VerblunskyModel, x, n: int) -> np.ndarray:
    """Roots of the degree-n monic orthogonal polynomial at phase x.

    The (Phi, Phi*) pair is iterated in coefficient space (ascending powers)
    with joint rescaling to dodge coefficient overflow; rescaling leaves the
    roots untouched.
    """
    phi = np.array([1.0 + 0.0j])
    phis = np.array([1.0 + 0.0j])
    for k in range(1, n + 1):
        alpha = sample_alpha(model, x, k)
        zphi = np.concatenate([[0.0], phi])
        new_phi = zphi.copy()
        new_phi[:len(phis)] -= np.conj(alpha) * phis
        new_phis = np.concatenate([phis, [0.0]]).copy()
        new_phis -= alpha * zphi
        phi, phis = new_phi, new_phis
        scale = np.abs(phi).max()
        if scale > 1e100:
            phi = phi / scale
            phis = phis / scale
    # np.roots wants descending powers; leading coefficient may be rescaled
    return np.roots(phi[::-1])


def dos_histogram(model: VerblunskyModel, n: int, phase_samples: int = 1,
                  estimator: str = "truncation") -> DosTable:
    """Pool eigen-angle samples over phases into an empirical CDF."""
    if n < 16:
        raise ValueError("degree must be >= 16")
    if estimator not in ("truncation", "zeros"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if estimator == "zeros" and model.lam == 0.0:
        raise ValueError(
            "zeros estimator is degenerate at lambda = 0: all polynomial "
            "zeros sit at the origin and have no circle projection")
    phases = default_phase_grid(model, phase_samples)
    pooled: List[np.ndarray] = []
    for x in phases:
        if estimator == "truncation":
            tr = assemble_cmv(model, x, n, boundary="unimodular", beta=1.0)
            pooled.append(truncation_spectrum(tr))
        else:
            roots = _monic_polynomial_roots(model, x, n)
            pooled.append(np.angle(roots) % (2.0 * np.pi))
    angles = np.sort(np.concatenate(pooled))
    cdf = np.arange(1, angles.size + 1, dtype=float) / angles.size
    prov = {"estimator": estimator, "N": int(n), "phases": int(phase_samples)}
    return DosTable(angles, cdf, model.rho, prov)


@dataclass(frozen=True)
class ThoulessReport:
    lhs: float
    rhs: float
    gap: float


def thouless_check(model: VerblunskyModel, z: complex, dos: DosTable,
                   lyap: LyapunovResult) -> ThoulessReport:
    """gamma-tilde(z) against -ln rhoInf + int ln|1 - z e^{-i theta}| dk."""
    angles = dos.gridAngles
    if abs(abs(z) - 1.0) < 1e-9:
        # principal-value collar around the on-circle log singularity
        pole = np.angle(z) % (2.0 * np.pi)
        gap_width = dos.resolution
        dist = np.abs((angles - pole + np.pi) % (2.0 * np.pi) - np.pi)
        angles = angles[dist > gap_width]
        if angles.size == 0:
            raise ValueError("collar removed every sample angle")
    vals = np.log(np.abs(1.0 - z * np.exp(-1j * angles)))
    rhs = -math.log(dos.rhoInf) + float(np.mean(vals))
    lhs = lyap.gammaSzego
    return ThoulessReport(lhs, rhs, abs(lhs - rhs))


@dataclass(frozen=True)
class HolderRow:
    zeta: float
    epsilon: float
    mass: float
    flagged: bool  # epsilon below the CDF resolution; excluded from fits


@dataclass(frozen=True)
class HolderTable:
    rows: List[HolderRow]
    slopes: Dict[float, Optional[float]]  # per zeta; None when not applicable

    def to_csv(self) -> str:
        lines = ["zeta,epsilon,mass,flagged,slope"]
        for r in self.rows:
            slope = self.slopes.get(r.zeta)
            s = "" if slope is None else repr(float(slope))
            lines.append(f"{float(r.zeta)!r},{float(r.epsilon)!r},"
                         f"{float(r.mass)!r},{int(r.flagged)},{s}")
        return "\n".join(lines) + "\n"


def holder_modulus(dos: DosTable, zeta_list: Sequence[float],
                   epsilon_list: Sequence[float]) -> HolderTable:
    """Window masses k(zeta-eps, zeta+eps) and fitted local log-log slopes."""
    rows: List[HolderRow] = []
    slopes: Dict[float, Optional[float]] = {}
    res = dos.resolution
    total = len(dos.gridAngles)
    for zeta in zeta_list:
        pts: List[tuple] = []
        for eps in epsilon_list:
            lo = (zeta - eps) % (2.0 * np.pi)
            hi = (zeta + eps) % (2.0 * np.pi)
            if lo <= hi:
                mass = float(dos.evaluate([hi])[0] - dos.evaluate([lo])[0])
            else:  # window wraps the seam
                mass = float(1.0 - dos.evaluate([lo])[0] + dos.evaluate([hi])[0])
            flagged = eps < res
            rows.append(HolderRow(float(zeta), float(eps), mass, flagged))
            # a fit point needs more than a handful of samples in the window
            if not flagged and mass * total >= 8:
                pts.append((math.log(eps), math.log(mass)))
        if len(pts) >= 2:
            xs, ys = np.array(pts).T
            slopes[float(zeta)] = float(np.polyfit(xs, ys, 1)[0])
        else:
            slopes[float(zeta)] = None
    return HolderTable(rows, slopes)


@dataclass(frozen=True)
class RotationDosReport:
    maxDeviation: float
    zetas: np.ndarray
    rotation: np.ndarray
    cdf: np.ndarray


def rotation_dos_consistency(model: VerblunskyModel, dos: DosTable, zeta_grid,
                             n_iter: int = 20_000) -> RotationDosReport:
    """Max over the grid of |2 rho(e^{i zeta}) - k(0, zeta)|."""
    zetas = np.asarray(zeta_grid, dtype=float)
    rho = rotation_curve(model, zetas, n_iter=n_iter)
    cdf = dos.evaluate(zetas)
    dev = np.abs(2.0 * rho - cdf)
    return RotationDosReport(float(dev.max()), zetas, rho, cdf)
