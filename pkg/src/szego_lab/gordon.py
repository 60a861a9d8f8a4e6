"""Liouville-frequency diagnostics and the Gordon three-block criterion.

For a continued-fraction denominator q of omega, near-periodicity of the
cocycle over q steps makes the transfer matrices almost q-periodic; when the
periodicity defect is small, any candidate eigenvector orbit must keep at
least 1/(2 sqrt 2) of its mass in one of the three blocks [0,q), [-q,0),
[q,2q), excluding eigenvalues.  Combined with a positive Lyapunov exponent
and a positive Liouville exponent beta, this marks a singular-continuous
region of the spectrum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .cocycle import (
    ScaledMatrix,
    SpectrumArcs,
    lyapunov_curve,
    op_norms,
    spectrum_scan,
    transfer_product,
)
from .model import VerblunskyModel, beta_exponent, continued_fraction

THREE_BLOCK_FLOOR = 1.0 / (2.0 * math.sqrt(2.0))
DEFECT_APPLICABILITY = 1e-3  # heuristic gate for the three-block lemma


@dataclass(frozen=True)
class GordonReport:
    zeta: float
    qn: int
    defectForward: float
    defectBackward: float
    threeBlockMax: float
    betaEstimate: float
    gammaEstimate: float

    def __post_init__(self):
        if self.defectForward < 0 or self.defectBackward < 0 or self.threeBlockMax < 0:
            raise ValueError("defects and block norms must be nonnegative")


@dataclass(frozen=True)
class ThreeBlockResult:
    threeBlockMax: float
    applicable: bool
    verdict: str  # "bound holds" | "lemma hypotheses not met"


def _as_matrix(prod) -> Tuple[np.ndarray, float]:
    """(direction, log scale) view of a transfer product."""
    if isinstance(prod, ScaledMatrix):
        return prod.direction, prod.log_norm
    nrm = float(op_norms(prod))
    return prod / nrm, math.log(nrm)


def _scaled_power(model: VerblunskyModel, x, z: complex, n: int) -> Tuple[np.ndarray, float]:
    """A^n(x) as (direction, log norm); negative n is built step by step from
    the adjugate inverses (the renormalized step has unit determinant), which
    stays well conditioned where inverting the full product would not."""
    if n >= 0:
        return _as_matrix(transfer_product(model, x, z, n))
    from .cocycle import szego_step
    x = float(np.atleast_1d(np.asarray(x, dtype=float))[0])
    omega = float(model.omega.omega[0])
    q = np.eye(2, dtype=complex)
    log_acc = 0.0
    for t in range(1, -n + 1):
        s = szego_step(complex(model.alpha((x - t * omega) % 1.0)), z)
        inv = np.array([[s[1, 1], -s[0, 1]], [-s[1, 0], s[0, 0]]])
        q = inv @ q
        nrm = float(op_norms(q))
        if nrm > 1e50:
            log_acc += math.log(nrm)
            q = q / nrm
    nrm = float(op_norms(q))
    return q / nrm, log_acc + math.log(nrm)


def gordon_defect(model: VerblunskyModel, zeta: float, q: int,
                  phase_grid=None) -> Tuple[float, float]:
    """max over the phase grid of ||A^{+-q}(x + q omega) - A^{+-q}(x)||."""
    if model.d != 1:
        raise ValueError("Gordon diagnostics require a one-frequency model")
    if q < 1:
        raise ValueError("q must be a positive denominator")
    if phase_grid is None:
        phase_grid = (np.arange(32) + 0.5) / 32.0
    z = np.exp(1j * float(zeta))
    omega = float(model.omega.omega[0])
    fwd = bwd = 0.0
    for x in np.atleast_1d(np.asarray(phase_grid, dtype=float)):
        for n, acc in ((q, "f"), (-q, "b")):
            d0, l0 = _scaled_power(model, x, z, n)
            d1, l1 = _scaled_power(model, x + q * omega, z, n)
            scale = max(l0, l1)
            diff = float(op_norms(d1 * math.exp(min(l1 - scale, 0.0))
                                  - d0 * math.exp(min(l0 - scale, 0.0))))
            val = diff * math.exp(scale) if scale < 700.0 else math.inf
            if acc == "f":
                fwd = max(fwd, val)
            else:
                bwd = max(bwd, val)
    return fwd, bwd


def gordon_three_block(model: VerblunskyModel, x, zeta: float, q: int,
                       defects: Optional[Tuple[float, float]] = None) -> ThreeBlockResult:
    """max(||A^q v||, ||A^{-q} v||, ||A^{2q} v||) with the initial data
    v = (phi_0, phi_0^*) = (1, 1); when the periodicity defects are small the
    maximum must clear 1/(2 sqrt 2)."""
    if defects is None:
        defects = gordon_defect(model, zeta, q)
    z = np.exp(1j * float(zeta))
    v = np.array([1.0, 1.0], dtype=complex)
    worst = 0.0
    for n in (q, -q, 2 * q):
        d, l = _scaled_power(model, x, z, n)
        nv = float(np.linalg.norm(d @ v))
        worst = max(worst, nv * math.exp(l) if l < 700.0 else math.inf)
    applicable = max(defects) < DEFECT_APPLICABILITY
    if applicable:
        if worst < THREE_BLOCK_FLOOR - 1e-9:
            raise ArithmeticError(
                f"three-block bound violated: max = {worst:.6e} < "
                f"{THREE_BLOCK_FLOOR:.6e} with defects {defects}")
        verdict = "bound holds"
    else:
        verdict = "lemma hypotheses not met"
    return ThreeBlockResult(worst, applicable, verdict)


def gordon_report(model: VerblunskyModel, x, zeta: float, q: int,
                  cf_depth: int = 20, gamma_estimate: Optional[float] = None,
                  n_iter: int = 4000) -> GordonReport:
    """Assemble the per-point diagnostic row."""
    fwd, bwd = gordon_defect(model, zeta, q)
    block = gordon_three_block(model, x, zeta, q, defects=(fwd, bwd))
    beta_hat = beta_exponent(float(model.omega.omega[0]), cf_depth)
    if gamma_estimate is None:
        gam, _ = lyapunov_curve(model, np.array([zeta]), n_iter=n_iter,
                                phase_count=16)
        gamma_estimate = float(gam[0])
    return GordonReport(float(zeta), int(q), fwd, bwd, block.threeBlockMax,
                        beta_hat, float(gamma_estimate))


def gordon_reports_to_csv(reports: List[GordonReport]) -> str:
    lines = ["zeta,qn,defectForward,defectBackward,threeBlockMax,"
             "betaEstimate,gammaEstimate"]
    for r in reports:
        lines.append(f"{r.zeta:.12g},{r.qn},{r.defectForward:.12g},"
                     f"{r.defectBackward:.12g},{r.threeBlockMax:.12g},"
                     f"{r.betaEstimate:.12g},{r.gammaEstimate:.12g}")
    return "\n".join(lines) + "\n"


def sc_region(model: VerblunskyModel, zeta_grid, cf_depth: int = 20,
              margin: float = 0.05, n_iter: int = 4000,
              grid_size: int = 256, horizon: int = 2048) -> SpectrumArcs:
    """Arcs of the scanned spectrum where margin < gamma_hat < beta_hat - margin.

    beta_hat and gamma_hat are finite-resolution estimates, so the region is
    reported with explicit margins rather than as a sharp set.
    """
    if model.d != 1:
        raise ValueError("the singular-continuous region requires d = 1")
    zeta_grid = np.asarray(zeta_grid, dtype=float)
    beta_hat = beta_exponent(float(model.omega.omega[0]), cf_depth)
    step = float(np.diff(zeta_grid).max()) if len(zeta_grid) > 1 else 2 * np.pi
    if beta_hat <= 2 * margin:
        return SpectrumArcs([], step)
    sigma = spectrum_scan(model, grid_size=grid_size, horizon=horizon)
    gam, _ = lyapunov_curve(model, zeta_grid, n_iter=n_iter, phase_count=16)
    flags = np.array([sigma.contains(zz) and margin < g < beta_hat - margin
                      for zz, g in zip(zeta_grid, gam)])
    arcs: List[Tuple[float, float]] = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = zeta_grid[i]
        if start is not None and (not f or i == len(flags) - 1):
            end = zeta_grid[i] if f else zeta_grid[i - 1]
            arcs.append((float(start), float(end)))
            start = None
    return SpectrumArcs(arcs, step)


def arcs_to_json(arcs: SpectrumArcs) -> str:
    return json.dumps({"arcs": [[lo, hi] for lo, hi in arcs.arcs],
                       "gridResolution": arcs.gridResolution}, indent=2)


def liouville_frequency(target_beta: float = 1.5, head=(1, 1, 1, 1, 1)) -> Tuple[float, int]:
    """Synthetic Liouville frequency and the denominator q at the jump.

    The continued fraction opens with `head` and then takes one huge partial
    quotient sized so that ln q_{n+1} / q_n is about target_beta.
    """
    from .model import from_continued_fraction
    ps, qs = [1, 0], [0, 1]
    for a in head:
        ps.append(a * ps[-1] + ps[-2])
        qs.append(a * qs[-1] + qs[-2])
    q = qs[-1]
    big = max(2, int(math.exp(target_beta * q) / q))
    omega = from_continued_fraction(list(head) + [big])
    return omega, q
