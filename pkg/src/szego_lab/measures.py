"""Spectral-measure machinery: Caratheodory functions and growth bounds.

Schur-algorithm evaluation of the half-line Caratheodory function F, the
Alexandrov family F^phi, the full-line function Phi via resolvent entries of
the extended truncation, the Jitomirskaya-Last two-sided bound linking |F^phi|
on circles of radius 1-epsilon to weighted norms of the orthogonal
polynomials, measure window bounds, and subordinacy classification of
transfer-matrix growth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .cmv import _factor, assemble_cmv, green_entry
from .cocycle import _alphas_at, _step_batch, default_phase_grid, op_norms
from .model import VerblunskyModel, sample_alpha

SCHUR_DEPTH = 2 ** 14
PHI_COUNT = 16  # unimodular grid for sup over the Alexandrov family
# universal constants of the two-sided bound and the cocycle/window bounds,
# calibrated once on the free, constant and weakly coupled models and frozen
UNIVERSAL_A = 4.0
UNIVERSAL_C = 8.0


@dataclass(frozen=True)
class CaratheodoryEval:
    """Boundary-function data at one point z of the open disk."""

    z: complex
    F: complex
    depth: int
    FAlex: Optional[Dict[complex, complex]] = None
    PhiFull: Optional[complex] = None
    MMinus: Optional[complex] = None

    def __post_init__(self):
        if self.F.real < -1e-10:
            raise ValueError(f"Caratheodory property violated: Re F = {self.F.real:.3e}")
        if self.MMinus is not None and self.MMinus.real > 1e-10:
            raise ValueError(f"anti-Caratheodory property violated: "
                             f"Re M- = {self.MMinus.real:.3e}")


def phi_grid(count: int = PHI_COUNT) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(count) / count)


def _alpha_sites(model: VerblunskyModel, x, count: int) -> np.ndarray:
    """alpha at sites 0..count-1, i.e. alpha_{n}(x) = lam e^{2 pi i h(x + n omega)}."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    omega = model.omega.as_array()
    xs = x[None, :] + np.arange(count)[:, None] * omega[None, :]
    return model.lam * np.exp(2j * np.pi * model.h.eval_many(xs))


def _schur_F(model: VerblunskyModel, x, zs: np.ndarray, depth: int) -> np.ndarray:
    """F(z) for an array of |z| < 1 via the backward Schur continued fraction."""
    zs = np.asarray(zs, dtype=complex)
    alphas = _alpha_sites(model, x, depth)
    f = np.zeros_like(zs)
    for n in range(depth - 1, -1, -1):
        zf = zs * f
        f = (alphas[n] + zf) / (1.0 + np.conj(alphas[n]) * zf)
    return (1.0 + zs * f) / (1.0 - zs * f)


def schur_caratheodory(model: VerblunskyModel, x, z: complex,
                       depth: int = SCHUR_DEPTH) -> CaratheodoryEval:
    """Half-line Caratheodory function F(z) = int (e^{it}+z)/(e^{it}-z) dmu."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    z = complex(z)
    if abs(z) >= 1.0:
        raise ValueError(f"|z| = {abs(z):.6f} is not inside the open disk")
    f = complex(_schur_F(model, x, np.array([z]), depth)[0])
    return CaratheodoryEval(z, f, depth)


def alexandrov_transform(F: complex, phi: complex) -> complex:
    """F^phi = ((1-phi) + (1+phi) F) / ((1+phi) + (1-phi) F), |phi| = 1."""
    num = (1.0 - phi) + (1.0 + phi) * F
    den = (1.0 + phi) + (1.0 - phi) * F
    if abs(den) < 1e-12:
        raise ZeroDivisionError(
            f"Alexandrov denominator collapsed (|den| = {abs(den):.2e}); "
            "the base point sits on a boundary pathology of the family")
    return num / den


# --------------------------------------------------------------------------
# Jitomirskaya-Last machinery
# --------------------------------------------------------------------------

def weighted_norm(a: np.ndarray, l: float) -> float:
    """||a||_l^2 = sum_{j<=[l]} |a_j|^2 + (l-[l]) |a_{[l]+1}|^2."""
    k = int(l)
    head = float(np.sum(np.abs(a[:k + 1]) ** 2))
    frac = l - k
    if frac > 0 and k + 1 < len(a):
        head += frac * float(abs(a[k + 1]) ** 2)
    return math.sqrt(head)


def orthogonal_pair_sequences(model: VerblunskyModel, x, zeta: float,
                              phi: complex, length: int):
    """First- and second-kind orthogonal polynomial sequences at e^{i zeta}.

    Both satisfy the same two-term transfer recursion with initial data
    (1, conj(phi)) and (1, -conj(phi)); returns (phi_seq, psi_seq), each of
    length+1 values starting at n = 0.
    """
    z = np.exp(1j * float(zeta))
    alphas = _alpha_sites(model, x, length)
    vp = np.array([1.0 + 0.0j, np.conj(phi)])
    vm = np.array([1.0 + 0.0j, -np.conj(phi)])
    phis = np.empty(length + 1, dtype=complex)
    psis = np.empty(length + 1, dtype=complex)
    phis[0], psis[0] = 1.0, 1.0
    for n in range(length):
        a = alphas[n]
        rho = math.sqrt(1.0 - abs(a) ** 2)
        t = np.array([[z, -np.conj(a)], [-a * z, 1.0]]) / rho
        vp = t @ vp
        vm = t @ vm
        phis[n + 1] = vp[0]
        psis[n + 1] = vm[0]
    return phis, psis


def _solve_l_of_r(phis: np.ndarray, psis: np.ndarray, r: float) -> float:
    """l(r) with (1-r) ||phi||_l ||psi||_l = sqrt(2); bisection on the
    strictly monotone product."""
    target = math.sqrt(2.0) / (1.0 - r)

    def product(l: float) -> float:
        return weighted_norm(phis, l) * weighted_norm(psis, l)

    lo, hi = 0.0, 1.0
    cap = float(len(phis) - 2)
    while product(hi) < target:
        if hi >= cap:
            raise ArithmeticError(
                "l(r) bisection failed to bracket within the computed "
                "sequences; the norm product must reach sqrt(2)/(1-r)")
        hi = min(2.0 * hi, cap)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if product(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class JlBoundReport:
    zeta: float
    epsilon: float
    lOfR: float
    phiNorm: float
    psiNorm: float
    FAbs: float
    supTransfer: float
    universalA: float = UNIVERSAL_A

    @property
    def ratio(self) -> float:
        return self.psiNorm / self.phiNorm

    def two_sided_holds(self, a: Optional[float] = None) -> bool:
        a = self.universalA if a is None else a
        return self.FAbs <= a * self.ratio and self.FAbs >= self.ratio / a

    def cocycle_bound_holds(self, c: float = UNIVERSAL_C) -> bool:
        return self.FAbs <= c * self.supTransfer


def transfer_sup_squared(model: VerblunskyModel, zeta: float, s_max: int,
                         phase_count: int = 16, x: Optional[float] = None) -> float:
    """sup_{0 <= s <= s_max} ||A^s||_0^2 over a phase grid (renormalized cocycle)."""
    phases = default_phase_grid(model, phase_count)
    if x is not None:
        phases = (phases + np.atleast_1d(np.asarray(x, dtype=float))[None, :]) % 1.0
    z = np.array([np.exp(1j * float(zeta))])
    q = np.broadcast_to(np.eye(2, dtype=complex), (1, phases.shape[0], 2, 2)).copy()
    logs = np.zeros((1, phases.shape[0]))
    sup_log = np.zeros((1, phases.shape[0]))
    for t in range(max(s_max, 1)):
        q = _step_batch(_alphas_at(model, phases, t), z, True) @ q
        np.maximum(sup_log, logs + np.log(op_norms(q)), out=sup_log)
        if (t + 1) % 32 == 0:
            nrm = op_norms(q)
            logs += np.log(nrm)
            q /= nrm[..., None, None]
    return float(np.exp(2.0 * sup_log.max()))


def jl_bound_check(model: VerblunskyModel, x, zeta: float, epsilon: float,
                   phi: complex, depth: int = SCHUR_DEPTH) -> JlBoundReport:
    """Both sides of the two-sided bound |F^phi((1-eps)e^{i zeta})| vs the
    weighted-norm ratio at l(1-eps), and of the cocycle bound vs the
    transfer sup on the circle."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    r = 1.0 - epsilon
    length = int(math.sqrt(2.0) / epsilon) + 4
    phis, psis = orthogonal_pair_sequences(model, x, zeta, phi, length)
    l_of_r = _solve_l_of_r(phis, psis, r)
    phi_norm = weighted_norm(phis, l_of_r)
    psi_norm = weighted_norm(psis, l_of_r)
    base = schur_caratheodory(model, x, r * np.exp(1j * zeta), depth)
    f_abs = abs(alexandrov_transform(base.F, phi))
    s_max = int(math.sqrt(2.0) / epsilon) + 1
    sup_sq = transfer_sup_squared(model, zeta, s_max, x=x)
    return JlBoundReport(float(zeta), float(epsilon), l_of_r, phi_norm,
                         psi_norm, f_abs, sup_sq)


# --------------------------------------------------------------------------
# full-line Caratheodory function
# --------------------------------------------------------------------------

def _minus_half_line_F(model: VerblunskyModel, x, z: complex, size: int,
                       beta: complex = 1.0) -> complex:
    """Caratheodory function of the decoupled left half-line at delta_{-1}.

    The coefficient linking sites -1 and 0 is replaced by the unimodular
    beta, and the block on sites -size..-1 is diagonalized.
    """
    lo, hi = -size, 0
    lfac = _factor(model, x, lo, hi, parity=0, lower_beta=beta, upper_beta=beta)
    mfac = _factor(model, x, lo, hi, parity=1, lower_beta=beta, upper_beta=beta)
    mat = (lfac @ mfac).toarray()
    evals, vecs = np.linalg.eig(mat)
    weights = np.abs(vecs[size - 1, :]) ** 2  # overlap with delta_{-1}
    weights = weights / weights.sum()
    return complex(np.sum(weights * (evals + z) / (evals - z)))


def full_line_caratheodory(model: VerblunskyModel, x, z: complex,
                           truncation_size: int = 1024,
                           depth: int = SCHUR_DEPTH,
                           minus_size: int = 512) -> CaratheodoryEval:
    """Phi(z) = 1 + 2z (G(z;0,0) + G(z;1,1)) from the extended truncation,
    with the half-line F_+, the Alexandrov family, and the anti-Caratheodory
    M_- of the decoupled left half-line; verifies the majorization chain
    |G00+G11| <= |(1 - F+ M-)/(F+ - M-)| <= sup_phi |F+^phi|.
    """
    z = complex(z)
    if abs(z) >= 1.0:
        raise ValueError(f"|z| = {abs(z):.6f} is not inside the open disk")
    tr = assemble_cmv(model, x, truncation_size, kind="extended",
                      boundary="unimodular", beta=1.0)
    g00 = green_entry(tr, z, 0, 0)
    g11 = green_entry(tr, z, 1, 1)
    phi_full = 1.0 + 2.0 * z * (g00 + g11)
    f_plus = complex(_schur_F(model, x, np.array([z]), depth)[0])
    f_minus = _minus_half_line_F(model, x, z, minus_size)
    a0 = sample_alpha(model, x, 1)  # coefficient at site 0
    a0c = np.conj(a0)
    m_minus = ((1.0 - a0c).real - 1j * (1.0 + a0c).imag * f_minus) \
        / (1j * (1.0 - a0c).imag - (1.0 + a0c).real * f_minus)
    alex = {complex(p): alexandrov_transform(f_plus, complex(p))
            for p in phi_grid()}
    lhs = abs(g00 + g11)
    mid = abs((1.0 - f_plus * m_minus) / (f_plus - m_minus))
    sup_alex = max(abs(v) for v in alex.values())
    if lhs > mid + 1e-8:
        raise ArithmeticError(
            f"resolvent bound violated: |G00+G11| = {lhs:.6e} > "
            f"|(1-F+M-)/(F+-M-)| = {mid:.6e}")
    if mid > sup_alex + 1e-8:
        raise ArithmeticError(
            f"maximum-modulus bound violated: {mid:.6e} > "
            f"sup_phi |F+^phi| = {sup_alex:.6e}")
    return CaratheodoryEval(z, f_plus, depth, FAlex=alex,
                            PhiFull=complex(phi_full), MMinus=complex(m_minus))


# --------------------------------------------------------------------------
# measure window bounds
# --------------------------------------------------------------------------

def _poisson_window_mass(values: np.ndarray, thetas: np.ndarray) -> float:
    """integral of Re F over the window against dtheta/(2 pi)."""
    return float(np.trapezoid(np.real(values), thetas) / (2.0 * np.pi))


def measure_window_bound(model: VerblunskyModel, x, zeta: float,
                         epsilon: float, depth: int = SCHUR_DEPTH,
                         truncation_size: int = 1024,
                         grid_points: int = 161) -> Dict[str, float]:
    """Window masses mu_x(zeta +- eps) and Lambda_x(zeta +- eps) against
    eps * sup ||A^s||^2; reports the smallest admissible constants."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    delta = epsilon / 20.0
    thetas = np.linspace(zeta - epsilon, zeta + epsilon, grid_points)
    zs = (1.0 - delta) * np.exp(1j * thetas)
    mu_mass = _poisson_window_mass(_schur_F(model, x, zs, depth), thetas)
    tr = assemble_cmv(model, x, truncation_size, kind="extended",
                      boundary="unimodular", beta=1.0)
    phis = np.array([1.0 + 2.0 * z * (green_entry(tr, z, 0, 0)
                                      + green_entry(tr, z, 1, 1))
                     for z in zs])
    lam_mass = _poisson_window_mass(phis, thetas)
    s_max = int(math.sqrt(2.0) / epsilon) + 1
    sup_sq = transfer_sup_squared(model, zeta, s_max, x=x)
    rhs = epsilon * sup_sq
    return {
        "zeta": float(zeta), "epsilon": float(epsilon),
        "muMass": mu_mass, "lambdaMass": lam_mass,
        "supTransferSquared": sup_sq, "rhsFactor": rhs,
        "cMu": mu_mass / rhs, "cLambda": lam_mass / rhs,
        "holdsMu": bool(mu_mass <= UNIVERSAL_C * rhs),
        "holdsLambda": bool(lam_mass <= UNIVERSAL_C * rhs),
    }


def jl_reports_to_csv(reports: List[JlBoundReport]) -> str:
    lines = ["zeta,epsilon,lOfR,phiNorm,psiNorm,FAbs,supTransfer,universalA"]
    for r in reports:
        lines.append(f"{r.zeta:.12g},{r.epsilon:.12g},{r.lOfR:.12g},"
                     f"{r.phiNorm:.12g},{r.psiNorm:.12g},{r.FAbs:.12g},"
                     f"{r.supTransfer:.12g},{r.universalA:.12g}")
    return "\n".join(lines) + "\n"


def window_reports_to_csv(reports: List[Dict[str, float]]) -> str:
    cols = ["zeta", "epsilon", "muMass", "lambdaMass", "supTransferSquared",
            "rhsFactor", "cMu", "cLambda", "holdsMu", "holdsLambda"]
    lines = [",".join(cols)]
    for r in reports:
        lines.append(",".join(f"{float(r[c]):.12g}" for c in cols))
    return "\n".join(lines) + "\n"


def calibration_json() -> str:
    import json
    return json.dumps({"universalA": UNIVERSAL_A, "universalC": UNIVERSAL_C,
                       "schurDepth": SCHUR_DEPTH, "phiCount": PHI_COUNT},
                      indent=2)


# --------------------------------------------------------------------------
# subordinacy classification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OrbitVerdict:
    zeta: float
    horizon: int
    supNorm: float
    verdict: str  # bounded | growing | inconclusive
    tailSlope: float = 0.0


def subordinacy_classify(model: VerblunskyModel, x, zeta: float,
                         horizon: int = 10_000, cap: float = 1e3,
                         phase_count: int = 8) -> OrbitVerdict:
    """Track sup_{s <= horizon} ||A^s|| over a phase grid and classify the
    growth: bounded (sup below cap, flat tail), growing (log-log tail slope
    >= 0.5), inconclusive otherwise."""
    if horizon < 1000:
        raise ValueError("horizon must be >= 1000")
    phases = (default_phase_grid(model, phase_count)
              + np.atleast_1d(np.asarray(x, dtype=float))[None, :]) % 1.0
    z = np.array([np.exp(1j * float(zeta))])
    q = np.broadcast_to(np.eye(2, dtype=complex), (1, phase_count, 2, 2)).copy()
    logs = np.zeros((1, phase_count))
    running = 0.0
    checkpoints = np.unique(np.geomspace(8, horizon, 48).astype(int))
    marks: List[tuple] = []
    ci = 0
    for t in range(horizon):
        q = _step_batch(_alphas_at(model, phases, t), z, True) @ q
        running = max(running, float((logs + np.log(op_norms(q))).max()))
        if (t + 1) % 32 == 0:
            nrm = op_norms(q)
            logs += np.log(nrm)
            q /= nrm[..., None, None]
        if ci < len(checkpoints) and t + 1 == checkpoints[ci]:
            marks.append((math.log(t + 1.0), running))
            ci += 1
    sup_norm = math.exp(running) if running < 700.0 else math.inf
    tail = [(ls, lv) for ls, lv in marks if ls >= math.log(horizon) / 2.0]
    xs, ys = np.array(tail).T
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(tail) >= 3 else math.inf
    if sup_norm < cap and slope <= 0.05:
        verdict = "bounded"
    elif slope >= 0.5:
        verdict = "growing"
    else:
        verdict = "inconclusive"
    return OrbitVerdict(float(zeta), int(horizon), sup_norm, verdict, slope)
