"""SU(1,1) cocycle kernel: Szego steps, transfer products, Lyapunov
exponents, fibered rotation numbers, uniform-hyperbolicity detection and the
spectrum scan.

Conventions
-----------
* z^{1/2} uses the principal half-angle branch e^{i zeta/2} with
  zeta = arg z in [0, 2pi); the rotation number is canonical mod 1/2 across
  branch choices and this branch is fixed globally.
* The renormalized step S(alpha, z) = z^{-1/2} (1-|alpha|^2)^{-1/2}
  [[z, -conj(alpha)], [-alpha z, 1]] lies in SU(1,1) for |z| = 1.
* Transfer products A^n(x) = A(x+(n-1)omega) ... A(x); negative powers via
  A^{-n}(x) = (A^n(x - n omega))^{-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .model import VerblunskyModel, sample_alpha

# conjugation between SU(1,1) and SL(2,R)
M_CONJ = (1.0 / (1.0 + 1.0j)) * np.array([[1.0, -1.0j], [1.0, 1.0j]])
M_CONJ_INV = np.linalg.inv(M_CONJ)

J_FORM = np.diag([1.0, -1.0])

LOG_OVERFLOW = 640.0  # e^640 ~ 1e278, just under the double ceiling


def half_power(z: complex) -> complex:
    """z^{1/2} on the branch e^{i zeta/2}, zeta = arg z in [0, 2pi)."""
    ang = np.angle(z) % (2.0 * np.pi)
    return math.sqrt(abs(z)) * np.exp(0.5j * ang)


def szego_step(alpha: complex, z: complex, renormalized: bool = True) -> np.ndarray:
    if abs(alpha) >= 1.0:
        raise ValueError("Szego step needs |alpha| < 1")
    if z == 0:
        raise ValueError("Szego step needs z != 0")
    rho = math.sqrt(1.0 - abs(alpha) ** 2)
    mat = np.array([[z, -np.conj(alpha)], [-alpha * z, 1.0]], dtype=complex) / rho
    if renormalized:
        mat = mat / half_power(z)
    return mat


@dataclass(frozen=True)
class Su11Matrix:
    """[[a, b], [conj(b), conj(a)]] with |a|^2 - |b|^2 = 1."""

    a: complex
    b: complex

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [np.conj(self.b), np.conj(self.a)]])

    @classmethod
    def from_matrix(cls, mat: np.ndarray, tol: float = 1e-9) -> "Su11Matrix":
        mat = np.asarray(mat, dtype=complex)
        if abs(mat[0, 0] - np.conj(mat[1, 1])) > tol or abs(mat[0, 1] - np.conj(mat[1, 0])) > tol:
            raise ValueError("matrix not of SU(1,1) shape")
        det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
        if abs(det - 1.0) > tol:
            raise ValueError(f"determinant {det} != 1")
        return cls(complex(mat[0, 0]), complex(mat[0, 1]))

    def form_defect(self) -> float:
        m = self.matrix()
        return float(np.abs(m.conj().T @ J_FORM @ m - J_FORM).max())


@dataclass
class CocycleMap:
    """Quasi-periodic cocycle (omega, A): closure- or Fourier-backed map."""

    omega: np.ndarray
    sample: Callable[[np.ndarray], np.ndarray]  # x (d,) -> 2x2 complex
    period: int = 1  # 2 for KAM conjugations of odd degree

    def __call__(self, x) -> np.ndarray:
        return self.sample(np.atleast_1d(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class LyapunovResult:
    gammaRenormalized: float
    gammaSzego: float
    iterations: int
    phaseSamples: int
    stderr: float


@dataclass(frozen=True)
class RotationResult:
    rho: float
    windingSamples: int


@dataclass(frozen=True)
class SpectrumArcs:
    arcs: List[Tuple[float, float]]
    gridResolution: float

    def contains(self, zeta: float) -> bool:
        zeta = zeta % (2.0 * np.pi)
        return any(lo - 1e-12 <= zeta <= hi + 1e-12 for lo, hi in self.arcs)

    def total_length(self) -> float:
        return float(sum(hi - lo for lo, hi in self.arcs))


@dataclass(frozen=True)
class ScaledMatrix:
    """Overflow-safe product: direction * exp(log_norm)."""

    direction: np.ndarray
    log_norm: float

    def full(self) -> np.ndarray:
        if self.log_norm > LOG_OVERFLOW:
            raise OverflowError("product norm exceeds the floating-point range")
        return self.direction * math.exp(self.log_norm)


# --- batched kernels ---------------------------------------------------------

def op_norms(q: np.ndarray) -> np.ndarray:
    """Operator 2-norm of a (..., 2, 2) stack via the closed-form singular value."""
    frob2 = np.sum(np.abs(q) ** 2, axis=(-2, -1))
    det = q[..., 0, 0] * q[..., 1, 1] - q[..., 0, 1] * q[..., 1, 0]
    inner = np.clip(frob2 ** 2 - 4.0 * np.abs(det) ** 2, 0.0, None)
    return np.sqrt(0.5 * (frob2 + np.sqrt(inner)))


def default_phase_grid(model: VerblunskyModel, count: int) -> np.ndarray:
    """(count, d) deterministic phase grid: uniform in the first coordinate,
    golden-shifted in the others."""
    d = model.d
    grid = np.empty((count, d))
    ts = (np.arange(count) + 0.5) / count
    grid[:, 0] = ts
    for j in range(1, d):
        grid[:, j] = (ts * (j + 1) * 0.6180339887498949) % 1.0
    return grid


def _alphas_at(model: VerblunskyModel, phases: np.ndarray, t: int) -> np.ndarray:
    pts = (phases + t * model.omega.as_array()) % 1.0
    if model.lam == 0.0:
        return np.zeros(pts.shape[0], dtype=complex)
    return model.lam * np.exp(2j * np.pi * model.h.eval_many(pts))


def _step_batch(alphas: np.ndarray, zs: np.ndarray, renormalized: bool) -> np.ndarray:
    """(Z, P, 2, 2) Szego steps for alphas (P,) and spectral points zs (Z,)."""
    rho = np.sqrt(1.0 - np.abs(alphas) ** 2)
    Z, P = len(zs), len(alphas)
    out = np.empty((Z, P, 2, 2), dtype=complex)
    zcol = zs[:, None]
    out[..., 0, 0] = zcol / rho
    out[..., 0, 1] = -np.conj(alphas) / rho
    out[..., 1, 0] = -alphas * zcol / rho
    out[..., 1, 1] = 1.0 / rho
    if renormalized:
        out /= np.array([half_power(z) for z in zs])[:, None, None, None]
    return out


def iterate_cocycle(model: VerblunskyModel, zs, phases: np.ndarray, n: int,
                    renormalized: bool = True, renorm_every: int = 32,
                    track_sup: bool = False):
    """Run n cocycle steps for every (z, phase) pair with log renormalization.

    Returns a dict with:
      growth   : (Z, P) values (1/n) ln ||A^n(x)||
      log_norm : (Z, P) ln ||A^n(x)||
      final    : (Z, P, 2, 2) unit-normalized final products
      sup_log  : (Z, P) max over 0 <= s <= n of ln ||A^s(x)|| (if track_sup)
    """
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    phases = np.atleast_2d(np.asarray(phases, dtype=float))
    Z, P = len(zs), phases.shape[0]
    q = np.broadcast_to(np.eye(2, dtype=complex), (Z, P, 2, 2)).copy()
    logs = np.zeros((Z, P))
    sup_log = np.zeros((Z, P)) if track_sup else None
    for t in range(n):
        step = _step_batch(_alphas_at(model, phases, t), zs, renormalized)
        q = step @ q
        if track_sup:
            np.maximum(sup_log, logs + np.log(op_norms(q)), out=sup_log)
        if (t + 1) % renorm_every == 0:
            nrm = op_norms(q)
            logs += np.log(nrm)
            q /= nrm[..., None, None]
    final_norm = op_norms(q)
    log_norm = logs + np.log(final_norm)
    out = {
        "growth": log_norm / max(n, 1),
        "log_norm": log_norm,
        "final": q / final_norm[..., None, None],
    }
    if track_sup:
        out["sup_log"] = sup_log
    return out


def transfer_product(model: VerblunskyModel, x, z: complex, n: int):
    """A^n(x) for the renormalized Szego cocycle; ScaledMatrix on overflow."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if n == 0:
        return np.eye(2, dtype=complex)
    if n < 0:
        base = (x + n * model.omega.as_array()) % 1.0
        fwd = transfer_product(model, base, z, -n)
        if isinstance(fwd, ScaledMatrix):
            d = fwd.direction
            det = d[0, 0] * d[1, 1] - d[0, 1] * d[1, 0]
            inv = np.array([[d[1, 1], -d[0, 1]], [-d[1, 0], d[0, 0]]]) / det
            nrm = float(op_norms(inv))
            return ScaledMatrix(inv / nrm, math.log(nrm) - fwd.log_norm)
        return np.linalg.inv(fwd)
    q = np.eye(2, dtype=complex)
    log_acc = 0.0
    for t in range(n):
        alpha = complex(_alphas_at(model, x[None, :], t)[0])
        q = szego_step(alpha, z) @ q
        nrm = float(op_norms(q))
        if nrm > 1e50:
            log_acc += math.log(nrm)
            q = q / nrm
    nrm = float(op_norms(q))
    total_log = log_acc + math.log(nrm)
    if total_log > LOG_OVERFLOW:
        return ScaledMatrix(q / nrm, total_log)
    return q * math.exp(log_acc)


def lyapunov_exponent(model: VerblunskyModel, z: complex, n_iter: int = 10_000,
                      phase_count: int = 32) -> LyapunovResult:
    phases = default_phase_grid(model, phase_count)
    res = iterate_cocycle(model, [z], phases, n_iter)
    growths = res["growth"][0]
    gamma = float(np.mean(growths))
    stderr = float(np.std(growths) / math.sqrt(max(len(growths), 1)))
    gamma_szego = gamma + 0.5 * math.log(abs(z))
    return LyapunovResult(gamma, gamma_szego, n_iter, phase_count, stderr)


def lyapunov_curve(model: VerblunskyModel, zetas: np.ndarray, modulus: float = 1.0,
                   n_iter: int = 10_000, phase_count: int = 32):
    """Vectorized gamma over a zeta grid at |z| = modulus; returns (gamma, stderr)."""
    zs = modulus * np.exp(1j * np.asarray(zetas, dtype=float))
    phases = default_phase_grid(model, phase_count)
    res = iterate_cocycle(model, zs, phases, n_iter)
    gam = res["growth"].mean(axis=1)
    err = res["growth"].std(axis=1) / math.sqrt(phase_count)
    return gam, err


# --- rotation numbers --------------------------------------------------------

def _rotation_accumulate(step_at: Callable[[int], np.ndarray], n_iter: int,
                         z_count: int, drift=0.0) -> np.ndarray:
    """Winding (in turns) of the projectivized SL(2,R) dynamics, batched.

    step_at(t) returns (Z, 2, 2) SU(1,1) steps; they are conjugated by the
    fixed M into SL(2,R) and applied to a real direction vector whose angle
    increments are accumulated.  Increments are wrapped to within pi of
    `drift` (per z), the a-priori rotation per step; this keeps the winding
    count stable when the true increment sits near the +-pi seam.
    """
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (z_count,))
    v = np.zeros((z_count, 2))
    v[:, 0] = 1.0
    ang = np.zeros(z_count)
    total = np.zeros(z_count)
    for t in range(n_iter):
        s = step_at(t)
        r = np.real(M_CONJ_INV[None] @ s @ M_CONJ[None])
        w = np.einsum("zij,zj->zi", r, v)
        new_ang = np.arctan2(w[:, 1], w[:, 0])
        delta = new_ang - ang - drift
        delta = (delta + np.pi) % (2.0 * np.pi) - np.pi + drift
        total += delta
        nrm = np.linalg.norm(w, axis=1)
        v = w / nrm[:, None]
        ang = new_ang
    return total / (2.0 * np.pi * n_iter)


def rotation_curve(model: VerblunskyModel, zetas, n_iter: int = 20_000,
                   x0: float = 0.0) -> np.ndarray:
    """Fibered rotation numbers (mod 1) on a zeta grid, single-orbit average.

    The sign convention makes the free cocycle come out at zeta/(4 pi).
    """
    zetas = np.atleast_1d(np.asarray(zetas, dtype=float))
    zs = np.exp(1j * zetas)
    phases = np.atleast_2d(np.asarray(x0, dtype=float))
    if phases.shape[1] != model.d:
        phases = np.full((1, model.d), float(np.atleast_1d(x0)[0]))

    def step_at(t):
        return _step_batch(_alphas_at(model, phases, t), zs, True)[:, 0]

    winding = _rotation_accumulate(step_at, n_iter, len(zs), drift=-0.5 * zetas)
    return (-winding) % 1.0


def rotation_number(model: VerblunskyModel, zeta: float, n_iter: int = 20_000,
                    x0: float = 0.0) -> RotationResult:
    rho = float(rotation_curve(model, [zeta], n_iter, x0)[0])
    return RotationResult(rho, n_iter)


def rotation_number_map(omega, step_fn: Callable[[np.ndarray], np.ndarray],
                        n_iter: int = 20_000, x0: float = 0.0,
                        drift: float = 0.0) -> float:
    """Rotation number of an arbitrary SU(1,1) cocycle closure (same convention).

    `drift` is an optional a-priori per-step rotation (radians, e.g. -zeta/2
    for perturbations of the free cocycle) used to stabilize the winding count.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    x = np.full(omega.shape, float(x0))

    def step_at(t):
        return np.asarray(step_fn((x + t * omega) % 1.0), dtype=complex)[None]

    winding = _rotation_accumulate(step_at, n_iter, 1, drift=drift)
    return float((-winding[0]) % 1.0)


def rotation_of_constant(mat: np.ndarray) -> float:
    """Rotation number of a constant SU(1,1) cocycle from its eigenvalues.

    Elliptic: rho = arccos(Re tr / 2) / (2 pi) in [0, 1/2].  Hyperbolic with
    positive (resp. negative) real eigenvalues: 0 (resp. 1/2).
    """
    tr = complex(np.trace(np.asarray(mat))).real / 2.0
    if abs(tr) <= 1.0:
        return math.acos(max(-1.0, min(1.0, tr))) / (2.0 * np.pi)
    return 0.0 if tr > 0 else 0.5


# --- uniform hyperbolicity and the spectrum ---------------------------------

@dataclass(frozen=True)
class UhVerdict:
    verdict: str  # uniformlyHyperbolic | notUH | undecided
    minGrowth: float
    coherence: float
    horizon: int


def _leading_directions(q: np.ndarray) -> np.ndarray:
    """Leading right-singular vectors of a (P, 2, 2) stack (unit, complex)."""
    h = np.conj(np.swapaxes(q, -2, -1)) @ q
    tr = np.real(h[..., 0, 0] + h[..., 1, 1])
    det = np.real(h[..., 0, 0] * h[..., 1, 1] - h[..., 0, 1] * h[..., 1, 0])
    top = 0.5 * (tr + np.sqrt(np.clip(tr ** 2 - 4 * det, 0.0, None)))
    v1 = np.stack([h[..., 0, 1], top - h[..., 0, 0]], axis=-1)
    v2 = np.stack([top - h[..., 1, 1], h[..., 1, 0]], axis=-1)
    use2 = np.linalg.norm(v2, axis=-1) > np.linalg.norm(v1, axis=-1)
    v = np.where(use2[..., None], v2, v1)
    nrm = np.linalg.norm(v, axis=-1, keepdims=True)
    nrm[nrm == 0] = 1.0
    return v / nrm


def _coherence(q: np.ndarray) -> float:
    """Min adjacent-phase overlap |<v_p, v_{p+1}>| of leading directions."""
    v = _leading_directions(q)
    if v.shape[0] < 2:
        return 1.0
    nxt = np.roll(v, -1, axis=0)
    overlaps = np.abs(np.einsum("pi,pi->p", np.conj(v), nxt))
    return float(overlaps.min())


def growth_threshold(n: int) -> float:
    return 10.0 * math.log(n) / n


def uh_test(model: VerblunskyModel, z: complex, horizon: int = 4096,
            phase_count: Optional[int] = None, threshold: Optional[float] = None) -> UhVerdict:
    if phase_count is None:
        phase_count = 64 ** min(model.d, 2) if model.d > 1 else 64
    thr = growth_threshold(horizon) if threshold is None else threshold
    phases = default_phase_grid(model, phase_count)
    res = iterate_cocycle(model, [z], phases, horizon)
    min_growth = float(res["growth"][0].min())
    coh = _coherence(res["final"][0]) if model.d == 1 else 1.0
    if min_growth <= thr:
        verdict = "notUH"
    elif coh >= 0.9:
        verdict = "uniformlyHyperbolic"
    else:
        verdict = "undecided"
    return UhVerdict(verdict, min_growth, coh, horizon)


def spectrum_scan(model: VerblunskyModel, grid_size: int = 512, horizon: int = 4096,
                  phase_count: int = 16, cap: int = 2 ** 14) -> SpectrumArcs:
    """Scan the circle, classify each angle by the UH growth test, merge the
    non-UH (and undecided, conservatively) angles into arcs."""
    if grid_size < 16:
        raise ValueError("grid size must be >= 16")
    zetas = 2.0 * np.pi * np.arange(grid_size) / grid_size
    phases = default_phase_grid(model, phase_count)
    in_sigma = np.zeros(grid_size, dtype=bool)
    undecided = np.ones(grid_size, dtype=bool)
    n = horizon
    while True:
        idx = np.nonzero(undecided)[0]
        res = iterate_cocycle(model, np.exp(1j * zetas[idx]), phases, n)
        thr = growth_threshold(n)
        for pos, i in enumerate(idx):
            min_growth = float(res["growth"][pos].min())
            if min_growth <= thr:
                in_sigma[i] = True
                undecided[i] = False
            else:
                coh = _coherence(res["final"][pos]) if model.d == 1 else 1.0
                if coh >= 0.9:
                    in_sigma[i] = False
                    undecided[i] = False
        if not undecided.any() or n >= cap:
            break
        n = min(2 * n, cap)
    in_sigma |= undecided  # conservative inclusion
    step = 2.0 * np.pi / grid_size
    if in_sigma.all():
        return SpectrumArcs([(0.0, 2.0 * np.pi)], step)
    if not in_sigma.any():
        return SpectrumArcs([], step)
    # merge circular runs, using midpoints toward excluded neighbours
    arcs = []
    flags = in_sigma
    start = None
    runs = []
    for i in range(grid_size):
        if flags[i] and (start is None):
            start = i
        if start is not None and not flags[(i + 1) % grid_size]:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, grid_size - 1))
    # wrap-merge first and last runs
    if len(runs) >= 2 and runs[0][0] == 0 and runs[-1][1] == grid_size - 1:
        first = runs.pop(0)
        last = runs.pop()
        runs.append((last[0], first[1] + grid_size))
    for a, b in runs:
        lo = (zetas[a % grid_size] - 0.5 * step)
        hi = (zetas[b % grid_size] + 0.5 * step) if b < grid_size else (
            zetas[b % grid_size] + 0.5 * step + 2.0 * np.pi)
        if b >= grid_size:
            hi = zetas[b % grid_size] + 0.5 * step + 2.0 * np.pi
        arcs.append((lo, hi))
    # normalize to [0, 2pi): split arcs crossing the seam
    norm = []
    for lo, hi in arcs:
        lo_m = lo % (2.0 * np.pi)
        span = hi - lo
        if lo < 0.0:
            norm.append((0.0, hi))
            norm.append((lo % (2.0 * np.pi), 2.0 * np.pi))
        elif hi > 2.0 * np.pi:
            norm.append((lo, 2.0 * np.pi))
            norm.append((0.0, hi - 2.0 * np.pi))
        else:
            norm.append((lo, hi))
    norm = sorted((max(0.0, lo), min(2.0 * np.pi, hi)) for lo, hi in norm)
    return SpectrumArcs(norm, step)


# --- polynomial recursions (Szego and Gesztesy-Zinchenko) -------------------

def szego_polynomials(model: VerblunskyModel, x, z: complex, n: int):
    """Orthonormal (phi_k, phi*_k) for k = -n..n via the Szego recursion."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    phis = {0: np.array([1.0 + 0j, 1.0 + 0j])}
    w = phis[0].copy()
    for k in range(1, n + 1):
        alpha = sample_alpha(model, x, k)
        w = szego_step(alpha, z, renormalized=False) @ w
        phis[k] = w.copy()
    w = phis[0].copy()
    for k in range(1, n + 1):
        alpha = sample_alpha(model, x, -k + 1)
        w = np.linalg.inv(szego_step(alpha, z, renormalized=False)) @ w
        phis[-k] = w.copy()
    return phis


def gz_matrix(model: VerblunskyModel, x, z: complex, n: int) -> np.ndarray:
    """Transfer matrix of the generalized-eigenvector iteration at step n.

    The z-coupled form applies at steps whose underlying lattice site (n-1)
    is even, i.e. at odd n in the coefficient numbering used here.
    """
    alpha = sample_alpha(model, x, n)
    rho = math.sqrt(1.0 - abs(alpha) ** 2)
    if n % 2 == 1:
        return np.array([[-alpha, 1.0 / z], [z, -np.conj(alpha)]]) / rho
    return np.array([[-np.conj(alpha), 1.0], [1.0, -alpha]]) / rho


def gz_sequence(model: VerblunskyModel, x, z: complex, n: int):
    """Gesztesy-Zinchenko solution components s_k for k = -n..n, s_0 = 1."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = {0: np.array([1.0 + 0j, 1.0 + 0j])}
    w = out[0].copy()
    for k in range(1, n + 1):
        w = gz_matrix(model, x, z, k) @ w
        out[k] = w.copy()
    w = out[0].copy()
    for k in range(0, -n, -1):
        w = np.linalg.inv(gz_matrix(model, x, z, k)) @ w
        out[k - 1] = w.copy()
    return out


# --- telescoping -------------------------------------------------------------

def afk_telescoping(ms: Sequence[np.ndarray], xis: Sequence[np.ndarray]):
    """Rewrite M_l(id+xi_l)...M_0(id+xi_0) = M^(l)(id + xi^(l)).

    Returns (xi_l, bound, product, reconstructed) where bound is
    exp(sum_k ||M^(k)||^2 ||xi_k||) - 1.
    """
    if len(ms) != len(xis):
        raise ValueError("need one perturbation per factor")
    eye = np.eye(2, dtype=complex)
    prod = eye.copy()
    lead = eye.copy()
    bound_sum = 0.0
    for m, xi in zip(ms, xis):
        prod = (m @ (eye + xi)) @ prod
        lead = m @ lead
        bound_sum += float(op_norms(lead)) ** 2 * float(op_norms(xi))
    xi_l = np.linalg.solve(lead, prod) - eye
    bound = math.expm1(bound_sum)
    return xi_l, bound, prod, lead @ (eye + xi_l)
