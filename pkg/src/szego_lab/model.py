"""Quasi-periodic sampling model for Verblunsky coefficients.

The coefficient family is alpha_n(x) = lambda * exp(2 pi i h(x + (n-1) omega))
with h a real trigonometric polynomial on the d-torus and omega a frequency
vector.  This module also carries the arithmetic diagnostics (continued
fractions, Liouville exponent, Diophantine brute-force check) used by the
Gordon and KAM machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

MultiIndex = Tuple[int, ...]

GOLDEN_MEAN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Frequency:
    """Frequency vector omega in [0,1)^d."""

    omega: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) % 1.0 for w in self.omega))
        if len(self.omega) < 1:
            raise ValueError("frequency needs at least one component")

    @property
    def d(self) -> int:
        return len(self.omega)

    def as_array(self) -> np.ndarray:
        return np.array(self.omega, dtype=float)


@dataclass(frozen=True)
class DiophantineParams:
    kappa: float
    tau: float

    def __post_init__(self):
        if self.kappa <= 0 or self.tau <= 0:
            raise ValueError("kappa and tau must be positive")


def _norm1(k: MultiIndex) -> int:
    # multi-index magnitude |k| is the l1 norm throughout
    return int(sum(abs(int(c)) for c in k))


class TrigPolynomial:
    """Real-valued trigonometric polynomial h(x) = sum_k hhat(k) e^{2 pi i <k,x>}.

    Conjugate symmetry hhat(-k) = conj(hhat(k)) is enforced at construction so
    evaluations are real up to round-off.
    """

    def __init__(self, coefficients: Dict[MultiIndex, complex], radius: float, d: Optional[int] = None):
        if radius <= 0:
            raise ValueError("analyticity radius must be positive")
        coeffs: Dict[MultiIndex, complex] = {}
        for k, v in coefficients.items():
            if isinstance(k, int):
                k = (k,)
            k = tuple(int(c) for c in k)
            v = complex(v)
            if v != 0:
                coeffs[k] = coeffs.get(k, 0.0 + 0.0j) + v
        if coeffs:
            dims = {len(k) for k in coeffs}
            if len(dims) != 1:
                raise ValueError("inconsistent multi-index dimensions")
            inferred = dims.pop()
            if d is not None and d != inferred:
                raise ValueError("dimension mismatch")
            d = inferred
        elif d is None:
            d = 1
        # symmetrize so the polynomial is exactly real-valued
        sym: Dict[MultiIndex, complex] = {}
        for k, v in coeffs.items():
            mk = tuple(-c for c in k)
            sym[k] = complex(0.5 * (v + complex(coeffs.get(mk, 0.0)).conjugate()))
        self.coefficients = {k: v for k, v in sym.items() if v != 0}
        self.radius = float(radius)
        self.d = d

    @classmethod
    def zero(cls, radius: float = 0.5, d: int = 1) -> "TrigPolynomial":
        return cls({}, radius, d=d)

    @classmethod
    def cosine(cls, amplitude: float = 1.0, radius: float = 0.5) -> "TrigPolynomial":
        """h(x) = amplitude * cos(2 pi x) on the 1-torus."""
        a = 0.5 * amplitude
        return cls({(1,): a, (-1,): a}, radius)

    def __call__(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        val = 0.0 + 0.0j
        for k, c in self.coefficients.items():
            val += c * np.exp(2j * np.pi * float(np.dot(k, x)))
        return float(val.real)

    def eval_many(self, xs: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on an (P, d) array of torus points."""
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        val = np.zeros(xs.shape[0], dtype=complex)
        for k, c in self.coefficients.items():
            val += c * np.exp(2j * np.pi * (xs @ np.asarray(k, dtype=float)))
        return val.real

    def weighted_norm(self, r: Optional[float] = None) -> float:
        """||h||_r = sum |hhat(k)| e^{2 pi |k| r}  (l1-weighted Fourier norm)."""
        r = self.radius if r is None else r
        return float(sum(abs(c) * math.exp(2.0 * math.pi * _norm1(k) * r)
                         for k, c in self.coefficients.items()))


@dataclass(frozen=True)
class VerblunskyModel:
    """alpha(x) = lam * exp(2 pi i h(x)); rho = sqrt(1 - lam^2) is constant."""

    lam: float
    h: TrigPolynomial
    omega: Frequency

    def __post_init__(self):
        if not (0.0 <= self.lam < 1.0):
            raise ValueError("coupling must satisfy 0 <= lambda < 1")
        if self.h.d != self.omega.d:
            raise ValueError("h and omega dimension mismatch")

    @property
    def rho(self) -> float:
        return math.sqrt(1.0 - self.lam * self.lam)

    @property
    def d(self) -> int:
        return self.omega.d

    def alpha(self, x) -> complex:
        if self.lam == 0.0:
            return 0.0 + 0.0j
        return self.lam * np.exp(2j * np.pi * self.h(x))


def constant_model(lam: float, radius: float = 0.5, omega: float = GOLDEN_MEAN) -> VerblunskyModel:
    return VerblunskyModel(lam, TrigPolynomial.zero(radius), Frequency((omega,)))


def cosine_model(lam: float, radius: float = 0.05, omega: float = GOLDEN_MEAN,
                 amplitude: float = 1.0) -> VerblunskyModel:
    return VerblunskyModel(lam, TrigPolynomial.cosine(amplitude, radius), Frequency((omega,)))


def sample_alpha(model: VerblunskyModel, x, n: int) -> complex:
    """alpha_n(x) = alpha(x + (n-1) omega); |result| = lambda exactly."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    shift = (x + (n - 1) * model.omega.as_array()) % 1.0
    return model.alpha(shift)


def continued_fraction(omega: float, depth: int) -> List[Tuple[int, int]]:
    """Convergents (p_n, q_n) of omega in (0,1) by the Euclidean algorithm.

    A rational omega gives a terminating expansion; the list simply stops
    early in that case (termination index = len(result)).
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if not (0.0 < omega < 1.0):
        raise ValueError("omega must lie in (0,1)")
    convergents: List[Tuple[int, int]] = []
    p_prev, q_prev = 1, 0
    p, q = 0, 1
    frac = omega
    for _ in range(depth):
        if frac < 1e-15:
            break  # rational: expansion terminated
        a = int(math.floor(1.0 / frac))
        frac = 1.0 / frac - a
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        convergents.append((p, q))
        if q > 1 << 52:
            break  # past double-precision resolution
    return convergents


def from_continued_fraction(quotients: Sequence[int]) -> float:
    """omega = [0; a1, a2, ...] from positive partial quotients."""
    val = 0.0
    for a in reversed(list(quotients)):
        if a < 1:
            raise ValueError("partial quotients must be positive")
        val = 1.0 / (a + val)
    return val


def beta_exponent(omega: float, depth: int) -> float:
    """Finite-depth estimate of beta(omega) = limsup ln q_{n+1} / q_n.

    Being a limsup, the head of the ratio sequence is pre-asymptotic noise
    (even the golden mean starts at ln 2); the estimate is the max over the
    final quarter of the available ratios.
    """
    conv = continued_fraction(omega, depth)
    qs = [q for _, q in conv]
    ratios = [math.log(qn1) / qn for qn, qn1 in zip(qs, qs[1:])]
    if not ratios:
        return 0.0
    tail = ratios[min(len(ratios) - 1, (3 * len(ratios)) // 4):]
    return max(tail)


@dataclass(frozen=True)
class DiophantineResult:
    ok: bool
    witness: Optional[MultiIndex] = None
    distance: float = math.inf

    def __bool__(self) -> bool:
        return self.ok


def diophantine_check(omega: Frequency, params: DiophantineParams, cutoff: int) -> DiophantineResult:
    """Brute-force check of ||<n,omega>||_{R/Z} >= kappa / |n|^tau over 0 < |n| <= cutoff."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    w = omega.as_array()
    worst: Tuple[float, float, Optional[MultiIndex]] = (math.inf, math.inf, None)
    for n in product(range(-cutoff, cutoff + 1), repeat=omega.d):
        mag = _norm1(n)
        if mag == 0 or mag > cutoff:
            continue
        val = float(np.dot(n, w))
        dist = abs(val - round(val))
        bound = params.kappa / mag ** params.tau
        if dist < bound:
            # witness sign is ambiguous (n and -n violate together): canonicalize
            if next(c for c in n if c != 0) < 0:
                n = tuple(-c for c in n)
            key = (float(mag), dist / bound, n)
            if key < worst:
                worst = key
    if worst[2] is not None:
        n = worst[2]
        val = float(np.dot(n, w))
        return DiophantineResult(False, n, abs(val - round(val)))
    return DiophantineResult(True)


# --- plain-text model serialization -----------------------------------------

def model_to_text(model: VerblunskyModel) -> str:
    """Canonical key-value serialization; floats via repr for exact round-trip."""
    lines = [
        f"lambda={model.lam!r}",
        "omega=" + ",".join(repr(w) for w in model.omega.omega),
        f"radius={model.h.radius!r}",
    ]
    for k in sorted(model.h.coefficients):
        c = model.h.coefficients[k]
        key = ",".join(str(c_) for c_ in k)
        lines.append(f"h.{key}={c.real!r},{c.imag!r}")
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> VerblunskyModel:
    lam = None
    omega = None
    radius = None
    coeffs: Dict[MultiIndex, complex] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key == "lambda":
            lam = float(val)
        elif key == "omega":
            omega = tuple(float(v) for v in val.split(","))
        elif key == "radius":
            radius = float(val)
        elif key.startswith("h."):
            idx = tuple(int(c) for c in key[2:].split(","))
            re_s, im_s = val.split(",")
            coeffs[idx] = complex(float(re_s), float(im_s))
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if lam is None or omega is None or radius is None:
        raise ValueError("model file must define lambda, omega and radius")
    d = len(omega)
    h = TrigPolynomial(coeffs, radius, d=d)
    return VerblunskyModel(lam, h, Frequency(omega))
