import math

import numpy as np
import pytest

from szego_lab.cocycle import Su11Matrix, op_norms
from szego_lab.kam import (
    KamGateError,
    KamSchedule,
    KamStepError,
    MatPoly,
    SuFunction,
    conjugacy_residual,
    growth_bound_check,
    kam_iterate,
    kam_states_to_json,
    kam_step,
    mat_exp,
    mat_log_from_id,
    resonance_set,
    rotation_label,
    rotation_of_su11,
    split_szego_system,
    su11_log_constant,
    su_defect,
    su_project,
)
from szego_lab.model import GOLDEN_MEAN, constant_model, cosine_model

GOLDEN_RATIO = (math.sqrt(5.0) + 1.0) / 2.0


def random_su_poly(rng, modes, d=1):
    mats = {}
    for k in modes:
        t = rng.normal()
        v = rng.normal() + 1j * rng.normal()
        mats[(k,)] = np.array([[1j * t, v], [np.conj(v), -1j * t]])
    return su_project(MatPoly(mats, d))


def scaled_su_function(rng, modes, eps, r):
    f = SuFunction(random_su_poly(rng, modes), r)
    return SuFunction(f.mat.scale(eps / f.norm()), r)


# --------------------------------------------------------------------------
# Fourier polynomial arithmetic
# --------------------------------------------------------------------------

def test_matpoly_product_matches_pointwise():
    rng = np.random.default_rng(0)
    a = MatPoly({(k,): rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
                 for k in (-2, 0, 3)}, 1)
    b = MatPoly({(k,): rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
                 for k in (-1, 2)}, 1)
    for x in (0.0, 0.31, 0.77):
        lhs = (a @ b).eval(np.array([x]))
        rhs = a.eval(np.array([x])) @ b.eval(np.array([x]))
        assert np.abs(lhs - rhs).max() < 1e-12


def test_matpoly_shift_is_translation():
    rng = np.random.default_rng(1)
    a = MatPoly({(k,): rng.normal(size=(2, 2)) + 0j for k in (-1, 2)}, 1)
    om = np.array([0.237])
    x = 0.4
    assert np.abs(a.shift(om).eval(np.array([x]))
                  - a.eval(np.array([x + 0.237]))).max() < 1e-12


def test_matpoly_weighted_norm_single_mode():
    m = np.array([[0.0, 2.0], [0.0, 0.0]])
    p = MatPoly({(3,): m}, 1)
    assert p.weighted_norm(0.1) == pytest.approx(2.0 * math.exp(2 * np.pi * 3 * 0.1))
    assert p.sup_bound() == pytest.approx(2.0)


def test_matpoly_star_is_pointwise_adjoint():
    rng = np.random.default_rng(2)
    a = MatPoly({(k,): rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
                 for k in (-1, 0, 2)}, 1)
    x = np.array([0.29])
    assert np.abs(a.star().eval(x) - a.eval(x).conj().T).max() < 1e-12


def test_exp_log_round_trip():
    rng = np.random.default_rng(3)
    y = random_su_poly(rng, [1, 2]).scale(0.05)
    g = mat_exp(y)
    back = mat_log_from_id(g)
    assert (back - y).sup_bound() < 1e-13
    import scipy.linalg as sla
    x = np.array([0.41])
    assert np.abs(g.eval(x) - sla.expm(y.eval(x))).max() < 1e-12


def test_log_gate_refuses_large_perturbation():
    big = MatPoly.constant(np.array([[1.8, 0.0], [0.0, 0.6]]), 1)
    with pytest.raises(KamStepError):
        mat_log_from_id(big)


def test_su_projection_idempotent_and_pointwise():
    rng = np.random.default_rng(4)
    raw = MatPoly({(k,): rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
                   for k in (-2, 1, 3)}, 1)
    p = su_project(raw)
    assert su_defect(p) < 1e-13
    j = np.diag([1.0, -1.0])
    fx = p.eval(np.array([0.123]))
    assert np.abs(fx.conj().T @ j + j @ fx).max() < 1e-12


def test_su11_log_constant_round_trip():
    import scipy.linalg as sla
    s = Su11Matrix(np.exp(0.3j) * math.cosh(0.2),
                   math.sinh(0.2) * np.exp(0.7j) * np.exp(0.3j))
    # build a genuine SU(1,1) element instead: exp of an su(1,1) generator
    gen = np.array([[0.25j, 0.1 + 0.05j], [0.1 - 0.05j, -0.25j]])
    mat = sla.expm(gen)
    s = Su11Matrix.from_matrix(mat)
    t, v = su11_log_constant(s)
    assert t == pytest.approx(0.25, abs=1e-12)
    assert v == pytest.approx(0.1 + 0.05j, abs=1e-12)


# --------------------------------------------------------------------------
# schedule arithmetic
# --------------------------------------------------------------------------

def test_schedule_sequences():
    s = KamSchedule(1e-8, 0.5)
    assert s.epsilon(0) == 1e-8
    assert s.epsilon(1) == pytest.approx(1e-16)
    assert s.epsilon(2) == pytest.approx(1e-32)
    assert s.radius(2) == pytest.approx(0.125)
    assert s.N(0) == pytest.approx(4.0 * math.log(1e8) / 0.5)
    assert s.N(1) == pytest.approx(16.0 * math.log(1e8) / 0.5)
    with pytest.raises(ValueError):
        KamSchedule(2.0, 0.5)


# --------------------------------------------------------------------------
# single KAM step
# --------------------------------------------------------------------------

def test_step_identity_case():
    s0 = Su11Matrix(np.exp(1j * np.pi / 4), 0j)
    res = kam_step(s0, SuFunction.zero(1, 0.5), np.array([GOLDEN_MEAN]), 0.5, 0.25)
    assert res.branch == "trivial"
    assert res.degB == (0,)
    assert res.SPlus.a == s0.a and res.SPlus.b == s0.b
    assert res.fPlus.norm() == 0.0
    assert np.abs(res.B(0.3) - np.eye(2)).max() < 1e-15


def test_step_nonresonant_golden_single_mode():
    # frequency taken as the classic golden ratio (root of x^2 = x + 1): the
    # absolute-value non-resonance condition |2 rho - n omega| >= eps^(1/15)
    # then holds for every 0 < |n| < N at 2 rho = 1/4
    s0 = Su11Matrix(np.exp(1j * np.pi / 4), 0j)
    om = np.array([GOLDEN_RATIO])
    f0 = SuFunction.single_mode((3,), 2e-8, 1e-8 + 3e-9j, 0.5)
    f0 = SuFunction(f0.mat.scale(1e-6 / f0.norm()), 0.5)
    res = kam_step(s0, f0, om, 0.5, 0.25)
    assert res.branch == "nonResonant"
    assert res.diagnostics["N"] == pytest.approx(
        2.0 * abs(math.log(1e-6)) / 0.25)  # ~ 110.5
    assert 110.0 < res.diagnostics["N"] < 111.0
    assert res.fPlus.norm() <= 1e-11
    residual = conjugacy_residual(s0, f0, om, res.B, res.SPlus, res.fPlus,
                                  grid=256)
    assert residual <= 1e-12


def test_step_exact_resonance_explicit_rotation():
    # 2 rho = <n*, omega> exactly with f0 = 0: B is the degree-n* rotation
    # and the new constant has zero rotation number
    om = np.array([GOLDEN_MEAN])
    s0 = Su11Matrix(np.exp(1j * np.pi * GOLDEN_MEAN), 0j)
    res = kam_step(s0, SuFunction.zero(1, 0.5), om, 0.5, 0.25, epsilon=1e-4)
    assert res.branch == "resonant"
    assert res.degB == (1,)
    assert abs(complex(rotation_of_su11(res.SPlus))) <= 1e-12
    assert res.fPlus.norm() <= 1e-12
    # B(x) is the pure rotation diag(e^{-pi i x}, e^{pi i x})
    x = 0.37
    expected = np.diag([np.exp(-1j * np.pi * x), np.exp(1j * np.pi * x)])
    assert np.abs(res.B(x) - expected).max() < 1e-12
    assert res.B.period == 2


def test_step_gate_refusal():
    s0 = Su11Matrix(np.exp(1j * np.pi / 4), 0j)
    f0 = SuFunction.single_mode((1,), 0.05, 0.02 + 0j, 0.05)
    with pytest.raises(KamGateError):
        kam_step(s0, f0, np.array([GOLDEN_MEAN]), 0.05, 0.025)


def test_step_nonresonant_contract_randomized():
    # 40 randomized trials of the quantitative step contract at eps = 1e-6
    rng = np.random.default_rng(11)
    om = np.array([GOLDEN_RATIO])
    eps = 1e-6
    done = 0
    while done < 40:
        two_rho = rng.uniform(0.05, 0.85)
        # keep the low-order homological divisors healthy: the absolute-value
        # resonance test cannot see torus-wrapped collisions 2 rho = k omega
        # mod 1, and the perturbation only populates modes of small order
        if min(abs(two_rho - k * GOLDEN_RATIO - round(two_rho - k * GOLDEN_RATIO))
               for k in range(-6, 7) if k != 0) < 0.02:
            continue
        s0 = Su11Matrix(np.exp(1j * np.pi * two_rho), 0j)
        f0 = scaled_su_function(rng, [1, 2, 3], eps, 0.5)
        res = kam_step(s0, f0, om, 0.5, 0.25)
        assert res.branch == "nonResonant"
        assert res.fPlus.norm() <= eps ** 1.9
        assert res.diagnostics["normBminusId"] <= math.sqrt(eps)
        assert float(op_norms(res.SPlus.matrix() - s0.matrix())) <= 2 * eps
        assert res.fPlus.membership_defect() <= 1e-12
        done += 1


def test_step_resonant_normal_form_randomized():
    # resonant trials: 2 rho = n* omega + delta with delta well inside the
    # resonance window; the normal form bounds of the resonant branch
    rng = np.random.default_rng(12)
    eps = 1e-6
    for _ in range(25):
        n_star = int(rng.integers(1, 4))
        om_val = rng.uniform(0.08, 0.9 / n_star)
        delta = rng.uniform(-1, 1) * eps ** (1 / 15) / 10
        two_rho = n_star * om_val + delta
        if not 0.03 < two_rho < 0.97:
            continue
        s0 = Su11Matrix(np.exp(1j * np.pi * two_rho), 0j)
        f0 = scaled_su_function(rng, [1, 2], eps, 0.5)
        res = kam_step(s0, f0, np.array([om_val]), 0.5, 0.25)
        assert res.branch == "resonant"
        assert res.degB == (n_star,)
        form = res.diagnostics["resonantForm"]
        assert abs(form["tPlus"]) <= eps ** (1 / 16)
        assert abs(complex(*form["vPlus"])) <= eps ** (15 / 16)
        assert form["verified"]


# --------------------------------------------------------------------------
# the iteration
# --------------------------------------------------------------------------

def test_split_reproduces_szego_cocycle():
    from szego_lab.cocycle import szego_step
    from szego_lab.model import sample_alpha
    model = cosine_model(1e-3)
    zeta = 2.0
    s0, f0 = split_szego_system(model, zeta, 0.05)
    assert f0.membership_defect() <= 1e-12
    z = np.exp(1j * zeta)
    for x in (0.0, 0.21, 0.9):
        lhs = s0.matrix() @ mat_exp(f0.mat).eval(np.array([x]))
        rhs = szego_step(model.alpha(x), z)
        assert np.abs(lhs - rhs).max() < 1e-12


def test_iterate_free_case_trivial():
    states = kam_iterate(constant_model(0.0), 1.3, KamSchedule(1e-4, 0.5))
    assert len(states) == 1
    assert states[0].diagnostics["branch"] == "trivial"
    assert np.abs(states[0].BPoly.constant_mode() - np.eye(2)).max() == 0.0
    assert states[0].degB == (0,)


def test_iterate_smoke_model():
    model = cosine_model(1e-4)
    s0, f0 = split_szego_system(model, 2.0, 0.05)
    schedule = KamSchedule(f0.norm(), 0.05)
    states = kam_iterate(model, 2.0, schedule, max_steps=3,
                         residual_grid=512)
    assert states
    st = states[0]
    checks = st.diagnostics["checks"]
    assert checks["residual"] and checks["normOfB"] and checks["degreeOfB"]
    assert st.diagnostics["normalForm"]["checks"]["Btimesc"]
    assert st.diagnostics["residual"] <= 1e-9 * max(st.BPoly.sup_bound() ** 2, 1.0)
    assert st.f.membership_defect() <= 1e-12


def test_iterate_floor_reported_at_second_step():
    # epsilon0 = 1e-8: epsilon1 = 1e-16 is below double precision, so the
    # iteration stops with the floor reason at step 2
    model = cosine_model(5.6e-10)
    s0, f0 = split_szego_system(model, 2.0, 0.05)
    assert f0.norm() == pytest.approx(1e-8, rel=0.1)
    states = kam_iterate(model, 2.0, KamSchedule(f0.norm(), 0.05), max_steps=3)
    assert len(states) == 1
    assert "floor" in states[0].diagnostics["stopReason"]
    assert "step 2" in states[0].diagnostics["stopReason"]


def test_iterate_degree_additivity_and_json():
    model = cosine_model(1e-4)
    s0, f0 = split_szego_system(model, 2.0, 0.05)
    schedule = KamSchedule(f0.norm(), 0.05)
    states = kam_iterate(model, 2.0, schedule, max_steps=2)
    total = (0,)
    for st in states:
        step_deg = tuple(a - b for a, b in zip(st.degB, total))
        if st.diagnostics["branch"] == "nonResonant":
            assert step_deg == (0,)
        total = st.degB
    text = kam_states_to_json(states)
    import json
    back = json.loads(text)
    assert back[0]["j"] == 1
    assert back[0]["degB"] == list(states[0].degB)


# --------------------------------------------------------------------------
# resonance sets, growth budget, rotation labels
# --------------------------------------------------------------------------

def test_resonance_set_free_case_arcs():
    # lambda = 0, j = 1 and a tiny epsilon0 (so the arcs are disjoint): arcs
    # of half-width 2 pi eps0^(1/15) centered at zeta = 2 pi <m, omega> mod
    # 2 pi; the grid is a union of fine windows around a few centers
    model = constant_model(0.0)
    schedule = KamSchedule(1e-80, 0.5)
    half_width = 2 * np.pi * (1e-80) ** (1 / 15)
    windows = []
    for m in (1, -1, 2, 34):
        center = (2 * np.pi * m * GOLDEN_MEAN) % (2 * np.pi)
        windows.append(np.linspace(center - 5 * half_width,
                                   center + 5 * half_width, 2001))
    grid = np.concatenate(windows) % (2 * np.pi)
    step = half_width / 200
    rset = resonance_set(model, grid, 1, schedule)
    labels = {m for m, _ in rset.arcs}
    for m in (1, -1, 2, 34):
        assert (m,) in labels
        arcs = [(lo, hi) for lab, (lo, hi) in rset.arcs if lab == (m,)]
        assert len(arcs) == 1
        lo, hi = arcs[0]
        center = (2 * np.pi * m * GOLDEN_MEAN) % (2 * np.pi)
        assert abs((lo + hi) / 2 - center) <= 2 * step
        assert abs((hi - lo) - 2 * half_width) <= 4 * step
    assert all(m != (0,) for m, _ in rset.arcs)


def test_resonance_set_count_bound():
    model = constant_model(0.0)
    schedule = KamSchedule(1e-8, 0.5)
    grid = np.linspace(0.0, 2 * np.pi, 4000, endpoint=False)
    rset = resonance_set(model, grid, 1, schedule)
    assert 0 < len(rset.arcs) <= 2 * schedule.N(0) + 1


def test_growth_bound_free_case():
    model = constant_model(0.0)
    schedule = KamSchedule(1e-8, 0.5)
    grid = np.linspace(0.0, 2 * np.pi, 512, endpoint=False)
    rset = resonance_set(model, grid, 1, schedule)
    rep = growth_bound_check(model, rset, schedule)
    assert rep["supNorm"] <= 1.0 + 1e-6
    assert not rep["flagged"]
    assert rep["sMax"] == int((1e-8) ** (-1.0 / 16.0))


def test_rotation_label_free_case():
    model = constant_model(0.0)
    schedule = KamSchedule(1e-100, 0.5)
    center = (2 * np.pi * GOLDEN_MEAN) % (2 * np.pi)
    n, defect, in_kj = rotation_label(model, center, 1, schedule)
    assert n == (1,)
    assert defect <= 1e-12
    assert in_kj
    n0, defect0, in_kj0 = rotation_label(model, 0.0, 1, schedule)
    assert n0 == (0,)
    assert defect0 <= 1e-12
    assert not in_kj0  # the resonance set requires |m| > 0


def test_rotation_label_smoke_model():
    model = cosine_model(1e-4)
    s0, f0 = split_szego_system(model, 2.0, 0.05)
    schedule = KamSchedule(f0.norm(), 0.05)
    grid = np.linspace(0.1, 2 * np.pi - 0.1, 40)
    rset = resonance_set(model, grid, 1, schedule, n_iter=4000)
    assert rset.arcs
    _, (lo, hi) = rset.arcs[0]
    zeta = (lo + hi) / 2
    n, defect, in_kj = rotation_label(model, zeta, 1, schedule, n_iter=4000)
    assert in_kj
    assert defect <= 2 * schedule.epsilon(0) ** (1 / 15)
