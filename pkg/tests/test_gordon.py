import math

import numpy as np
import pytest

from szego_lab.cocycle import lyapunov_exponent, transfer_product
from szego_lab.gordon import (
    THREE_BLOCK_FLOOR,
    GordonReport,
    arcs_to_json,
    gordon_defect,
    gordon_report,
    gordon_reports_to_csv,
    gordon_three_block,
    liouville_frequency,
    sc_region,
    _scaled_power,
)
from szego_lab.model import (
    Frequency,
    TrigPolynomial,
    VerblunskyModel,
    beta_exponent,
    constant_model,
    cosine_model,
    from_continued_fraction,
)


def _liouville_gap_setup():
    # Fibonacci head to q = 233, then one huge quotient: beta_hat ~ 0.135
    # while the weakly coupled model has gamma_hat ~ 0.02 in its main gap
    omega = from_continued_fraction([1] * 12 + [int(math.exp(0.14 * 233) / 233)])
    return cosine_model(0.1, omega=omega), 233, beta_exponent(omega, 13)


def test_free_model_zero_defect():
    fwd, bwd = gordon_defect(constant_model(0.0), 1.0, 5)
    assert fwd == 0.0 and bwd == 0.0


def test_constant_model_zero_defect():
    fwd, bwd = gordon_defect(constant_model(0.5), 2.0, 8)
    assert fwd <= 1e-12 and bwd <= 1e-12


def test_backward_power_matches_inverse():
    model = cosine_model(0.3)
    z = np.exp(0.7j)
    d, l = _scaled_power(model, 0.2, z, -6)
    base = (0.2 - 6 * model.omega.omega[0]) % 1.0
    ref = np.linalg.inv(transfer_product(model, base, z, 6))
    assert np.abs(d * math.exp(l) - ref).max() <= 1e-12


def test_defect_shift_covariance():
    # translating the sampling phase and the potential together is a no-op
    model = cosine_model(0.4)
    c = 0.37
    shifted_h = TrigPolynomial({(1,): 0.5 * np.exp(2j * np.pi * c),
                                (-1,): 0.5 * np.exp(-2j * np.pi * c)},
                               model.h.radius)
    shifted = VerblunskyModel(model.lam, shifted_h, model.omega)
    grid = (np.arange(8) + 0.5) / 8.0
    f0, b0 = gordon_defect(model, 1.1, 5, phase_grid=(grid + c) % 1.0)
    f1, b1 = gordon_defect(shifted, 1.1, 5, phase_grid=grid)
    assert abs(f0 - f1) <= 1e-10 and abs(b0 - b1) <= 1e-10


def test_liouville_defect_bound():
    # numerical form of the telescoping estimate: defect <= e^{-(beta-gamma-0.1) q}
    model, q, beta_hat = _liouville_gap_setup()
    for zeta in (3.862, 3.877):
        gam = lyapunov_exponent(model, np.exp(1j * zeta), n_iter=20_000,
                                phase_count=16).gammaRenormalized
        assert 0.0 < gam < beta_hat
        fwd, bwd = gordon_defect(model, zeta, q,
                                 phase_grid=(np.arange(16) + 0.5) / 16)
        bound = math.exp(-(beta_hat - gam - 0.1) * q)
        assert max(fwd, bwd) <= bound


def test_three_block_free():
    r = gordon_three_block(constant_model(0.0), 0.1, 1.0, 5)
    assert r.applicable and r.verdict == "bound holds"
    assert r.threeBlockMax == pytest.approx(math.sqrt(2.0), abs=1e-9)


def test_three_block_constant_in_arc():
    # elliptic constant cocycle: conjugated rotation keeps all three norms >= 1
    r = gordon_three_block(constant_model(0.5), 0.1, np.pi, 8)
    assert r.applicable
    assert r.threeBlockMax >= 1.0


def test_three_block_liouville_sampled():
    model, q, _ = _liouville_gap_setup()
    for zeta in (3.862, 3.877, 3.892):
        defects = gordon_defect(model, zeta, q,
                                phase_grid=(np.arange(8) + 0.5) / 8)
        assert max(defects) <= 1e-6
        for x in (0.1, 0.45, 0.8):
            r = gordon_three_block(model, x, zeta, q, defects=defects)
            assert r.threeBlockMax >= THREE_BLOCK_FLOOR - 1e-9


def test_three_block_hypotheses_not_met():
    # golden-mean frequency: A^q is genuinely x-dependent, defects are O(1)
    r = gordon_three_block(cosine_model(0.9), 0.2, 1.5, 8)
    assert not r.applicable
    assert r.verdict == "lemma hypotheses not met"


def test_sc_region_free_empty():
    arcs = sc_region(constant_model(0.0), np.linspace(0.1, 6.2, 30), 20)
    assert arcs.arcs == []


def test_sc_region_golden_empty():
    arcs = sc_region(cosine_model(0.9), np.linspace(0.1, 6.2, 30), 20)
    assert arcs.arcs == []


def test_sc_region_liouville_nonempty():
    # early huge partial quotient: beta_hat >> gamma_hat > 0 at strong coupling
    omega = from_continued_fraction([1, 10 ** 14])
    model = cosine_model(0.9, omega=omega)
    assert beta_exponent(omega, 2) > 10.0
    grid = np.linspace(0.1, 2 * np.pi - 0.1, 40)
    arcs = sc_region(model, grid, 2, n_iter=2000, grid_size=128, horizon=1024)
    assert arcs.total_length() > 0.0
    payload = arcs_to_json(arcs)
    assert '"arcs"' in payload


def test_gordon_report_and_csv():
    model, q, beta_hat = _liouville_gap_setup()
    rep = gordon_report(model, 0.3, 3.877, q, cf_depth=13, n_iter=2000)
    assert rep.qn == q
    assert rep.betaEstimate == pytest.approx(beta_hat)
    assert rep.defectForward >= 0 and rep.threeBlockMax >= 0
    text = gordon_reports_to_csv([rep])
    lines = text.strip().splitlines()
    assert lines[0].startswith("zeta,qn,defectForward")
    assert len(lines) == 2


def test_report_rejects_negative_fields():
    with pytest.raises(ValueError):
        GordonReport(1.0, 5, -1.0, 0.0, 1.0, 0.1, 0.1)


def test_liouville_frequency_helper():
    omega, q = liouville_frequency(1.0, head=(1, 1, 1, 1, 1))
    assert 0.0 < omega < 1.0
    assert q >= 2
    assert beta_exponent(omega, 7) >= 0.5
