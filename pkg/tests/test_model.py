import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from szego_lab.model import (
    GOLDEN_MEAN,
    DiophantineParams,
    Frequency,
    TrigPolynomial,
    VerblunskyModel,
    beta_exponent,
    constant_model,
    continued_fraction,
    cosine_model,
    diophantine_check,
    from_continued_fraction,
    model_from_text,
    model_to_text,
    sample_alpha,
)


def test_sample_alpha_zero_coupling():
    m = constant_model(0.0)
    assert sample_alpha(m, 0.3, 5) == 0.0


def test_sample_alpha_constant_phase():
    m = constant_model(0.5)
    assert sample_alpha(m, 0.123, 7) == pytest.approx(0.5)


def test_sample_alpha_cosine_at_origin():
    # lambda=0.3, h=cos 2pi x, x=0, n=1 -> 0.3 e^{2 pi i cos 0} = 0.3
    m = cosine_model(0.3)
    assert sample_alpha(m, 0.0, 1) == pytest.approx(0.3, abs=1e-14)


@given(st.floats(0.0, 0.99), st.floats(0, 1), st.integers(-50, 50))
@settings(max_examples=60, deadline=None)
def test_sample_alpha_modulus_and_shift(lam, x, n):
    m = cosine_model(lam)
    a = sample_alpha(m, x, n)
    assert abs(abs(a) - lam) < 1e-13
    # shift consistency: alpha_{n+1}(x) = alpha_n(x + omega)
    lhs = sample_alpha(m, x, n + 1)
    rhs = sample_alpha(m, np.array([x]) + m.omega.as_array(), n)
    assert abs(lhs - rhs) < 1e-12


def test_continued_fraction_golden():
    conv = continued_fraction(GOLDEN_MEAN, 8)
    assert [q for _, q in conv] == [1, 2, 3, 5, 8, 13, 21, 34]


def test_continued_fraction_rational_terminates():
    conv = continued_fraction(1.0 / 3.0, 10)
    assert conv[-1][1] == 3
    assert len(conv) <= 2


def test_continued_fraction_sqrt2():
    conv = continued_fraction(math.sqrt(2.0) - 1.0, 5)
    assert [q for _, q in conv] == [2, 5, 12, 29, 70]


def test_convergent_quality():
    conv = continued_fraction(GOLDEN_MEAN, 10)
    for (p, q), (_, q1) in zip(conv, conv[1:]):
        assert abs(GOLDEN_MEAN - p / q) < 1.0 / (q * q1)


def test_convergent_recurrence():
    conv = continued_fraction(math.pi - 3.0, 8)
    qs = [0, 1] + [q for _, q in conv]
    for i in range(2, len(qs) - 1):
        # q_{n+1} = a q_n + q_{n-1} for a positive integer a
        a = (qs[i + 1] - qs[i - 1]) / qs[i]
        assert a == int(a) and a >= 1


def test_beta_exponent_golden_small():
    assert beta_exponent(GOLDEN_MEAN, 20) <= 0.01


def test_beta_exponent_sqrt2_small():
    assert beta_exponent(math.sqrt(2.0) - 1.0, 20) <= 0.02


def test_beta_exponent_liouville_large():
    # synthetic Liouville: a_{n+1} = 2^{q_n} keeps ln q_{n+1}/q_n near ln 2
    quots = [2]
    qs = [1, 2]  # q_0 = 1, q_1 = a_1 = 2
    while qs[-1] < 800:
        quots.append(2 ** qs[-1])
        qs.append(quots[-1] * qs[-1] + qs[-2])
    omega = from_continued_fraction(quots)
    assert beta_exponent(omega, len(quots)) >= 0.5


def test_diophantine_golden_pass():
    res = diophantine_check(Frequency((GOLDEN_MEAN,)), DiophantineParams(0.2, 1.5), 100)
    assert res.ok


def test_diophantine_rational_fail():
    res = diophantine_check(Frequency((0.5,)), DiophantineParams(0.01, 2.0), 4)
    assert not res.ok
    assert res.witness == (2,)
    assert res.distance < 1e-12


def test_diophantine_2d_pass():
    omega = Frequency((GOLDEN_MEAN, math.sqrt(2.0) - 1.0))
    res = diophantine_check(omega, DiophantineParams(0.05, 3.0), 50)
    assert res.ok


def test_diophantine_monotone_in_cutoff():
    omega = Frequency((GOLDEN_MEAN,))
    params = DiophantineParams(0.2, 1.5)
    assert diophantine_check(omega, params, 100).ok
    for n in (1, 10, 50):
        assert diophantine_check(omega, params, n).ok


def test_trig_polynomial_real_and_norm():
    h = TrigPolynomial.cosine(1.0, radius=0.1)
    xs = np.linspace(0, 1, 17)
    for x in xs:
        assert h(x) == pytest.approx(math.cos(2 * math.pi * x), abs=1e-12)
    assert h.weighted_norm() == pytest.approx(math.exp(2 * math.pi * 0.1), rel=1e-12)


def test_model_text_round_trip():
    m = VerblunskyModel(
        0.3,
        TrigPolynomial({(1,): 0.5 + 0.25j, (-1,): 0.5 - 0.25j, (3,): 0.125j, (-3,): -0.125j}, 0.07),
        Frequency((GOLDEN_MEAN,)),
    )
    text = model_to_text(m)
    m2 = model_from_text(text)
    assert m2.lam == m.lam
    assert m2.omega.omega == m.omega.omega
    assert m2.h.radius == m.h.radius
    assert m2.h.coefficients == m.h.coefficients
    # serializer is canonical: second round trip is byte-identical
    assert model_to_text(m2) == text


def test_model_text_rejects_unknown_key():
    with pytest.raises(ValueError):
        model_from_text("lambda=0.1\nomega=0.5\nradius=0.1\nbogus=1\n")


def test_model_rejects_large_coupling():
    with pytest.raises(ValueError):
        constant_model(1.5)
