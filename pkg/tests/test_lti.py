import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from netmrac.errors import DegenerateInput, NotStrictlyProper, WrongRelativeDegree
from netmrac.lti import (
    Polynomial,
    TransferFunction,
    high_freq_gain,
    is_hurwitz,
    is_spr,
    poly_convolve,
    realize_ccf,
    ss_to_tf,
)
from netmrac.sim import K_MAP, default_leader, family_plants

# keep magnitudes away from underflow so products do not lose their leading term
coef = st.floats(-10, 10, allow_nan=False).filter(lambda v: v == 0 or abs(v) > 1e-3)
polys = st.lists(coef, min_size=1, max_size=6).map(lambda c: Polynomial(tuple(c)))


def P(*desc):
    return Polynomial.from_descending(desc)


def test_polynomial_trims_trailing_zeros():
    p = Polynomial((1.0, 2.0, 0.0, 0.0))
    assert p.coeffs == (1.0, 2.0)
    assert p.degree == 1
    assert Polynomial((0.0, 0.0)).is_zero


def test_convolve_examples():
    assert poly_convolve(P(1, 1), P(1, 2)).coeffs == P(1, 3, 2).coeffs
    p = P(2, -1, 4)
    assert poly_convolve(p, Polynomial((1.0,))).coeffs == p.coeffs
    # (s^2 - 5s + 6)(s + 1) expanded by hand: s^3 - 4s^2 + s + 6
    assert poly_convolve(P(1, -5, 6), P(1, 1)).coeffs == P(1, -4, 1, 6).coeffs


@settings(max_examples=1000, deadline=None)
@given(polys, polys, polys)
def test_convolve_commutative_associative(a, b, c):
    np.testing.assert_allclose((a * b).coeffs, (b * a).coeffs, atol=1e-9)
    lhs = np.asarray(((a * b) * c).coeffs)
    rhs = np.asarray((a * (b * c)).coeffs)
    assert lhs.shape == rhs.shape
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-6)


def test_transfer_function_normalization():
    tf = TransferFunction.from_coeffs([3, 3], [1, 5, 6])
    assert tf.gain == 3
    assert tf.num.coeffs == (1.0, 1.0)
    assert tf.relative_degree == 1
    with pytest.raises(DegenerateInput):
        TransferFunction.from_coeffs([0], [1, 1])
    with pytest.raises(DegenerateInput):
        TransferFunction(P(1, 1), P(2, 1))


def test_realize_leader():
    ss = realize_ccf(default_leader())
    np.testing.assert_array_equal(ss.A, [[0, 1], [-6, -5]])
    np.testing.assert_array_equal(ss.B, [[0], [1]])
    np.testing.assert_array_equal(ss.C, [[1, 1]])
    assert ss.gain == 3


def test_realize_family_agent():
    ss = realize_ccf(TransferFunction.from_coeffs([1, 5], [1, -5, 6]))
    np.testing.assert_array_equal(ss.A, [[0, 1], [-6, 5]])
    np.testing.assert_array_equal(ss.C, [[5, 1]])
    assert ss.gain == 1


def test_realize_first_order():
    ss = realize_ccf(TransferFunction.from_coeffs([1], [1, 1]))
    assert ss.A.tolist() == [[-1.0]] and ss.B.tolist() == [[1.0]] and ss.C.tolist() == [[1.0]]


def test_realize_rejects_biproper():
    with pytest.raises(NotStrictlyProper):
        realize_ccf(TransferFunction.from_coeffs([1, 2], [1, 3]))


@pytest.mark.parametrize("m", sorted(K_MAP))
def test_round_trip_family(m):
    for tf in family_plants(m) + [default_leader()]:
        ss = realize_ccf(tf)
        num, den = ss_to_tf(ss)
        assert np.max(np.abs(np.asarray(den.coeffs) - tf.den.coeffs)) <= 1e-12
        np.testing.assert_allclose(num.coeffs, np.asarray(tf.num.coeffs) * tf.gain, atol=1e-12)
        # independent conversion
        bnum, bden = scipy.signal.ss2tf(ss.A, ss.B, ss.gain * ss.C, np.zeros((1, 1)))
        np.testing.assert_allclose(np.trim_zeros(bnum[0], "f"), tf.gain * tf.num.descending(), atol=1e-9)
        np.testing.assert_allclose(bden, tf.den.descending(), atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=5), st.floats(0.1, 5))
def test_round_trip_random(den_tail, gain):
    n = len(den_tail)
    num = list(np.linspace(1, 2, n - 1) + 0.0) if n > 1 else []
    tf = TransferFunction.from_coeffs([gain] + [gain * v for v in num], [1.0] + den_tail)
    got_num, got_den = ss_to_tf(realize_ccf(tf))
    np.testing.assert_allclose(got_den.coeffs, tf.den.coeffs, atol=1e-9)
    np.testing.assert_allclose(got_num.coeffs, np.asarray(tf.num.coeffs) * tf.gain, rtol=1e-8, atol=1e-8)


def test_hurwitz_examples():
    assert is_hurwitz(P(1, 5, 6))
    assert not is_hurwitz(P(1, -5, 6))
    assert is_hurwitz(P(1, 1))
    with pytest.raises(DegenerateInput):
        is_hurwitz(Polynomial((0.0,)))


@pytest.mark.parametrize("m", sorted(K_MAP))
def test_hurwitz_agrees_with_roots(m):
    for tf in family_plants(m):
        assert is_hurwitz(tf.den) == bool(np.all(np.roots(tf.den.descending()).real < 0))
        assert not is_hurwitz(tf.den)
    assert is_hurwitz(default_leader().den)


def test_spr_examples():
    assert is_spr(default_leader())
    assert not is_spr(TransferFunction.from_coeffs([1, -1], [1, 5, 6]))
    assert not is_spr(TransferFunction.from_coeffs([1, 5], [1, -5, 6]))
    # relative degree two is never SPR
    assert not is_spr(TransferFunction.from_coeffs([1], [1, 3, 2]))


def test_high_freq_gain():
    assert high_freq_gain(default_leader()) == 3
    assert all(high_freq_gain(tf) == 1 for tf in family_plants(9))
    assert high_freq_gain(TransferFunction.from_coeffs([5, 5], [1, 1, 1])) == 5
    with pytest.raises(WrongRelativeDegree):
        high_freq_gain(TransferFunction.from_coeffs([1], [1, 1, 1]))
