import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netmrac.errors import ConfigInvalid, DimensionMismatch, MissingIdealGains, NotHurwitz
from netmrac.lti import realize_ccf
from netmrac.matching import FilterSpec, agent_augmented, solve_ideal_gains
from netmrac.sim import (
    InitialConditions,
    ReferenceSpec,
    default_leader,
    family_scenario,
    integrate,
    prepare,
    rk4,
    energy_check,
    mu_bounds,
    run_matched,
)
from netmrac.tuners import (
    TunerConfig,
    TunerKind,
    TunerState,
    certified_mu_bound,
    gradient_rhs,
    ht1_rhs,
    ht2_rhs,
    lyapunov_monitor,
    mu_lower_bound,
    normalization,
    regressor,
)

finite = st.floats(-100, 100, allow_nan=False)


def test_regressor_examples():
    r = regressor(1.0, np.zeros((1, 1)), np.zeros((1, 1)), [0.0])
    np.testing.assert_array_equal(r.eta_bar, [1, 0, 0, 0])
    theta_star = solve_ideal_gains(worked_plant(), default_leader()).theta
    assert theta_star @ r.eta[0] == pytest.approx(3.0)
    z = regressor(0.0, np.zeros((3, 1)), np.zeros((3, 1)), np.zeros(3))
    assert not np.any(z.eta_bar) and z.eta.shape == (3, 4)
    with pytest.raises(DimensionMismatch):
        regressor(0.0, np.zeros((2, 1)), np.zeros((2, 2)), np.zeros(2))


def worked_plant():
    from netmrac.lti import TransferFunction
    return TransferFunction.from_coeffs([1, 5], [1, -5, 6])


def test_normalization_examples():
    assert normalization(np.ones(4), 0.0) == 1.0
    assert normalization([1.0, 1.0], 2.0) == 5.0
    with pytest.raises(ConfigInvalid):
        normalization([1.0], -1.0)


@given(st.lists(finite, min_size=1, max_size=20), st.floats(0, 1e3))
def test_normalization_at_least_one(v, mu):
    assert normalization(np.array(v), mu) >= 1.0


def _cfg(kind="gradient", **kw):
    kw.setdefault("q_scaling", "none")
    return TunerConfig(kind=kind, **kw)


def test_gradient_examples():
    st0 = TunerState.zeros("gradient", 1, 4)
    eta = np.array([[1.0, 0, 0, 0]])
    cfg = _cfg()
    assert not np.any(gradient_rhs(st0, [0.0], eta, cfg, [[1.0]]))
    np.testing.assert_array_equal(gradient_rhs(st0, [2.0], eta, cfg, [[1.0]]), [[-2, 0, 0, 0]])
    neg = _cfg(sign_kp=(-1,))
    np.testing.assert_array_equal(gradient_rhs(st0, [2.0], eta, neg, [[1.0]]), [[2, 0, 0, 0]])


@settings(max_examples=200, deadline=None)
@given(finite, st.lists(finite, min_size=4, max_size=4), st.floats(0.01, 10), st.booleans())
def test_gradient_scalar_closed_form(e, eta, gamma, neg):
    sign = -1.0 if neg else 1.0
    cfg = _cfg(gamma=gamma, sign_kp=(sign,))
    d = gradient_rhs(TunerState.zeros("gradient", 1, 4), [e], np.array([eta]), cfg, [[1.0]])
    np.testing.assert_allclose(d[0], -sign * gamma * e * np.array(eta), rtol=1e-12, atol=1e-300)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.data())
def test_sign_flip_is_odd(m, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    L = np.eye(m) - 0.1 * rng.random((m, m)) * (1 - np.eye(m))
    e, eta = rng.standard_normal(m), rng.standard_normal((m, 4))
    s = TunerState.zeros("gradient", m, 4)
    d1 = gradient_rhs(s, e, eta, _cfg(sign_kp=(1,) * m), L)
    d2 = gradient_rhs(s, e, eta, _cfg(sign_kp=(-1,) * m), L)
    np.testing.assert_array_equal(d1, -d2)


def test_gradient_uses_transposed_laplacian():
    L = np.array([[1.0, 0, 0], [-1, 1, 0], [0, -1, 1]])
    e = np.array([1.0, 2.0, 3.0])
    eta = np.ones((3, 4))
    d = gradient_rhs(TunerState.zeros("gradient", 3, 4), e, eta, _cfg(), L)
    np.testing.assert_allclose(d[:, 0], -(L.T @ e))


def test_ht1_examples():
    th = np.array([[1.0, 2, 3, 4]])
    st1 = TunerState("ht1", th, th.copy())
    dth, dxi = ht1_rhs(st1, [0.0], np.ones((1, 4)), _cfg("ht1", mu=1.0), [[1.0]])
    assert not np.any(dth) and not np.any(dxi)
    delta = np.array([[0.5, -1, 2, 0]])
    st2 = TunerState("ht1", th + delta, th)
    dth, dxi = ht1_rhs(st2, [0.0], np.ones((1, 4)), _cfg("ht1", beta=1.0, mu=0.0), [[1.0]])
    np.testing.assert_allclose(dth, -delta)
    assert not np.any(dxi)


def test_ht1_relaxes_exponentially_when_error_is_zero():
    cfg = _cfg("ht1", beta=2.0, mu=0.0)
    xi = np.array([[1.0, -1.0, 0.5, 2.0]])

    def f(t, th):
        return ht1_rhs(TunerState("ht1", th.reshape(1, 4), xi), [0.0], np.ones((1, 4)), cfg, [[1.0]])[0].ravel()

    th_end = rk4(f, np.zeros(4), 1e-3, 1000)
    np.testing.assert_allclose(th_end, xi[0] * (1 - np.exp(-2.0)), rtol=1e-10)


def test_ht1_gap_shrinks_with_beta():
    """With a frozen error the lag of theta behind xi scales like 1/beta."""
    e, eta, L = [0.3], np.array([[1.0, 0.5, -0.2, 0.8]]), [[1.0]]

    def lag(beta):
        cfg = _cfg("ht1", gamma=1.0, beta=beta, mu=0.0)

        def f(t, s):
            stt = TunerState("ht1", s[:4].reshape(1, 4), s[4:].reshape(1, 4))
            dth, dxi = ht1_rhs(stt, e, eta, cfg, L)
            return np.concatenate([dth.ravel(), dxi.ravel()])

        s = rk4(f, np.zeros(8), 1e-5, 10000)
        return np.linalg.norm(s[:4] - s[4:])

    ratio = lag(1e3) / lag(1e4)
    assert ratio >= 10.0 - 1e-6


def test_ht2_examples():
    z = np.zeros((1, 4))
    s0 = TunerState("ht2", z, z)
    d, dd = ht2_rhs(s0, [0.0], np.ones((1, 4)), _cfg("ht2"), [[1.0]])
    assert not np.any(d) and not np.any(dd)
    v = np.array([[1.0, -2, 0.5, 3]])
    d, dd = ht2_rhs(TunerState("ht2", z, v), [0.0], np.ones((1, 4)), _cfg("ht2", beta=3.0), [[1.0]])
    np.testing.assert_array_equal(d, v)
    np.testing.assert_allclose(dd, -3.0 * v)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.1, 10))
def test_ht2_forcing_shrinks_with_regressor(scale, mu):
    z = np.zeros((1, 4))
    s0 = TunerState("ht2", z, z)
    base = np.array([[1.0, 0.5, -0.5, 0.2]])
    cfg = _cfg("ht2", mu=mu)
    small = ht2_rhs(s0, [1.0], base, cfg, [[1.0]])[1] / base
    big = ht2_rhs(s0, [1.0], base * (1 + scale), cfg, [[1.0]])[1] / (base * (1 + scale))
    # per unit of regressor, the forcing is divided by a larger normalization
    assert np.all(np.abs(big) < np.abs(small))


def test_state_kind_mismatch():
    with pytest.raises(ConfigInvalid):
        gradient_rhs(TunerState.zeros("ht1", 1, 4), [0.0], np.ones((1, 4)), _cfg(), [[1.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 8))
def test_block_matrix_occupancy(m, p):
    rows = np.arange(1, m * p + 1, dtype=float).reshape(m, p)
    M = TunerState.block_matrix(rows)
    assert M.shape == (p * m, m)
    for i in range(m):
        np.testing.assert_array_equal(M[i * p:(i + 1) * p, i], rows[i])
        mask = np.ones(p * m, bool)
        mask[i * p:(i + 1) * p] = False
        assert not np.any(M[mask, i])


def test_block_sparsity_after_integration():
    traj = integrate(family_scenario("star", 3, "ht1", T=2.0))
    for k in range(0, len(traj), 50):
        M = TunerState.block_matrix(traj.theta[k])
        for i in range(3):
            off = np.delete(M[:, i], np.arange(i * 4, i * 4 + 4))
            assert np.all(off == 0.0)


def test_pack_unpack_round_trip():
    s = TunerState("ht2", np.arange(8.0).reshape(2, 4), -np.arange(8.0).reshape(2, 4))
    back = TunerState.unpack("ht2", s.pack(), 2, 4)
    np.testing.assert_array_equal(back.theta, s.theta)
    np.testing.assert_array_equal(back.aux, s.aux)


def test_tuner_config_validation():
    with pytest.raises(ConfigInvalid):
        TunerConfig(gamma=0.0)
    with pytest.raises(ConfigInvalid):
        TunerConfig(mu=-1.0)
    with pytest.raises(ConfigInvalid):
        TunerConfig(q_scaling=(2.0, 1.0))
    with pytest.raises(ConfigInvalid):
        TunerConfig(q_scaling="quadratic")
    cfg = TunerConfig(gamma=2.0, beta=3.0, q_scaling=(1.0, 2.0))
    g, b = cfg.agent_gains([1, 2, 3])
    np.testing.assert_array_equal(g, [2, 4, 4])
    np.testing.assert_array_equal(b, [3, 6, 6])
    np.testing.assert_array_equal(TunerConfig(q_scaling="exponential").multipliers([1, 2, 3]), [1, 2, 4])
    np.testing.assert_array_equal(TunerConfig(q_scaling="linear").multipliers([1, 2, 3]), [1, 2, 3])


def test_defaults_per_kind():
    assert TunerConfig.default("ht1").kind is TunerKind.HT1
    assert TunerConfig.default("ht2", gamma=3.0).gamma == 3.0


def test_mu_lower_bound_examples():
    assert mu_lower_bound(-np.eye(2), np.zeros((2, 1)), np.zeros((1, 2)), np.eye(2), 1, 1) == 0
    assert mu_lower_bound(-1.0, 1.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx(2.0)
    A, B, C = agent_augmented(realize_ccf(worked_plant()), solve_ideal_gains(worked_plant(), default_leader()),
                              FilterSpec.default_for(default_leader()))
    v = mu_lower_bound(A, B, C, np.eye(4), 1.0, 1.0)
    assert np.isfinite(v) and v > 0
    with pytest.raises(NotHurwitz):
        mu_lower_bound(np.eye(2), np.ones(2), np.ones(2), np.eye(2), 1, 1)


def test_certified_bound_scalar():
    # P = 1, Q = 2, B = 1: 4 * 1 * 1 / 2
    assert certified_mu_bound(np.eye(1), 2 * np.eye(1), np.ones((1, 1)), 1.0, 1.0) == pytest.approx(2.0)


def test_monitor_requires_gains():
    sc = family_scenario("star", 1, T=1.0, stride=100)
    lay = prepare(sc).layout
    with pytest.raises(MissingIdealGains):
        lyapunov_monitor(np.zeros((3, lay.size)), np.zeros((3, lay.size)), np.eye(4), None,
                         sc.tuner, lay)


def test_monitor_zero_on_matched_run():
    sc = family_scenario("star", 1, T=5.0, stride=10)
    pr = prepare(sc)
    tr = run_matched(sc, keep_states=True)
    rep = lyapunov_monitor(tr.states, tr.states, np.eye(4), pr.gains, sc.tuner, pr.layout)
    assert rep.max_V == 0.0 and rep.non_increasing


def _monitored(top, m, kind, gamma, beta, amplitude, noise):
    tuner = TunerConfig(kind, gamma, beta, 0.0, q_scaling="none")
    base = family_scenario(top, m, tuner, reference=ReferenceSpec("square", amplitude, 10.0), T=20.0,
                           stride=1, initial=InitialConditions(theta="ideal", theta_noise=noise))
    s, c, _ = mu_bounds(base)
    return energy_check(base.replace(tuner=TunerConfig(kind, gamma, beta, max(s, c), q_scaling="none")))


@pytest.mark.parametrize("top,m,kind,gamma,beta,amp,noise", [
    ("star", 1, "gradient", 1.0, 1.0, 10.0, 0.5),
    ("star", 3, "gradient", 1.0, 1.0, 10.0, 0.5),
    ("star", 1, "ht1", 1e-5, 0.1, 1.0, 0.05),
    ("star", 3, "ht1", 1e-5, 0.1, 1.0, 0.05),
    ("path", 3, "ht1", 1e-5, 0.1, 1.0, 0.05),
])
def test_energy_non_increasing(top, m, kind, gamma, beta, amp, noise):
    chk = _monitored(top, m, kind, gamma, beta, amp, noise)
    assert chk.report.max_V > 0
    assert chk.report.non_increasing, chk.report.relative_increase
    assert chk.mu_required >= chk.mu_structural > 0
