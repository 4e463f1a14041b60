import numpy as np
import pytest
from hypothesis import given, strategies as st

from socis import rng
from socis.benchmarks import ShellProblem, bm_interval_mfet_exact, shell_committor_exact
from socis.costs import FeedbackPolicy
from socis.errors import InvalidArgument, NoValidSamples, NumericalBlowup
from socis.sde import (CHUNK_SIZE, ControlSign, ExitStatus, PathBatch, SdeModel, StopDomain,
                       reweighted_expectation, sample_batch, simulate_until_exit)

from conftest import OVERSHOOT

BM1 = SdeModel.brownian(1, 1.0)
INTERVAL = StopDomain.interval(-1.0, 1.0)


def shell2():
    p = ShellProblem(2, 5.0, 10.0)
    return p, p.model(), p.domain()


def bounded_policy(p, bound=0.5):
    pe = ShellProblem(p.dim, p.R1, p.R2, p.sigma, 0.1)
    from socis.benchmarks import shell_optimal_control
    return FeedbackPolicy(lambda x: shell_optimal_control(pe, x), bound)


def test_zero_policy_gives_zero_log_lr():
    b = sample_batch(BM1, INTERVAL, FeedbackPolicy.zero(1), ControlSign.PLUS, [0.3], 0.01,
                     10 ** 5, 200, 1)
    assert np.all(b.log_lr == 0.0)
    assert np.all(b.run_cost_u2 == 0.0)
    b2 = sample_batch(BM1, INTERVAL, None, ControlSign.MINUS, [0.3], 0.01, 10 ** 5, 200, 1)
    np.testing.assert_array_equal(b.n_steps, b2.n_steps)


def test_tau_is_steps_times_dt():
    b = sample_batch(BM1, INTERVAL, None, ControlSign.PLUS, [0.0], 0.003, 10 ** 5, 100, 2)
    np.testing.assert_array_equal(b.tau, b.n_steps * 0.003)


def test_censoring_flag_and_cap():
    b = sample_batch(BM1, INTERVAL, None, ControlSign.PLUS, [0.0], 0.001, 300, 500, 3)
    cens = b.exit == ExitStatus.CENSORED
    assert cens.any() and (~cens).any()
    assert np.all(b.n_steps[cens] == 300)
    assert np.all(b.n_steps[~cens] <= 300)
    assert b.censored_fraction == cens.mean()


def test_single_path_matches_batch_member():
    key = int(rng.path_keys(42, [0])[0])
    one = simulate_until_exit(BM1, INTERVAL, None, ControlSign.PLUS, [0.2], 0.01, 10 ** 5, key)
    b = sample_batch(BM1, INTERVAL, None, ControlSign.PLUS, [0.2], 0.01, 10 ** 5, 1, 42)
    assert len(b) == 1
    two = b[0]
    for f in ("exit", "tau", "run_cost_f", "run_cost_u2", "log_lr", "martingale", "n_steps"):
        assert getattr(one, f) == getattr(two, f)
    np.testing.assert_array_equal(one.x_final, two.x_final)


def test_batch_bitwise_deterministic_across_threads():
    p, m, d = shell2()
    x0 = np.array([7.5, 0.0])
    pol = bounded_policy(p)
    n = CHUNK_SIZE + 300
    runs = [sample_batch(m, d, pol, ControlSign.PLUS, x0, 0.05, 10 ** 5, n, 9, threads=t)
            for t in (1, 1, 3)]
    for r in runs[1:]:
        for f in ("exit", "n_steps", "x_final", "run_cost_u2", "log_lr"):
            np.testing.assert_array_equal(getattr(runs[0], f), getattr(r, f))


def test_stopping_correctness():
    p, m, d = shell2()
    b = sample_batch(m, d, None, ControlSign.PLUS, [7.5, 0.0], 0.05, 10 ** 5, 50, 4)
    assert np.all(np.isin(d.classify(b.x_final), [ExitStatus.HIT_A, ExitStatus.HIT_B]))
    keys = rng.path_keys(4, np.arange(50))
    for i in range(0, 50, 7):
        # replay one step short: the state before exit must be interior
        short = simulate_until_exit(m, d, None, ControlSign.PLUS, [7.5, 0.0], 0.05,
                                    int(b.n_steps[i]) - 1, int(keys[i]))
        assert short.exit == ExitStatus.CENSORED
        assert d.classify(short.x_final[None])[0] == ExitStatus.INTERIOR


def test_blowup_raises_and_is_flagged():
    bad = SdeModel(1, drift=lambda x: np.full_like(x, np.inf))
    with pytest.raises(NumericalBlowup) as info:
        simulate_until_exit(bad, INTERVAL, None, ControlSign.PLUS, [0.0], 0.1, 100, 1)
    assert info.value.step == 1
    b = sample_batch(bad, INTERVAL, None, ControlSign.PLUS, [0.0], 0.1, 100, 5, 1)
    assert np.all(b.exit == ExitStatus.BLOWUP)
    assert b.blowup_fraction == 1.0
    assert np.all(np.isfinite(b.x_final))


def test_invalid_arguments():
    with pytest.raises(InvalidArgument):
        simulate_until_exit(BM1, INTERVAL, None, ControlSign.PLUS, [0.0], 0.0, 10, 1)
    with pytest.raises(InvalidArgument):
        simulate_until_exit(BM1, INTERVAL, None, ControlSign.PLUS, [0.0], 0.1, 0, 1)
    with pytest.raises(InvalidArgument):
        simulate_until_exit(BM1, INTERVAL, None, ControlSign.PLUS, [2.0], 0.1, 10, 1)
    with pytest.raises(InvalidArgument):
        sample_batch(BM1, INTERVAL, None, ControlSign.PLUS, [0.0], 0.1, 10, 0, 1)


def test_no_valid_samples():
    b = sample_batch(BM1, INTERVAL, None, ControlSign.PLUS, [0.0], 1e-4, 2, 10, 1)
    with pytest.raises(NoValidSamples):
        reweighted_expectation(b, lambda s: np.ones(len(s)))


def test_shell_classification_is_exclusive():
    d = StopDomain.shell(5.0, 10.0)
    x = np.array([[4.0, 0], [5.0, 0], [7.0, 0], [10.0, 0], [0, 11.0]])
    np.testing.assert_array_equal(d.classify(x), [1, 1, 0, 2, 2])
    h = StopDomain.half_lines(-1.5, 1.5).classify(np.array([[-2.0], [0.0], [1.5]]))
    np.testing.assert_array_equal(h, [1, 0, 2])


@given(st.floats(-2, 2), st.floats(0.5, 8))
def test_gradient_drift_matches_potential(x, beta):
    V = lambda y: 0.5 * (y[:, 0] ** 2 - 1) ** 2  # noqa: E731
    m = SdeModel.gradient(lambda y: 2 * y * (y ** 2 - 1), beta, 1, V)
    h = 1e-6
    fd = (V(np.array([[x + h]])) - V(np.array([[x - h]]))) / (2 * h)
    got = m.drift_at(np.array([[x]]))[0, 0]
    assert abs(got + fd[0]) <= 1e-5 * max(1.0, abs(fd[0]))
    assert np.isclose(m.sigma_at(np.array([[x]]))[0, 0, 0], np.sqrt(2 / beta))


def test_bm_mean_exit_time():
    # discretely monitored exits overshoot; the effective interval widens by
    # OVERSHOOT * sqrt(dt) on each side
    dt = 1e-4
    b = sample_batch(BM1, INTERVAL, None, ControlSign.PLUS, [0.0], dt, 10 ** 6, 1000, 5)
    m, se = b.tau.mean(), b.tau.std(ddof=1) / np.sqrt(len(b))
    shifted = bm_interval_mfet_exact(-1 - OVERSHOOT * dt ** 0.5, 1 + OVERSHOOT * dt ** 0.5, 0.0)
    assert abs(m - shifted) < 3 * se
    assert abs(m - 1.0) < 3 * se + (shifted - 1.0)


def test_shell_hit_fraction_d2():
    p, m, d = shell2()
    b = sample_batch(m, d, None, ControlSign.PLUS, [7.5, 0.0], 0.005, 10 ** 6, 10000, 6)
    h = np.mean(b.exit == ExitStatus.HIT_B)
    se = np.sqrt(h * (1 - h) / len(b))
    assert abs(h - np.log(1.5) / np.log(2)) < 3 * se


def test_reweighting_identities_d2():
    p, m, d = shell2()
    pol = bounded_policy(p)
    b = sample_batch(m, d, pol, ControlSign.PLUS, [7.5, 0.0], 0.01, 10 ** 6, 3000, 7)
    est, se = reweighted_expectation(b, lambda s: (s.exit == ExitStatus.HIT_B).astype(float))
    assert abs(est - shell_committor_exact(p, 7.5)) < 3 * se + 0.005
    one, se1 = reweighted_expectation(b, lambda s: np.ones(len(s)))
    assert abs(one - 1.0) < 3 * se1
    zero = sample_batch(m, d, None, ControlSign.PLUS, [7.5, 0.0], 0.01, 10 ** 6, 200, 7)
    e0, _ = reweighted_expectation(zero, lambda s: (s.exit == ExitStatus.HIT_B).astype(float))
    assert e0 == np.mean(zero.exit == ExitStatus.HIT_B)


def test_path_batch_roundtrip():
    b = sample_batch(BM1, INTERVAL, None, ControlSign.PLUS, [0.0], 0.01, 10 ** 5, 20, 8)
    back = PathBatch.from_paths(list(b), dt=0.01)
    np.testing.assert_array_equal(back.n_steps, b.n_steps)
    np.testing.assert_array_equal(back.x_final, b.x_final)
    sub = b[b.n_steps > 50]
    assert len(sub) == int(np.sum(b.n_steps > 50))
