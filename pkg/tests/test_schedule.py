import numpy as np
import pytest

from chainplan.schedule import (ConfigError, ScheduleError, build_linear_schedule,
                                ddim_mu, noise_forward)


def test_single_step_alpha_bar():
    s = build_linear_schedule(1, 0.02, 0.02)
    assert s.alpha_bar[1] == pytest.approx(0.98, abs=1e-15)


def test_alpha_bar_matches_direct_product():
    s = build_linear_schedule(500, 1e-4, 0.02)
    beta = np.linspace(1e-4, 0.02, 500)
    direct = 1.0
    for b in beta:
        direct *= 1.0 - b
    assert s.alpha_bar[-1] == pytest.approx(direct, rel=1e-12)
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_eta_zero_means_deterministic():
    s = build_linear_schedule(50, eta_ddim=0.0)
    assert np.all(s.sigma == 0.0)


def test_sigma_admissible():
    s = build_linear_schedule(200)
    assert np.all(s.sigma[1:] ** 2 <= 1.0 - s.alpha_bar[:-1] + 1e-15)


@pytest.mark.parametrize("bad", [dict(T=0), dict(beta_start=0.0),
                                 dict(beta_start=0.3, beta_end=0.2),
                                 dict(beta_end=1.0), dict(eta_ddim=2.0)])
def test_build_rejects_bad_parameters(bad):
    kwargs = dict(T=10, beta_start=1e-4, beta_end=0.02, eta_ddim=1.0)
    kwargs.update(bad)
    with pytest.raises(ConfigError):
        build_linear_schedule(**kwargs)


def test_noise_forward_t0_is_identity():
    s = build_linear_schedule(10)
    x0 = np.array([1.0, -2.0])
    np.testing.assert_array_equal(noise_forward(s, x0, 0, np.ones(2)), x0)


def test_noise_forward_zero_signal():
    s = build_linear_schedule(10)
    eps = np.array([0.5, -0.5])
    out = noise_forward(s, np.zeros(2), 7, eps)
    np.testing.assert_allclose(out, np.sqrt(1 - s.alpha_bar[7]) * eps)


def test_noise_forward_hand_value():
    # alpha_bar_t = 0.25, x0 = 1, eps = 2 -> 0.5 + sqrt(0.75)*2
    s = build_linear_schedule(10)
    t = int(np.argmin(np.abs(s.alpha_bar - 0.25)))
    ab = s.alpha_bar[t]
    out = noise_forward(s, np.array([1.0]), t, np.array([2.0]))
    assert out[0] == pytest.approx(np.sqrt(ab) + np.sqrt(1 - ab) * 2.0)


def test_noise_forward_t_out_of_range():
    s = build_linear_schedule(10)
    with pytest.raises(ScheduleError):
        noise_forward(s, np.zeros(2), 11, np.zeros(2))


def test_ddim_mu_zero_predicted_noise():
    s = build_linear_schedule(20)
    x0 = np.array([0.3, -1.2])
    t = 9
    x_t = np.sqrt(s.alpha_bar[t]) * x0
    np.testing.assert_allclose(ddim_mu(s, x_t, x0, t), np.sqrt(s.alpha_bar[t - 1]) * x0)


def test_ddim_mu_t1_collapses_to_estimate():
    s = build_linear_schedule(20, eta_ddim=0.0)
    x0 = np.array([0.7])
    np.testing.assert_allclose(ddim_mu(s, np.array([0.9]), x0, 1), x0)


def test_ddim_roundtrip_with_oracle_predictor():
    # sigma == 0 and an exact clean predictor: the reverse chain returns x0
    s = build_linear_schedule(500, eta_ddim=0.0)
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal(6)
    x = noise_forward(s, x0, s.T, rng.standard_normal(6))
    for t in range(s.T, 0, -1):
        x = ddim_mu(s, x, x0, t)
    assert np.abs(x - x0).max() < 1e-10


def test_subsample_includes_endpoints():
    s = build_linear_schedule(500)
    sub = s.subsample(50)
    assert sub.T == 50
    assert sub.timesteps[1] == 1 and sub.timesteps[-1] == 500
    assert np.all(np.diff(sub.alpha_bar) < 0)
    assert np.all(sub.sigma[1:] ** 2 <= 1.0 - sub.alpha_bar[:-1] + 1e-15)


def test_subsample_full_is_identity():
    s = build_linear_schedule(100)
    assert s.subsample(100) is s


def test_schedule_hash_distinguishes():
    a = build_linear_schedule(100)
    b = build_linear_schedule(101)
    assert a.hash() != b.hash()
    assert a.hash() == build_linear_schedule(100).hash()
