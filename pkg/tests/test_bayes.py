import json
import math

import numpy as np
import pytest

from hcm.bayes import (
    Chains,
    DivergentChain,
    HierNormalModel,
    NotConverged,
    SchoolSummary,
    load_schools,
    log_posterior,
    mh_sample,
    posterior_ate,
    rhat,
    summary_json,
)


def batch_se(x, batches=50):
    """Monte Carlo standard error of a pooled mean via per-chain batch means."""
    x = np.asarray(x)
    size = x.shape[1] // batches
    means = x[:, : size * batches].reshape(x.shape[0], batches, size).mean(axis=2).ravel()
    return means.std(ddof=1) / math.sqrt(means.size)


def test_bundled_data():
    s = load_schools()
    assert [x.name for x in s] == list("ABCDEFGH")
    assert [x.mu_hat for x in s] == [28, 8, -3, 7, -1, 1, 18, 12]
    assert [x.sigma for x in s] == [15, 10, 16, 11, 9, 11, 10, 18]


def test_load_from_path(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("school,mu_hat,sigma\nX,1.5,2\n")
    assert load_schools(p) == [SchoolSummary("X", 1.5, 2.0)]


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        SchoolSummary("bad", 0.0, 0.0)


def test_log_posterior_jacobian():
    m = HierNormalModel()
    y, sig = np.array([1.0]), np.array([2.0])
    a = log_posterior(m, y, sig, 0.0, math.log(3.0), np.array([0.5]))
    b = log_posterior(m, y, sig, 0.0, math.log(6.0), np.array([0.5]))
    # by hand: half-Cauchy(5) density times τ, normal terms
    def by_hand(tau):
        return (-0.5 * math.log(2 * math.pi * 25) + math.log(2 / (math.pi * 5)) - math.log1p((tau / 5) ** 2)
                + math.log(tau) - 0.5 * (0.5 / tau) ** 2 - math.log(tau) - 0.5 * math.log(2 * math.pi)
                - 0.5 * ((1 - 0.5) / 2) ** 2 - math.log(2) - 0.5 * math.log(2 * math.pi))
    assert a == pytest.approx(by_hand(3.0))
    assert b == pytest.approx(by_hand(6.0))


def test_rhat_properties():
    rng = np.random.default_rng(0)
    assert rhat(rng.normal(size=(4, 2000))) == pytest.approx(1.0, abs=0.01)
    assert rhat(np.ones((4, 100))) == 1.0
    shifted = rng.normal(size=(4, 500)) + np.arange(4)[:, None] * 5
    assert rhat(shifted) > 2
    with pytest.raises(ValueError):
        rhat(np.zeros((2, 3)))


def test_posterior_ate_refuses_unconverged():
    rng = np.random.default_rng(1)
    draws = {"nu": rng.normal(size=(4, 400)) + np.arange(4)[:, None] * 10}
    with pytest.raises(NotConverged):
        posterior_ate(Chains(draws, {}, {}, 0))


def test_divergent_chain_raised():
    # a handful of iterations and no burn-in cannot mix from dispersed starts
    with pytest.raises(DivergentChain) as err:
        mh_sample(load_schools(), iterations=20, burn_in=0, chains=4, seed=0)
    assert max(err.value.rhats.values()) > 1.1


def test_argument_checks():
    with pytest.raises(ValueError):
        mh_sample(load_schools(), chains=1)
    with pytest.raises(ValueError):
        mh_sample(load_schools(), iterations=2)


def test_seed_determinism():
    a = mh_sample(load_schools(), iterations=500, burn_in=200, seed=5, check=False)
    b = mh_sample(load_schools(), iterations=500, burn_in=200, seed=5, check=False)
    c = mh_sample(load_schools(), iterations=500, burn_in=200, seed=6, check=False)
    assert np.array_equal(a.draws["nu"], b.draws["nu"])
    assert not np.array_equal(a.draws["nu"], c.draws["nu"])


def test_precise_schools_pin_the_mean():
    s = [SchoolSummary(str(i), 3.0, 0.01) for i in range(8)]
    c = mh_sample(s, iterations=10_000, seed=1)
    assert posterior_ate(c)["mean"] == pytest.approx(3.0, abs=0.05)
    for i in range(8):
        assert c.draws[f"mu[{i}]"].mean() == pytest.approx(3.0, abs=0.05)


def test_uninformative_school_returns_prior():
    c = mh_sample([SchoolSummary("A", 50.0, 1e4)], iterations=20_000, seed=1)
    post = posterior_ate(c)
    assert post["mean"] == pytest.approx(0.0, abs=0.3)
    assert post["sd"] == pytest.approx(5.0, rel=0.05)


def test_prior_only():
    c = mh_sample([], iterations=20_000, seed=3)
    assert c.draws["nu"].mean() == pytest.approx(0.0, abs=4 * batch_se(c.draws["nu"]))
    assert c.draws["nu"].std() == pytest.approx(5.0, rel=0.05)
    # half-Cauchy(5) has median 5
    assert np.median(c.draws["tau"]) == pytest.approx(5.0, rel=0.08)


def test_conjugate_fixed_tau():
    tau = 4.0
    schools = load_schools()
    y = np.array([s.mu_hat for s in schools])
    var = np.array([s.sigma for s in schools]) ** 2 + tau ** 2
    prec = 1 / 25 + np.sum(1 / var)
    mean, sd = np.sum(y / var) / prec, prec ** -0.5
    c = mh_sample(schools, HierNormalModel(tau_fixed=tau), iterations=50_000, seed=2)
    nu = c.draws["nu"]
    assert abs(nu.mean() - mean) < 3 * batch_se(nu)
    assert nu.std() == pytest.approx(sd, rel=0.05)
    assert "tau" not in c.rhats and np.all(c.draws["tau"] == tau)


def test_summary_json_and_csv(tmp_path):
    c = mh_sample(load_schools(), iterations=400, burn_in=200, seed=0, check=False)
    body = json.loads(summary_json(c))
    assert set(body) >= {"nu", "tau", "mu[A]", "_acceptance", "_seed"}
    path = c.to_csv(tmp_path / "ch.csv", thin=10)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:4] == ["chain", "iteration", "nu", "tau"]
    assert len(lines) == 1 + 4 * 40


def test_acceptance_tuned_toward_target():
    c = mh_sample(load_schools(), iterations=5000, seed=0)
    for k, v in c.acceptance.items():
        assert 0.15 < v < 0.5, k
