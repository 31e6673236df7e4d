import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from hcm.simulate import (
    Affine,
    Aggregate,
    DomainError,
    Draw,
    Family,
    HierDataset,
    InvalidSpec,
    MechanismSpec,
    VariableSpec,
    interference_integral,
    sample_hcgm,
    sample_latents,
    spec_for,
    true_ate,
    true_effect_confounder,
    true_effect_instrument,
    true_effect_interference,
)


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


# ---------------------------------------------------------------- sampling


@pytest.mark.parametrize("motif,kw", [("confounder", {"omega": 0.2}), ("interference", {"rho": 0.5}),
                                      ("instrument", {"omega": 0.5})])
def test_sampling_is_deterministic(motif, kw):
    spec = spec_for(motif, **kw)
    a = sample_hcgm(spec, 20, 15, 3)
    b = sample_hcgm(spec, 20, 15, 3)
    c = sample_hcgm(spec, 20, 15, 4)
    for k in a.subunit:
        assert np.array_equal(a.subunit[k], b.subunit[k])
    for k in a.unit:
        assert np.array_equal(a.unit[k], b.unit[k])
    assert any(not np.array_equal(a.subunit[k], c.subunit[k]) for k in a.subunit)


def test_units_have_independent_streams():
    spec = spec_for("interference", rho=1.5)
    small = sample_hcgm(spec, 5, 10, 11)
    big = sample_hcgm(spec, 12, 10, 11)
    for k in small.subunit:
        assert np.array_equal(small.subunit[k], big.subunit[k][:5])
    for k in small.latents:
        assert np.array_equal(small.latents[k], big.latents[k][:5])


def test_shapes_and_visibility():
    d = sample_hcgm(spec_for("instrument", omega=0.2), 7, 4, 0)
    assert set(d.subunit) == {"Z", "A"} and set(d.unit) == {"Y"}
    assert d.subunit["A"].shape == (7, 4) and d.unit["Y"].shape == (7,)
    assert "U" in d.latents and d.latents["A"].shape == (7, 2)
    assert set(np.unique(d.subunit["A"])) <= {0, 1}


def test_subset():
    d = sample_hcgm(spec_for("confounder", omega=0.5), 6, 8, 1)
    s = d.subset(4, 3)
    assert s.subunit["Y"].shape == (4, 3)
    assert np.array_equal(s.subunit["Y"], d.subunit["Y"][:4, :3])
    with pytest.raises(ValueError):
        d.subset(7, 3)


def test_csv_round_trip(tmp_path):
    d = sample_hcgm(spec_for("interference", rho=0.5), 9, 6, 5)
    csv_path, side = d.to_csv(tmp_path / "d.csv")
    assert side.name == "d.csv.json"
    assert len(csv_path.read_text().splitlines()) == 9 * 6 + 1
    back = HierDataset.from_csv(csv_path)
    assert (back.n, back.m, back.seed) == (9, 6, 5)
    for k in d.subunit:
        assert np.array_equal(back.subunit[k], d.subunit[k])
    for k in d.unit:
        assert np.array_equal(back.unit[k], d.unit[k])


def test_csv_without_sidecar_infers_levels(tmp_path):
    d = sample_hcgm(spec_for("instrument", omega=0.2), 30, 5, 2)
    path, side = d.to_csv(tmp_path / "x.csv")
    side.unlink()
    back = HierDataset.from_csv(path)
    assert set(back.unit) == {"Y"} and set(back.subunit) == {"Z", "A"}


def test_csv_rejects_ragged(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("unit,subunit,A\n0,0,1\n0,1,0\n1,0,1\n")
    with pytest.raises(ValueError, match="rectangular"):
        HierDataset.from_csv(p)


def test_confounder_latent_means():
    # Q^a | U=0 ~ Beta(0.5, 1) has mean 1/3; with omega = 0 every unit has U = 0
    d = sample_hcgm(spec_for("confounder", omega=0.0), 4000, 1, 8)
    assert d.latents["A"][:, 0].mean() == pytest.approx(1 / 3, abs=0.02)
    # Q^{y|a}(1) | U=0 ~ Beta(2, 2)
    assert d.latents["Y"][:, 1].mean() == pytest.approx(0.5, abs=0.02)
    assert d.latents["Y"][:, 1].var() == pytest.approx(1 / 20, abs=0.005)


def test_sample_latents_matches_full_sampler():
    spec = spec_for("confounder", omega=0.2)
    full = sample_hcgm(spec, 2000, 1, 0).latents["Y"][:, 1]
    direct = sample_latents(spec, 2000, 1)["Y"][:, 1]
    assert stats.ks_2samp(full, direct).pvalue > 1e-3


def test_sample_latents_uses_limiting_aggregates():
    out = sample_latents(spec_for("interference", rho=0.0), 10, 0)
    assert out["Y"].shape == (10, 2) and set(np.unique(out["Z"])) <= {0.0, 1.0}


def test_sample_latents_matches_large_m_for_aggregates():
    spec = spec_for("instrument", omega=0.5)
    direct = sample_latents(spec, 3000, 4)
    full = sample_hcgm(spec, 3000, 400, 4)
    # E[Y] = 0.45 - 0.4 omega + 0.5 E[abar] in both routes
    assert direct["Y"].mean() == pytest.approx(full.unit["Y"].mean(), abs=0.04)


def test_aggregate_drives_interferer():
    d = sample_hcgm(spec_for("interference", rho=0.0), 3000, 50, 0)
    abar = d.subunit["A"].mean(axis=1)
    z = d.unit["Z"]
    assert abar[z == 1].mean() > abar[z == 0].mean() + 0.1


# ----------------------------------------------------------------- errors


@pytest.mark.parametrize("call", [
    lambda: spec_for("confounder", omega=1.5),
    lambda: spec_for("instrument", omega=-0.1),
    lambda: spec_for("interference", rho=math.inf),
    lambda: spec_for("mystery"),
    lambda: sample_hcgm(spec_for("confounder"), 0, 5, 0),
    lambda: true_effect_confounder(0.2, 2),
    lambda: true_effect_interference(0.0, 0.0),
    lambda: true_effect_instrument(0.0, 1.2),
    lambda: true_ate("mystery"),
])
def test_domain_errors(call):
    with pytest.raises(DomainError):
        call()


def test_invalid_specs():
    unit = VariableSpec("U", "unit", draw=Draw(Family.NORMAL, (Affine(0.0), Affine(1.0))))
    with pytest.raises(InvalidSpec, match="duplicate"):
        MechanismSpec("x", (unit, unit))
    with pytest.raises(InvalidSpec, match="undefined"):
        MechanismSpec("x", (VariableSpec("V", "unit", draw=Draw(Family.NORMAL, (
            Affine(0.0, ((1.0, ("W",)),)), Affine(1.0)))),))
    with pytest.raises(InvalidSpec, match="earlier subunit"):
        MechanismSpec("x", (VariableSpec("V", "unit", draw=Draw(Family.POINT_MASS, (Affine(0.0),)),
                                         aggregates=(Aggregate("m", "A"),)),))
    with pytest.raises(InvalidSpec, match="parameter"):
        Draw(Family.BETA, (Affine(1.0),))
    with pytest.raises(InvalidSpec, match="needs a latent"):
        MechanismSpec("x", (VariableSpec("A", "subunit"),))


def test_out_of_range_mean_is_caught_at_sampling():
    spec = MechanismSpec("x", (VariableSpec("A", "subunit", latent=Draw(Family.POINT_MASS, (Affine(1.5),))),))
    with pytest.raises(InvalidSpec, match="outside"):
        sample_hcgm(spec, 1, 1, 0)


# ---------------------------------------------------------------- oracles


def beta_mean(a, b):
    return a / (a + b)


@given(st.floats(0, 1))
def test_confounder_truth_by_hand(omega):
    # α^{y|a}(a, u) = 0.5 + 1.5a + 0.5u + 1.5au, β = 2
    m1 = (1 - omega) * beta_mean(2.0, 2) + omega * beta_mean(4.0, 2)
    m0 = (1 - omega) * beta_mean(0.5, 2) + omega * beta_mean(1.0, 2)
    assert true_effect_confounder(omega, 1) == pytest.approx(m1)
    assert true_ate("confounder", omega=omega) == pytest.approx(m1 - m0)


def test_confounder_truth_by_monte_carlo():
    spec = spec_for("confounder", omega=0.5)
    lat = sample_latents(spec, 20000, 3)["Y"]
    se = lat[:, 1].std() / math.sqrt(len(lat))
    assert abs(lat[:, 1].mean() - true_effect_confounder(0.5, 1)) < 4 * se


@pytest.mark.parametrize("rho", [0.0, 0.5, 1.5])
@pytest.mark.parametrize("a,z", [(0, 0), (1, 0), (0, 1), (1, 1)])
def test_interference_quadrature_rules_agree(rho, a, z):
    assert interference_integral(a, z, rho, "trapezoid") == pytest.approx(
        interference_integral(a, z, rho, "gauss-hermite"), abs=1e-8)


@pytest.mark.parametrize("rho", [0.0, 0.5, 1.5])
def test_interference_truth_by_monte_carlo(rho):
    # simulate the mechanism directly with a fixed soft intervention on q^a
    rng = np.random.default_rng(17)
    mu = 0.75
    n = 400_000
    u = rng.standard_normal(n)
    a = rng.random(n) < mu
    pz = sigmoid(2 * np.log(mu / (1 - mu)) - 0.8)
    z = rng.random(n) < pz
    lat = rng.normal(-rho + 0.5 * a + 2 * rho * z + 0.5 * u, 0.1)
    y = sigmoid(lat)
    se = y.std() / math.sqrt(n)
    assert abs(y.mean() - true_effect_interference(rho, mu)) < 4 * se


def test_instrument_truth_is_linear():
    assert true_effect_instrument(0.2, 0.75) == pytest.approx(0.45 - 0.08 + 0.375)
    for omega in (0.0, 0.2, 0.5):
        assert true_ate("instrument", omega=omega) == pytest.approx(0.25)
