import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcm.experiments import (
    Row,
    empirical_q,
    hierarchical_w1,
    read_rows,
    reproduce,
    run_cell,
    summarize,
    true_q,
    write_rows,
)
from hcm.simulate import sample_hcgm, spec_for, true_ate


def test_run_cell_rows():
    rows = run_cell("confounder", 0.2, 50, 4)
    assert [r.estimator for r in rows] == ["hcm", "regression"]
    assert all(r.setting == "omega=0.2" and r.size == 50 and r.seed == 4 for r in rows)
    assert all(r.truth == true_ate("confounder", omega=0.2) for r in rows)


def test_reproduce_order_independent_of_jobs():
    kw = dict(seeds=range(3), sizes=(10,), values=(0.0, 0.5))
    serial = reproduce("instrument", jobs=1, **kw)
    parallel = reproduce("instrument", jobs=2, **kw)
    key = lambda r: (r.setting, r.seed, r.estimator, repr(r.estimate), r.flags)
    assert [key(r) for r in serial] == [key(r) for r in parallel]
    assert [(r.setting, r.seed) for r in serial[::2]] == [
        (f"omega={v:g}", s) for v in (0.0, 0.5) for s in range(3)]


def test_rows_round_trip(tmp_path):
    rows = [Row("rho=0.5", 10, 1, "interference", 0.1 + 0.2, 0.49188, ""),
            Row("rho=0.5", 10, 2, "interference", math.nan, 0.49188, "DegenerateStratum")]
    back = read_rows(write_rows(rows, tmp_path / "r.csv"))
    assert back[0] == rows[0]
    assert math.isnan(back[1].estimate) and back[1].flags == "DegenerateStratum"


def test_summarize_by_hand():
    rows = [Row("s", 10, i, "e", x, 1.0) for i, x in enumerate([0.5, 1.5, 2.0, math.nan])]
    (s,) = summarize(rows)
    assert (s["runs"], s["failed"]) == (3, 1)
    assert s["mean"] == pytest.approx(4 / 3)
    assert s["sd"] == pytest.approx(np.std([0.5, 1.5, 2.0], ddof=1))
    assert s["se"] == pytest.approx(s["sd"] / math.sqrt(3))
    assert s["mae"] == pytest.approx((0.5 + 0.5 + 1.0) / 3)


# ------------------------------------------------------------ distances


def _brute_w1(ua, qa, ub, qb):
    n = len(qa)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        c = sum(0.5 * np.abs(qa[i] - qb[j]).sum() + np.abs(ua[i] - ub[j]).sum()
                for i, j in enumerate(perm))
        best = min(best, c / n)
    return best


@st.composite
def samples(draw):
    n = draw(st.integers(1, 5))
    seed = draw(st.integers(0, 2**16))
    rng = np.random.default_rng(seed)
    k = draw(st.integers(0, 2))
    return (rng.normal(size=(n, k)), rng.dirichlet(np.ones(4), size=n),
            rng.normal(size=(n, k)), rng.dirichlet(np.ones(4), size=n))


@settings(max_examples=40)
@given(samples())
def test_w1_matches_permutation_search(s):
    ua, qa, ub, qb = s
    assert hierarchical_w1(ua, qa, ub, qb) == pytest.approx(_brute_w1(ua, qa, ub, qb), abs=1e-12)
    assert hierarchical_w1(ua, qa, ua, qa) == pytest.approx(0.0, abs=1e-15)
    assert hierarchical_w1(ua, qa, ub, qb) == pytest.approx(hierarchical_w1(ub, qb, ua, qa))


def test_w1_size_mismatch():
    with pytest.raises(ValueError):
        hierarchical_w1(np.zeros((2, 0)), np.ones((2, 1)), np.zeros((3, 0)), np.ones((3, 1)))


def test_true_q_is_a_distribution_and_matches_frequencies():
    data = sample_hcgm(spec_for("confounder", omega=0.2), 30, 20_000, 9)
    q = true_q(data)
    assert q.shape == (30, 4)
    assert np.allclose(q.sum(axis=1), 1.0)
    emp = empirical_q(data)
    # each cell frequency has sd at most 0.5 / sqrt(m)
    assert np.max(np.abs(emp - q)) < 6 * 0.5 / math.sqrt(20_000)



def test_interference_rows_include_confounder_estimator():
    rows = run_cell("interference", 0.5, 30, 1)
    assert [r.estimator for r in rows] == ["hcm", "confounder", "regression"]
