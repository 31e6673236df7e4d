import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcm.fixtures import load_fixture
from hcm.graph import (
    Admg,
    CycleDetected,
    DuplicateName,
    FlatGraph,
    HierGraph,
    IllegalMarginalization,
    MarginalizationRule,
    NotSubunit,
    UnknownVariable,
    bidirected_path_exists,
    can_marginalize,
    can_marginalize_flat,
    direct_subunit_ancestors,
    direct_unit_descendants,
    latent_projection,
    marginalize_endogenous,
    topological_sort,
    validate_hcm,
)


def names(g, ids):
    return {g.name_of(i) for i in ids}


@st.composite
def hier_graphs(draw, max_nodes=12):
    n = draw(st.integers(1, max_nodes))
    levels = draw(st.lists(st.sampled_from(["unit", "subunit"]), min_size=n, max_size=n))
    observed = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    vs = [(f"V{i}", levels[i], observed[i]) for i in range(n)]
    pairs = [(i, j) for j in range(n) for i in range(j)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    return HierGraph.build(vs, [(f"V{i}", f"V{j}") for i, j in chosen])


# ----------------------------------------------------------------- validate


def test_confounder_valid():
    g, _ = load_fixture("confounder")
    assert validate_hcm(g).valid


def test_back_edge_creates_cycle():
    g, _ = load_fixture("confounder")
    bad = HierGraph.build([(v.name, v.level, v.observed) for v in g.variables],
                          [("U", "A"), ("U", "Y"), ("A", "Y"), ("Y", "A")])
    with pytest.raises(CycleDetected) as err:
        validate_hcm(bad)
    assert set(err.value.path) >= {"A", "Y"}


def test_empty_graph_valid():
    assert validate_hcm(HierGraph()).valid


def test_duplicate_names_rejected():
    with pytest.raises(DuplicateName):
        HierGraph.build([("A", "unit", True), ("A", "subunit", True)])


def test_self_edge_reported_without_raising():
    g = HierGraph.build([("A", "unit", True)], [("A", "A")])
    report = validate_hcm(g, strict=False)
    assert not report.valid
    assert isinstance(report.violations[0], CycleDetected)


def test_every_level_pair_allowed():
    vs = [("u1", "unit", True), ("s1", "subunit", True), ("u2", "unit", True), ("s2", "subunit", True)]
    es = [("u1", "s1"), ("s1", "u2"), ("u2", "s2"), ("u1", "u2"), ("s1", "s2")]
    assert validate_hcm(HierGraph.build(vs, es)).valid


def test_topological_ties_follow_declaration():
    assert topological_sort(["c", "a", "b"], []) == ["c", "a", "b"]
    assert topological_sort(["c", "a", "b"], [("b", "c")]) == ["a", "b", "c"]


# -------------------------------------------------- subunit ancestry helpers


def test_direct_subunit_ancestors_fig_a2():
    g, _ = load_fixture("fig_a2")
    assert names(g, direct_subunit_ancestors(g, "X7")) == {"X1", "X3", "X4", "X5"}
    assert names(g, direct_subunit_ancestors(g, "X6")) == {"X2"}


def test_direct_subunit_ancestors_of_root_is_empty(confounder):
    g, _ = confounder
    assert direct_subunit_ancestors(g, "U") == set()


def test_direct_subunit_ancestors_unknown(confounder):
    g, _ = confounder
    with pytest.raises(UnknownVariable):
        direct_subunit_ancestors(g, "nope")


def test_direct_unit_descendants():
    g, _ = load_fixture("interference")
    assert names(g, direct_unit_descendants(g, "A")) == {"Z"}
    g2, _ = load_fixture("fig_a2")
    assert names(g2, direct_unit_descendants(g2, "X4")) == {"X7"}
    assert names(g2, direct_unit_descendants(g2, "X2")) == {"X6"}
    g3, _ = load_fixture("confounder")
    assert direct_unit_descendants(g3, "Y") == set()


def test_direct_unit_descendants_needs_subunit(confounder):
    g, _ = confounder
    with pytest.raises(NotSubunit):
        direct_unit_descendants(g, "U")


@given(hier_graphs())
def test_direct_subunit_ancestors_are_subunit_ancestors(g):
    for w in g.unit_ids:
        found = direct_subunit_ancestors(g, w)
        assert found <= g.ancestors(w)
        assert all(g.var(v).is_subunit for v in found)
        for v in found:
            assert w in direct_unit_descendants(g, v)


# ----------------------------------------------------- marginalization table


def _hcm(vs, es):
    return HierGraph.build([(n, lvl, True) for n, lvl in vs], es)


# (label, variables, edges, expected rule, edges after removing Y or None)
APP_B_CASES = [
    ("flat chain", [("X", "unit"), ("Y", "unit"), ("Z", "unit")],
     [("X", "Y"), ("Y", "Z")], MarginalizationRule.OK, {("X", "Z")}),
    ("subunit Y, subunit child", [("W", "unit"), ("X", "subunit"), ("Y", "subunit"), ("Z", "subunit")],
     [("X", "Y"), ("Y", "Z"), ("W", "Y"), ("X", "Z"), ("W", "Z")], MarginalizationRule.OK,
     {("X", "Z"), ("W", "Z")}),
    ("subunit Y, unit child", [("W", "unit"), ("X", "subunit"), ("Y", "subunit"), ("Z", "unit")],
     [("X", "Y"), ("Y", "Z"), ("W", "Y"), ("X", "Z"), ("W", "Z")], MarginalizationRule.OK,
     {("X", "Z"), ("W", "Z")}),
    ("unit Y, unit child", [("W", "unit"), ("X", "subunit"), ("Y", "unit"), ("Z", "unit")],
     [("X", "Y"), ("Y", "Z"), ("W", "Y"), ("X", "Z"), ("W", "Z")], MarginalizationRule.OK,
     {("X", "Z"), ("W", "Z")}),
    ("unit Y, subunit child, unit parent", [("W", "unit"), ("Y", "unit"), ("Z", "subunit")],
     [("W", "Y"), ("W", "Z"), ("Y", "Z")], MarginalizationRule.OK, {("W", "Z")}),
    ("unit Y, subunit child, subunit parent", [("X", "subunit"), ("Y", "unit"), ("Z", "subunit")],
     [("X", "Y"), ("Y", "Z"), ("X", "Z")], MarginalizationRule.INTERFERER, None),
    ("two children", [("X", "unit"), ("Y", "unit"), ("Z", "unit"), ("V", "unit")],
     [("X", "Y"), ("Y", "Z"), ("Y", "V")], MarginalizationRule.CONFOUNDER, None),
]


@pytest.mark.parametrize("label,vs,es,rule,after", APP_B_CASES, ids=[c[0] for c in APP_B_CASES])
def test_marginalization_table(label, vs, es, rule, after):
    g = _hcm(vs, es)
    check = can_marginalize(g, "Y")
    assert check.reason is rule
    assert check.allowed == (rule is MarginalizationRule.OK)
    if after is None:
        with pytest.raises(IllegalMarginalization) as err:
            marginalize_endogenous(g, "Y")
        assert err.value.reason is rule
    else:
        out = marginalize_endogenous(g, "Y")
        assert {(out.name_of(a), out.name_of(b)) for a, b in out.edges} == after


def test_leaf_removal():
    g = _hcm([("X", "unit"), ("Y", "subunit")], [("X", "Y")])
    out = marginalize_endogenous(g, "Y")
    assert [v.name for v in out.variables] == ["X"]
    assert not out.edges


def test_flat_rule_is_child_count():
    f = FlatGraph(("a", "b", "c"), frozenset({("a", "b"), ("a", "c")}))
    assert not can_marginalize_flat(f, "a")
    assert can_marginalize_flat(f, "b")


def _closure(g: HierGraph, keep):
    return {(g.name_of(a), g.name_of(b)) for a in keep for b in g.descendants(a) if b in keep}


@given(hier_graphs())
def test_marginalize_preserves_ancestry(g):
    for v in g.variables:
        if not can_marginalize(g, v.id):
            continue
        out = marginalize_endogenous(g, v.id)
        assert validate_hcm(out).valid
        keep = {x.id for x in g.variables if x.id != v.id}
        assert _closure(out, keep) == _closure(g, keep)


# -------------------------------------------------------- latent projection


def test_projection_of_collapsed_confounder():
    flat = FlatGraph(("U", "Qa", "Qya"), frozenset({("U", "Qa"), ("U", "Qya")}), frozenset({"U"}))
    admg = latent_projection(flat)
    assert admg.nodes == ("Qa", "Qya")
    assert not admg.directed
    assert admg.bidirected == {frozenset({"Qa", "Qya"})}


def test_projection_hidden_chain():
    flat = FlatGraph(("U1", "U2", "A", "B", "C"),
                     frozenset({("U1", "A"), ("U1", "B"), ("U2", "B"), ("U2", "C")}),
                     frozenset({"U1", "U2"}))
    admg = latent_projection(flat)
    assert admg.bidirected == {frozenset("AB"), frozenset("BC")}


def test_projection_through_hidden_mediator():
    flat = FlatGraph(("A", "H", "B"), frozenset({("A", "H"), ("H", "B")}), frozenset({"H"}))
    assert latent_projection(flat).directed == {("A", "B")}


@given(hier_graphs(max_nodes=9))
def test_projection_identity_without_hidden(g):
    flat = FlatGraph(tuple(v.name for v in g.variables),
                     frozenset((g.name_of(a), g.name_of(b)) for a, b in g.edges))
    admg = latent_projection(flat)
    assert admg.directed == flat.edges
    assert not admg.bidirected
    again = latent_projection(FlatGraph(admg.nodes, admg.directed))
    assert again.directed == admg.directed


def test_bidirected_path():
    admg = Admg(("A", "B", "C"), frozenset({("A", "C")}),
                frozenset({frozenset("AB"), frozenset("BC")}))
    assert bidirected_path_exists(admg, "A", {"C"})
    assert not bidirected_path_exists(Admg(("A", "C"), frozenset({("A", "C")}), frozenset()), "A", {"C"})
    with pytest.raises(UnknownVariable):
        bidirected_path_exists(admg, "A", {"Q"})


def test_bidirected_path_a4d_projection():
    from hcm.transform import augment, collapse
    g, _ = load_fixture("nonid_a4d")
    model = augment(collapse(g), ["Y"])
    admg = latent_projection(model.flat)
    # A <-> Q^{Y|W} <-> Q^{W}: the treatment reaches its child through confounding
    assert admg.bidirected == {frozenset({"A", "Q^{Y|W}"}), frozenset({"Q^{W}", "Q^{Y|W}"})}
    assert bidirected_path_exists(admg, "A", admg.children("A"))
    assert not bidirected_path_exists(admg, "Q^{Y}", {"A"})


def test_confounder_augmented_has_no_bidirected_path_to_child():
    from hcm.transform import augment, collapse
    g, _ = load_fixture("confounder")
    admg = latent_projection(augment(collapse(g), ["Y"]).flat)
    assert not bidirected_path_exists(admg, "Q^{A}", admg.children("Q^{A}"))


def test_districts_in_node_order():
    admg = Admg(tuple("abcd"), frozenset(), frozenset({frozenset("ac")}))
    assert admg.districts() == [frozenset("ac"), frozenset("b"), frozenset("d")]


def test_random_projection_bidirected_is_common_hidden_ancestor():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = 7
        nodes = [f"n{i}" for i in range(n)]
        es = {(nodes[i], nodes[j]) for j in range(n) for i in range(j) if rng.random() < 0.35}
        hidden = frozenset(nodes[i] for i in range(n) if rng.random() < 0.3)
        flat = FlatGraph(tuple(nodes), frozenset(es), hidden)
        admg = latent_projection(flat)
        for a, b in itertools.combinations(admg.nodes, 2):
            expect = False
            for h in hidden:
                reach = set()
                todo = [h]
                while todo:
                    x = todo.pop()
                    for c in flat.children(x):
                        if c in hidden:
                            todo.append(c)
                        reach.add(c)
                if a in reach and b in reach:
                    expect = True
            assert (frozenset((a, b)) in admg.bidirected) == expect
