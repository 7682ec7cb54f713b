import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mces_oracles import assert_valid_mapping, small_graph
from specret import mces, smiles as sm, synthetic


@pytest.mark.parametrize("a, b, distance", [
    ("CCO", "CCO", 0),
    ("CCO", "CCCO", 1),
    ("CCO", "OCC", 0),
    ("C", "CC", 1),
    ("CC", "C=C", 2),
    ("c1ccccc1", "C1CCCCC1", 12),
    ("c1ccccc1", "c1ccccc1O", 1),
    ("CCN", "CCO", 2),
    ("C1CC1", "CCC", 1),
])
def test_known_distances(a, b, distance):
    assert mces.mces_distance(a, b) == distance
    assert mces.mces_bruteforce(a, b).distance == distance


def test_hydrogens_are_ignored():
    assert mces.mces_distance("[H]C([H])([H])C", "CC") == 0


@pytest.mark.parametrize("seed", range(60))
def test_branch_and_bound_agrees_with_brute_force(seed):
    rng = np.random.default_rng(seed)
    g1, g2 = small_graph(rng), small_graph(rng)
    exact = mces.mces_exact(g1, g2, check_bound=True)
    brute = mces.mces_bruteforce(g1, g2)
    assert exact.optimal
    assert exact.common_edge_count == brute.common_edge_count
    assert_valid_mapping(g1, g2, exact)
    assert_valid_mapping(g1, g2, brute)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_distance_axioms(seed):
    rng = np.random.default_rng(seed)
    g1 = synthetic.random_molecule(rng, max_atoms=12)
    g2 = synthetic.random_molecule(rng, max_atoms=12)
    e1, e2 = len(g1.bonds), len(g2.bonds)
    d12 = mces.mces_exact(g1, g2)
    assert d12.distance == mces.mces_exact(g2, g1).distance
    assert mces.mces_exact(g1, g1).distance == 0
    assert abs(e1 - e2) <= d12.distance <= e1 + e2
    assert d12.distance == e1 + e2 - 2 * d12.common_edge_count


def test_exhausted_budget_is_flagged_with_a_valid_bound():
    a = "CC(C)C1CCC(C)CC1C(C)CO"
    b = "CC(C)CC1CCC(CC)C(C)C1O"
    full = mces.mces_exact(a, b)
    cut = mces.mces_exact(a, b, node_budget=5)
    assert full.optimal and not cut.optimal
    assert cut.common_edge_count <= full.common_edge_count <= cut.upper_bound
    assert cut.nodes_expanded <= 5


def test_brute_force_refuses_large_graphs():
    with pytest.raises(mces.TooLarge):
        mces.mces_bruteforce("CCCCCCCCCCC", "CCCCCCCCCCC")


def test_batch_format():
    rows = [mces.mces_exact("CCO", "CCCO"), ValueError("bad")]
    lines = mces.format_batch(rows).splitlines()
    assert lines[0] == "distance\tcommon_edges\toptimal\tnodes_expanded"
    assert lines[1].split("\t")[:3] == ["1", "2", "1"]
    assert lines[2].startswith("error")


def test_medium_molecules_finish_optimally():
    a = sm.parse("CC(=O)Oc1ccccc1C(=O)O")
    b = sm.parse("CC(C)Cc1ccc(cc1)C(C)C(=O)O")
    res = mces.mces_exact(a, b)
    assert res.optimal
    assert_valid_mapping(a, b, res)
