import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpus import smiles_corpus
from specret import smiles as sm
from specret import synthetic

CORPUS = smiles_corpus()


@pytest.mark.parametrize("text", CORPUS)
def test_tokens_round_trip(text):
    ids = sm.tokenize(text)
    assert sm.detokenize(ids) == text
    assert "".join(sm.tokenize_text(text)) == text


def test_two_letter_halogens_are_single_tokens():
    assert sm.tokenize_text("ClCBr") == ["Cl", "C", "Br"]
    assert sm.tokenize_text("[NH4+]") == ["[", "N", "H", "4", "+", "]"]


def test_model_encoding_wraps_with_bos_and_eos():
    ids = sm.encode_for_model("CCO")
    assert ids[0] == sm.VOCAB.bos_id and ids[-1] == sm.VOCAB.eos_id
    assert sm.detokenize(ids) == "CCO"


@pytest.mark.parametrize("bad, error", [
    ("", sm.SmilesSyntaxError),
    ("C%C", sm.UnknownCharacter),
    ("C1CC", sm.UnclosedRing),
    ("CC(C", sm.UnclosedBranch),
    ("C(C)(C)(C)(C)C", sm.ValenceOverflow),
    ("C[C@H](O)N", sm.SmilesError),
])
def test_malformed_input_raises(bad, error):
    with pytest.raises(error):
        sm.canonical_smiles(bad)


def test_unknown_character_reports_position():
    with pytest.raises(sm.UnknownCharacter) as info:
        sm.tokenize_text("CC$")
    assert info.value.position == 2 and info.value.char == "$"


@pytest.mark.parametrize("text", CORPUS)
def test_canonicalization_is_idempotent(text):
    canon = sm.canonical_smiles(text)
    assert sm.canonical_smiles(canon) == canon


@pytest.mark.parametrize("text", CORPUS)
def test_canonical_form_preserves_composition(text):
    g = sm.parse(text)
    h = sm.parse(sm.canonical_smiles(text))
    assert sm.molecular_formula(g) == sm.molecular_formula(h)
    assert sorted(b.order for b in g.bonds) == sorted(b.order for b in h.bonds)


@pytest.mark.parametrize("seed", range(len(CORPUS)))
def test_canonicalization_ignores_atom_order(seed):
    text = CORPUS[seed]
    g = sm.parse(text)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        order = rng.permutation(g.num_atoms)
        assert sm.canonicalize(g.permute(order)) == sm.canonicalize(g)


@pytest.mark.parametrize("a, b", [
    ("OCC", "CCO"),
    ("C1=CC=CC=C1", "C=1C=CC=CC=1"),
    ("OC(=O)C", "CC(O)=O"),
    ("C(C)(C)C", "CC(C)C"),
    ("O.CCO", "CCO.O"),
    ("c1ccc(O)cc1", "Oc1ccccc1"),
])
def test_equivalent_spellings_share_one_canonical_form(a, b):
    assert sm.canonical_smiles(a) == sm.canonical_smiles(b)


def test_distinct_molecules_have_distinct_canonical_forms():
    pairs = [("CCO", "COC"), ("CC(C)O", "CCCO"), ("c1ccncc1", "c1cnccc1C"), ("C1CC1C", "C1CCC1")]
    for a, b in pairs:
        assert sm.canonical_smiles(a) != sm.canonical_smiles(b)


def test_implicit_hydrogens():
    assert sm.parse("CCO").hydrogens == (3, 2, 1)
    assert sm.parse("c1ccccc1").hydrogens == (1,) * 6
    assert sm.parse("C=O").hydrogens == (2, 0)
    assert sm.parse("[NH4+]").hydrogens == (4,)


# reference masses computed from IUPAC monoisotopic atomic masses
@pytest.mark.parametrize("text, formula, mass", [
    ("CCO", "C2H6O", 46.041864812),
    ("CN1C=NC2=C1C(=O)N(C(=O)N2C)C", "C8H10N4O2", 194.080375584),
    ("c1ccccc1", "C6H6", 78.046950192),
    ("ClC(Cl)Cl", "CHCl3", 117.914383),
])
def test_formula_and_mass(text, formula, mass):
    rec = sm.MoleculeRecord.from_smiles(text)
    assert rec.formula_text == formula
    assert rec.parent_mass == pytest.approx(mass, abs=1e-5)
    assert sm.parse_formula(formula) == rec.formula


def test_fingerprint_is_invariant_to_atom_order():
    g = sm.parse("CC(=O)Oc1ccccc1C(=O)O")
    rng = np.random.default_rng(0)
    ref = sm.morgan_fingerprint(g, 2, 1024)
    for _ in range(5):
        perm = g.permute(rng.permutation(g.num_atoms))
        assert np.array_equal(sm.morgan_fingerprint(perm, 2, 1024), ref)


def test_fingerprint_hex_round_trip():
    fp = sm.morgan_fingerprint(sm.parse("CCN(CC)CC"), 2, 256)
    assert np.array_equal(sm.fingerprint_from_hex(sm.fingerprint_to_hex(fp), 256), fp)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_random_graphs_canonicalize_consistently(seed):
    rng = np.random.default_rng(seed)
    g = synthetic.random_molecule(rng)
    text = sm.canonicalize(g)
    again = sm.parse(text)
    assert sm.canonicalize(again) == text
    assert sm.canonicalize(g.permute(rng.permutation(g.num_atoms))) == text
    assert sm.molecular_formula(again) == sm.molecular_formula(g)
