import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specret import encoders as enc, smiles as sm, spectra as sp, synthetic
from specret.encoders import ModelConfig
from specret.genret import init_params

TINY = ModelConfig(d=16, heads=2, mol_layers=2, spec_layers=2, dec_layers=1, max_mol_tokens=40, max_peaks=12)


@pytest.fixture(scope="module")
def params():
    return init_params(TINY, 0)


def test_molecular_shapes(params):
    hidden, emb = enc.encode_molecule("CC(=O)O", params["molecular_encoder"], TINY)
    n = len(sm.tokenize("CC(=O)O"))
    assert hidden.states.shape == (1, n + 1, TINY.d)
    assert emb.shape == (TINY.d,)
    assert np.array_equal(emb.data, hidden.states.data[0, 0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_padding_does_not_leak_into_molecules(params, seed):
    smiles = synthetic.molecule_corpus(3, seed=seed % 1000)
    toks = [sm.tokenize(s) for s in smiles]
    p = params["molecular_encoder"]
    hidden, emb = enc.encode_molecules(toks, p, TINY)
    for b, t in enumerate(toks):
        h1, e1 = enc.encode_molecules([t], p, TINY)
        assert np.allclose(emb.data[b], e1.data[0], atol=1e-10)
        assert np.allclose(hidden.row(b), h1.row(0), atol=1e-10)


def _peaks(rng, n):
    mzs = np.sort(rng.uniform(10, 500, n))
    return sp.normalize_intensities(zip(mzs, rng.uniform(0.05, 1, n)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_spectral_embedding_ignores_peak_order(params, seed):
    rng = np.random.default_rng(seed)
    spec = _peaks(rng, int(rng.integers(1, TINY.max_peaks + 1)))
    p = params["spectral_encoder"]
    feats, valid = enc.spectrum_features([spec], TINY)
    order = rng.permutation(feats.shape[1])
    _, a = enc.encode_peak_features(feats, valid, p, TINY)
    _, b = enc.encode_peak_features(feats[:, order], valid[:, order], p, TINY)
    assert np.allclose(a.data, b.data, atol=1e-12)


def test_spectral_padding_and_shapes(params):
    rng = np.random.default_rng(4)
    short, long = _peaks(rng, 3), _peaks(rng, 9)
    p = params["spectral_encoder"]
    hidden, emb = enc.encode_spectra([short, long], p, TINY)
    assert hidden.states.shape == (2, 9, TINY.d) and emb.shape == (2, TINY.d)
    assert hidden.valid.sum(axis=1).tolist() == [3, 9]
    _, alone = enc.encode_spectrum(short, p, TINY)
    assert np.allclose(alone.data, emb.data[0], atol=1e-12)


def test_fresh_spectral_embeddings_are_small(params):
    _, emb = enc.encode_spectrum(_peaks(np.random.default_rng(0), 5), params["spectral_encoder"], TINY)
    # the output norm gain bounds every coordinate
    assert np.linalg.norm(emb.data) <= TINY.spec_output_gain * np.sqrt(TINY.d) * 1.001


def test_input_limits(params):
    with pytest.raises(enc.SequenceTooLong):
        enc.encode_molecule("C" * 40, params["molecular_encoder"], TINY)
    enc.encode_molecule("C" * 39, params["molecular_encoder"], TINY)
    with pytest.raises(enc.TooManyPeaks):
        enc.encode_spectrum(_peaks(np.random.default_rng(1), 13), params["spectral_encoder"], TINY)
    raw = sp.Spectrum((sp.Peak(10.0, 0.5), sp.Peak(20.0, 0.25)), sp.SpectrumMetadata())
    with pytest.raises(enc.NotNormalized):
        enc.encode_spectrum(raw, params["spectral_encoder"], TINY)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(mol_layers=0)
    with pytest.raises(ValueError):
        ModelConfig(spec_output_gain=0.0)
    big = ModelConfig.full()
    assert (big.d, big.mol_layers, big.spec_layers, big.dec_layers, big.max_peaks) == (256, 4, 6, 4, 61)
