import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loss_oracle import scalar_pre_loss
from specret import align, smiles as sm, spectra as sp, synthetic
from specret.encoders import ModelConfig
from specret.genret import init_params
from specret.tensor import autograd as ag
from specret.tensor.params import OptimizerConfig

TINY = ModelConfig(d=16, heads=2, mol_layers=1, spec_layers=1, dec_layers=1)


def _fixture(rng, b=2, d=5, n=1, m=1, scale=1.0):
    mol = rng.normal(size=(b, d)) * scale
    spec = rng.normal(size=(b, d)) * scale
    neg = rng.normal(size=(b, n, d)) * scale
    idx = align.sample_in_batch_negatives(b, m, rng)
    return mol, spec, neg, idx


@pytest.mark.parametrize("seed", range(10))
def test_loss_matches_scalar_reference(seed):
    rng = np.random.default_rng(seed)
    mol, spec, neg, idx = _fixture(rng, b=3, n=2, m=2)
    got = [t.item() for t in align.pre_loss(mol, spec, neg, idx, 0.1)]
    want = scalar_pre_loss(mol, spec, neg, idx, 0.1)
    assert got == pytest.approx(want, abs=1e-10)


def test_loss_is_mean_of_directions():
    rng = np.random.default_rng(3)
    mol, spec, neg, idx = _fixture(rng)
    pre, a, b = align.pre_loss(mol, spec, neg, idx, 0.1)
    assert pre.item() == pytest.approx(0.5 * (a.item() + b.item()), abs=1e-15)


def test_identical_logits_give_log_of_candidate_count():
    mol = np.zeros((2, 4))
    spec = np.ones((2, 4))
    neg = np.ones((2, 3, 4))
    idx = np.array([[1], [0]])
    pre, ms2mol, mol2ms = align.pre_loss(mol, spec, neg, idx, 0.1)
    assert mol2ms.item() == pytest.approx(math.log(4))
    assert ms2mol.item() == pytest.approx(math.log(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0), st.sampled_from([0, 1]))
def test_rescaling_one_side_and_temperature_leaves_loss_unchanged(seed, c, side):
    rng = np.random.default_rng(seed)
    mol, spec, neg, idx = _fixture(rng, b=4, n=2, m=2, scale=0.3)
    base = align.pre_loss(mol, spec, neg, idx, 0.1)[0].item()
    if side == 0:
        mol = mol * c
    else:
        spec, neg = spec * c, neg * c
    scaled = align.pre_loss(mol, spec, neg, idx, 0.1 * c)[0].item()
    assert scaled == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_shifting_one_modality_changes_loss():
    rng = np.random.default_rng(1)
    mol, spec, neg, idx = _fixture(rng, b=4)
    base = align.pre_loss(mol, spec, neg, idx, 0.1)[0].item()
    shifted = align.pre_loss(mol + 1.0, spec, neg, idx, 0.1)[0].item()
    assert shifted != pytest.approx(base)


def test_cosine_option_is_scale_free():
    rng = np.random.default_rng(2)
    mol, spec, neg, idx = _fixture(rng, b=4)
    a = align.pre_loss(mol, spec, neg, idx, 0.1, normalize=True)[0].item()
    b = align.pre_loss(mol * 7, spec * 0.2, neg * 0.2, idx, 0.1, normalize=True)[0].item()
    assert a == pytest.approx(b, rel=1e-9)


def test_width_mismatch_and_tiny_batches_rejected():
    with pytest.raises(align.WidthMismatch):
        align.info_nce(ag.Tensor(np.zeros((2, 3))), ag.Tensor(np.zeros((2, 4))), ag.Tensor(np.zeros((2, 1, 3))), 0.1)
    with pytest.raises(align.BatchTooSmall):
        align.pre_loss(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 1, 3)), np.zeros((1, 1), int), 0.1)
    with pytest.raises(align.BatchTooSmall):
        align.sample_in_batch_negatives(1, 1, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.data())
def test_in_batch_negatives_exclude_self_and_repeat_nothing(b, data):
    m = data.draw(st.integers(1, b - 1))
    idx = align.sample_in_batch_negatives(b, m, np.random.default_rng(data.draw(st.integers(0, 999))))
    assert idx.shape == (b, m)
    for i, row in enumerate(idx):
        assert i not in row and len(set(row)) == m


def test_config_validation():
    with pytest.raises(ValueError):
        align.ContrastiveConfig(tau=0)
    with pytest.raises(ValueError):
        align.ContrastiveConfig(m_mol_negatives=32, batch_size=32)
    with pytest.raises(ValueError):
        align.ContrastiveConfig(n_spec_negatives=0)


def _pairs(count, seed=11):
    recs = [sm.MoleculeRecord.from_smiles(s) for s in synthetic.molecule_corpus(count, seed=seed)]
    return [(sp.synth_fragment_spectrum(r, f"q{i}"), r) for i, r in enumerate(recs)]


def test_zero_epochs_leave_everything_untouched():
    params = init_params(TINY, 0)
    before = {g: params.checksum(g) for g in params.groups}
    res = align.train_align(_pairs(8), params, TINY, align.ContrastiveConfig(epochs=0, batch_size=4))
    assert res.curve == []
    assert {g: params.checksum(g) for g in params.groups} == before


def test_training_updates_only_the_spectral_encoder():
    params = init_params(TINY, 0)
    before = {g: params.checksum(g) for g in params.groups}
    align.train_align(_pairs(12), params, TINY, align.ContrastiveConfig(epochs=2, batch_size=4))
    after = {g: params.checksum(g) for g in params.groups}
    assert after["spectral_encoder"] != before["spectral_encoder"]
    for g in ("molecular_encoder", "decoder", "fusion"):
        assert after[g] == before[g]


def test_training_is_deterministic_per_seed():
    runs = []
    for _ in range(2):
        params = init_params(TINY, 4)
        res = align.train_align(_pairs(10), params, TINY, align.ContrastiveConfig(epochs=2, batch_size=5, seed=9))
        runs.append((params.checksum("spectral_encoder"), res.curve))
    assert runs[0] == runs[1]


def test_two_hundred_steps_halve_the_loss():
    pairs = _pairs(50)
    cfg = ModelConfig(d=32, heads=4, mol_layers=1, spec_layers=1, dec_layers=1)
    params = init_params(cfg, 0)
    res = align.train_align(pairs, params, cfg, align.ContrastiveConfig(epochs=100, batch_size=25),
                            OptimizerConfig(learning_rate=1e-3))
    assert len(res.curve) == 200
    assert res.epoch_loss[-1] <= 0.5 * res.epoch_loss[0]


def test_loss_csv_has_four_columns():
    text = align.format_loss_csv([(1, 0.5, 0.25, 0.375)])
    lines = text.strip().splitlines()
    assert lines[0] == "step,loss_ms2mol,loss_mol2ms,loss_pre"
    assert lines[1].split(",")[0] == "1"
