import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beam_oracles import TINY, TwoStepStub, exhaustive_paths, log_softmax, pruned_paths, random_decoder
from specret import genret, smiles as sm, spectra as sp, synthetic
from specret.encoders import HiddenSeq
from specret.index import IndexConfig, RetrievalLibrary
from specret.tensor import autograd as ag
from specret.tensor.params import OptimizerConfig

BOS, EOS = sm.VOCAB.bos_id, sm.VOCAB.eos_id


@pytest.mark.parametrize("seed", range(20))
def test_full_width_beam_equals_exhaustive_enumeration(seed):
    stub = TwoStepStub(np.random.default_rng(seed))
    want = sorted(exhaustive_paths(stub, eos=1), key=lambda p: -p[1])
    got = genret.beam_search(stub, 0, 1, beam_width=len(want), max_length=3)
    assert [s for s, _ in got] == [s for s, _ in want]
    assert [v for _, v in got] == [v for _, v in want]


@pytest.mark.parametrize("seed, width", list(itertools.product(range(10), range(1, 8))))
def test_narrow_beam_matches_pruned_enumeration(seed, width):
    stub = TwoStepStub(np.random.default_rng(100 + seed))
    want = pruned_paths(stub, 1, width)
    got = genret.beam_search(stub, 0, 1, beam_width=width, max_length=3)
    assert got == [(s, v) for s, v in want]


def test_beam_scores_are_sums_of_step_logprobs():
    stub = TwoStepStub(np.random.default_rng(5))
    lookup = {tuple(s): v for s, v in exhaustive_paths(stub, 1)}
    for seq, score in genret.beam_search(stub, 0, 1, 3, 3):
        assert score == lookup[tuple(seq)]


@pytest.mark.parametrize("seed", range(100))
def test_width_one_beam_is_greedy(seed):
    step = random_decoder(seed)
    greedy = genret.greedy_decode(step, BOS, EOS, 12)
    beams = genret.beam_search(step, BOS, EOS, 1, 12)
    assert len(beams) == 1
    assert beams[0][0] == greedy[0]
    assert beams[0][1] == pytest.approx(greedy[1], abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(2, 6))
def test_beams_are_sorted_bounded_and_terminated(seed, width, max_length):
    stub = TwoStepStub(np.random.default_rng(seed), vocab=5)
    beams = genret.beam_search(lambda p: stub(p) if len(p) < 3 else stub.second[[q[-1] for q in p]],
                               0, 1, width, max_length)
    assert 1 <= len(beams) <= width
    scores = [v for _, v in beams]
    assert scores == sorted(scores, reverse=True)
    for seq, _ in beams:
        assert seq[0] == 0 and (seq[-1] == 1 or len(seq) == max_length)
        assert 1 not in seq[1:-1]


def test_decoder_is_causal():
    rng = np.random.default_rng(0)
    decoder = genret.init_decoder(rng, TINY)
    memory = HiddenSeq(ag.Tensor(rng.normal(size=(1, 4, TINY.d))), np.ones((1, 4), dtype=bool))
    a = np.array([[BOS, 7, 8, 9]])
    b = np.array([[BOS, 7, 12, 5]])
    la = genret.decoder_logits(a, memory, decoder, TINY).data
    lb = genret.decoder_logits(b, memory, decoder, TINY).data
    assert np.allclose(la[:, :2], lb[:, :2])
    assert not np.allclose(la[:, 2:], lb[:, 2:])


def test_teacher_forced_nll_matches_manual_sum():
    rng = np.random.default_rng(1)
    decoder = genret.init_decoder(rng, TINY)
    memory = HiddenSeq(ag.Tensor(rng.normal(size=(2, 3, TINY.d))), np.array([[1, 1, 1], [1, 1, 0]], bool))
    targets = [sm.encode_for_model("CCO"), sm.encode_for_model("C=O")]
    nll = genret.teacher_forced_nll(memory, targets, decoder, TINY).item()
    total, count = 0.0, 0
    for q, seq in enumerate(targets):
        one = HiddenSeq(ag.Tensor(memory.states.data[q:q + 1]), memory.valid[q:q + 1])
        lp = log_softmax(genret.decoder_logits(np.array([seq[:-1]]), one, decoder, TINY).data[0])
        total -= sum(lp[i, t] for i, t in enumerate(seq[1:]))
        count += len(seq) - 1
    assert nll == pytest.approx(total / count, abs=1e-10)


def test_targets_must_be_wrapped():
    memory = HiddenSeq(ag.Tensor(np.zeros((1, 2, TINY.d))), np.ones((1, 2), bool))
    decoder = genret.init_decoder(np.random.default_rng(0), TINY)
    with pytest.raises(ValueError):
        genret.teacher_forced_nll(memory, [sm.tokenize("CC")], decoder, TINY)


def _states(rng, lengths):
    return [rng.normal(size=(n, TINY.d)) for n in lengths]


def test_candidate_bank_layout():
    rng = np.random.default_rng(2)
    fusion = genret.init_fusion(rng, TINY)
    cands = [_states(rng, [2, 3]), _states(rng, [1])]
    bank = genret.candidate_bank(cands, fusion, TINY)
    assert bank.states.shape == (2, 6, TINY.d)
    assert bank.valid.tolist() == [[True] * 6, [True] + [False] * 5]
    rank = fusion["rank"].data
    assert np.allclose(bank.states.data[0, 0], cands[0][0][0] + rank[0])
    assert np.allclose(bank.states.data[0, 2], fusion["sep"].data)
    assert np.allclose(bank.states.data[0, 3], cands[0][1][0] + rank[1])


def test_fusion_ignores_padding_and_depends_on_candidate_order():
    rng = np.random.default_rng(3)
    fusion = genret.init_fusion(rng, TINY)
    spectral = HiddenSeq(ag.Tensor(rng.normal(size=(1, 3, TINY.d))), np.ones((1, 3), bool))
    a, b = _states(rng, [2, 4])
    alone = genret.cross_fuse(spectral, [[a, b]], fusion, TINY).states.data
    both = HiddenSeq(ag.Tensor(np.repeat(spectral.states.data, 2, axis=0)), np.ones((2, 3), bool))
    batched = genret.cross_fuse(both, [[a, b], [a]], fusion, TINY).states.data
    assert np.allclose(batched[0], alone[0])
    swapped = genret.cross_fuse(spectral, [[b, a]], fusion, TINY).states.data
    assert not np.allclose(swapped, alone)


def test_too_many_candidates_rejected():
    rng = np.random.default_rng(0)
    fusion = genret.init_fusion(rng, TINY)
    with pytest.raises(ValueError):
        genret.candidate_bank([_states(rng, [1] * (TINY.max_rank + 1))], fusion, TINY)


def test_first_parseable_skips_invalid_beams():
    beams = [(sm.encode_for_model("C1CC"), -1.0), ([BOS, EOS], -1.5), (sm.encode_for_model("CCO"), -2.0)]
    assert genret.first_parseable(beams).canonical_smiles == sm.canonical_smiles("CCO")
    with pytest.raises(genret.NoParseableGeneration):
        genret.first_parseable(beams[:2])


@pytest.fixture(scope="module")
def small_world():
    recs = [sm.MoleculeRecord.from_smiles(s) for s in synthetic.molecule_corpus(30, seed=5)]
    pairs = [(sp.synth_fragment_spectrum(r, f"g{i}"), r) for i, r in enumerate(recs)]
    params = genret.init_params(TINY, 0)
    lib = RetrievalLibrary.build(recs, params, TINY)
    return pairs, params, lib


def test_generative_training_freezes_both_encoders(small_world):
    pairs, params, lib = small_world
    params = params.copy()
    before = {g: params.checksum(g) for g in params.groups}
    res = genret.train_gen(pairs[:12], lib, params, TINY, IndexConfig(k=5, mode="all"),
                           genret.GenConfig(epochs=2, batch_size=6), OptimizerConfig(learning_rate=1e-3))
    assert len(res.curve) == 4
    after = {g: params.checksum(g) for g in params.groups}
    assert after["molecular_encoder"] == before["molecular_encoder"]
    assert after["spectral_encoder"] == before["spectral_encoder"]
    assert after["decoder"] != before["decoder"] and after["fusion"] != before["fusion"]


def test_retrieval_output_keeps_candidate_set(small_world):
    pairs, params, lib = small_world
    cfg = IndexConfig(k=6, mode="all")
    beam = genret.BeamConfig(beam_width=3, max_length=16)
    spectrum = pairs[0][0]
    pre = genret.retrieve_one(spectrum, lib, params, TINY, cfg, beam, generative=False)
    full = genret.retrieve_one(spectrum, lib, params, TINY, cfg, beam)
    assert len(pre.ranking.ids) == 6
    assert sorted(full.ranking.ids) == sorted(pre.ranking.ids)
    if full.fallback_used:
        assert full.ranking == pre.ranking and full.generated_smiles is None
    record = full.to_json(lib)
    assert set(record) == {"identifier", "generated_smiles", "beams", "ranking", "fallback_used"}
    nopre = genret.retrieve_one(spectrum, lib, params, TINY, cfg, beam, without_pre_retrieval=True,
                                rng=np.random.default_rng(0))
    assert len(nopre.ranking.ids) == len(lib.records)


def test_beam_config_presets():
    assert genret.BeamConfig() == genret.BeamConfig(beam_width=5, max_length=128)
    assert genret.BeamConfig.full() == genret.BeamConfig(beam_width=5, max_length=512)
    with pytest.raises(ValueError):
        genret.BeamConfig(beam_width=0)
