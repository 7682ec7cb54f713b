"""Stage 2: fuse spectral states with pre-retrieved candidates, decode a
molecule, and re-rank the candidates by similarity to it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import encoders as enc
from . import smiles as sm
from .align import WidthMismatch, embed_spectra
from .encoders import HiddenSeq, ModelConfig
from .index import IndexConfig, RankedList, RetrievalLibrary, pre_retrieve
from .spectra import Spectrum
from .tensor import autograd as ag
from .tensor import nn
from .tensor.autograd import Tensor
from .tensor.params import ModelParams, OptimizerConfig, adamw_step

log = logging.getLogger(__name__)


class NoParseableGeneration(ValueError):
    pass


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 5
    max_length: int = 128

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_length < 2:
            raise ValueError("max_length must be >= 2")

    @classmethod
    def full(cls) -> "BeamConfig":
        return cls(beam_width=5, max_length=512)


@dataclass(frozen=True)
class GenConfig:
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    # fraction of training queries whose candidate order is shuffled before fusion
    shuffle_candidates: float = 0.0


# -- parameters ------------------------------------------------------------

def init_fusion(rng: np.random.Generator, cfg: ModelConfig) -> nn.Params:
    pb = nn.ParamBuilder(rng)
    pb.embedding("rank", cfg.max_rank, cfg.d)
    pb.params["sep"] = Tensor(rng.normal(0.0, 0.02, cfg.d))
    pb.attention("attn", cfg.d)
    return pb.params


def init_decoder(rng: np.random.Generator, cfg: ModelConfig) -> nn.Params:
    pb = nn.ParamBuilder(rng)
    pb.embedding("tok", cfg.vocab_size, cfg.d)
    for i in range(cfg.dec_layers):
        pb.decoder_block(f"layer{i}", cfg.d, cfg.ff)
    pb.layer_norm("final", cfg.d)
    pb.linear("out", cfg.d, cfg.vocab_size)
    return pb.params


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """All four parameter groups, seeded; nothing frozen yet."""
    rng = np.random.default_rng(seed)
    params = ModelParams()
    params.add_group("molecular_encoder", enc.init_molecular_encoder(rng, cfg))
    params.add_group("spectral_encoder", enc.init_spectral_encoder(rng, cfg))
    params.add_group("fusion", init_fusion(rng, cfg))
    params.add_group("decoder", init_decoder(rng, cfg))
    return params


# -- fusion ----------------------------------------------------------------

def candidate_bank(candidates: Sequence[Sequence[np.ndarray]], fusion: nn.Params,
                   cfg: ModelConfig) -> HiddenSeq:
    """Key/value bank per query: candidate token states in rank order, each
    row plus its rank embedding, with a separator row between candidates."""
    lengths = []
    for cands in candidates:
        if not cands:
            raise ValueError("at least one candidate is required")
        if len(cands) > cfg.max_rank:
            raise ValueError(f"{len(cands)} candidates exceeds max_rank={cfg.max_rank}")
        for h in cands:
            if h.shape[-1] != cfg.d:
                raise WidthMismatch(f"candidate width {h.shape[-1]} != {cfg.d}")
        lengths.append(sum(len(h) for h in cands) + len(cands) - 1)
    b, width = len(candidates), max(lengths)
    sep_row, pad_row = cfg.max_rank, cfg.max_rank + 1
    base = np.zeros((b, width, cfg.d))
    slot = np.full((b, width), pad_row, dtype=np.int64)
    valid = np.zeros((b, width), dtype=bool)
    for q, cands in enumerate(candidates):
        pos = 0
        for r, h in enumerate(cands):
            if r:
                slot[q, pos] = sep_row
                pos += 1
            base[q, pos:pos + len(h)] = h
            slot[q, pos:pos + len(h)] = r
            pos += len(h)
        valid[q, :pos] = True
    table = ag.concat([fusion["rank"], fusion["sep"].reshape(1, cfg.d),
                       Tensor(np.zeros((1, cfg.d)))], axis=0)
    return HiddenSeq(ag.embedding(table, slot) + base, valid)


def cross_fuse(spectral: HiddenSeq, candidates: Sequence[Sequence[np.ndarray]],
               fusion: nn.Params, cfg: ModelConfig) -> HiddenSeq:
    """Spectral rows attend over the candidate bank; output keeps the
    spectral length and mask."""
    if spectral.states.shape[-1] != cfg.d:
        raise WidthMismatch("spectral width does not match the model")
    bank = candidate_bank(candidates, fusion, cfg)
    out = nn.multi_head(spectral.states, bank.states, fusion, "attn", cfg.heads,
                        nn.key_padding_mask(bank.valid))
    return HiddenSeq(out, spectral.valid)


# -- decoder ---------------------------------------------------------------

def decoder_logits(ids: np.ndarray, memory: HiddenSeq, decoder: nn.Params,
                   cfg: ModelConfig) -> Tensor:
    """(B,T) prefix ids -> (B,T,V) next-token logits."""
    ids = np.asarray(ids, dtype=np.int64)
    t = ids.shape[1]
    if t > cfg.max_mol_tokens:
        raise enc.SequenceTooLong(f"{t} decoder positions exceeds {cfg.max_mol_tokens}")
    x = ag.embedding(decoder["tok"], ids) + nn.sinusoidal_positions(t, cfg.d)
    self_mask = nn.causal_mask(t)[None, None]
    mem_mask = nn.key_padding_mask(memory.valid)
    for i in range(cfg.dec_layers):
        x = nn.decoder_block(x, memory.states, decoder, f"layer{i}", cfg.heads, self_mask, mem_mask)
    return nn.linear(nn.norm(x, decoder, "final"), decoder, "out")


def teacher_forced_nll(memory: HiddenSeq, targets: Sequence[Sequence[int]],
                       decoder: nn.Params, cfg: ModelConfig) -> Tensor:
    """Mean next-token NLL over all non-pad target positions.

    Each target must start with BOS and end with EOS.
    """
    for seq in targets:
        if len(seq) < 2 or seq[0] != sm.VOCAB.bos_id or seq[-1] != sm.VOCAB.eos_id:
            raise ValueError("targets must be wrapped in BOS ... EOS")
        if len(seq) > cfg.max_mol_tokens:
            raise enc.SequenceTooLong(f"target of {len(seq)} tokens exceeds {cfg.max_mol_tokens}")
    ids, _ = enc.pad_tokens(targets, sm.VOCAB.pad_id)
    logits = decoder_logits(ids[:, :-1], memory, decoder, cfg)
    return ag.cross_entropy(logits, ids[:, 1:], pad_id=sm.VOCAB.pad_id)


def beam_search(step_logprobs: Callable[[list[list[int]]], np.ndarray], bos: int, eos: int,
                beam_width: int, max_length: int) -> list[tuple[list[int], float]]:
    """Beam search over a next-token log-probability function.

    Every returned sequence starts with `bos` and ends with `eos` unless it hit
    `max_length`. Finished hypotheses leave the beam and shrink it, so at most
    `beam_width` sequences come back, sorted by summed log-probability.
    """
    alive: list[tuple[list[int], float]] = [([bos], 0.0)]
    finished: list[tuple[list[int], float]] = []
    while alive and len(finished) < beam_width:
        lp = np.asarray(step_logprobs([seq for seq, _ in alive]), dtype=np.float64)
        total = np.array([score for _, score in alive])[:, None] + lp
        flat = total.reshape(-1)
        slots = beam_width - len(finished)
        # stable sort keeps ties in (parent, token) order
        order = np.argsort(-flat, kind="stable")[:slots]
        nxt = []
        for j in order:
            parent, tok = divmod(int(j), lp.shape[1])
            seq = alive[parent][0] + [tok]
            score = alive[parent][1] + float(lp[parent, tok])
            if tok == eos or len(seq) >= max_length:
                finished.append((seq, score))
            else:
                nxt.append((seq, score))
        alive = nxt
    finished.sort(key=lambda item: -item[1])
    return finished


def greedy_decode(step_logprobs: Callable[[list[list[int]]], np.ndarray], bos: int, eos: int,
                  max_length: int) -> tuple[list[int], float]:
    seq, score = [bos], 0.0
    while True:
        lp = np.asarray(step_logprobs([seq]))[0]
        tok = int(np.argmax(lp))
        seq.append(tok)
        score += float(lp[tok])
        if tok == eos or len(seq) >= max_length:
            return seq, score


def decoder_step_fn(memory: HiddenSeq, decoder: nn.Params, cfg: ModelConfig):
    """Closure mapping prefixes to last-position log-probabilities for one query."""
    states = memory.states.data
    valid = memory.valid

    def step(prefixes: list[list[int]]) -> np.ndarray:
        n = len(prefixes)
        mem = HiddenSeq(Tensor(np.repeat(states, n, axis=0)), np.repeat(valid, n, axis=0))
        with ag.no_grad():
            logits = decoder_logits(np.array(prefixes), mem, decoder, cfg).data[:, -1, :]
        z = logits - logits.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    return step


def beam_generate(memory: HiddenSeq, decoder: nn.Params, cfg: ModelConfig,
                  beam: BeamConfig = BeamConfig()) -> list[tuple[list[int], float]]:
    """Beams for a single fused query, best first."""
    if memory.states.shape[0] != 1:
        raise ValueError("beam_generate expects a single query")
    step = decoder_step_fn(memory, decoder, cfg)
    return beam_search(step, sm.VOCAB.bos_id, sm.VOCAB.eos_id, beam.beam_width, beam.max_length)


def beam_text(seq: Sequence[int]) -> str:
    inner = [t for t in seq if t not in (sm.VOCAB.bos_id, sm.VOCAB.eos_id, sm.VOCAB.pad_id)]
    return sm.detokenize(inner)


def first_parseable(beams: Sequence[tuple[list[int], float]]) -> sm.MoleculeRecord:
    for seq, _ in beams:
        text = beam_text(seq)
        if not text:
            continue
        try:
            return sm.MoleculeRecord.from_smiles(text)
        except (sm.SmilesError, KeyError, ValueError):
            continue
    raise NoParseableGeneration("no beam decodes to a valid molecule")


def rerank(generated: sm.MoleculeRecord, candidates: RankedList, lib: RetrievalLibrary,
           params: ModelParams, cfg: ModelConfig) -> RankedList:
    """Reorder the same candidate ids by cosine to the generated molecule."""
    lib.check_params(params)
    with ag.no_grad():
        _, emb = enc.encode_molecule(generated.canonical_smiles, params["molecular_encoder"], cfg)
    return lib.rank(emb.data, candidates.ids)


# -- training --------------------------------------------------------------

@dataclass
class GenResult:
    params: ModelParams
    curve: list[tuple[int, float]] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)


def spectral_states(spectra: Sequence[Spectrum], params: ModelParams,
                    cfg: ModelConfig) -> list[np.ndarray]:
    out = []
    with ag.no_grad():
        for k in range(0, len(spectra), 64):
            hidden, _ = enc.encode_spectra(spectra[k:k + 64], params["spectral_encoder"], cfg)
            out += [hidden.row(b) for b in range(hidden.states.shape[0])]
    return out


def stack_rows(rows: Sequence[np.ndarray], d: int) -> HiddenSeq:
    width = max(len(r) for r in rows)
    data = np.zeros((len(rows), width, d))
    valid = np.zeros((len(rows), width), dtype=bool)
    for b, r in enumerate(rows):
        data[b, :len(r)] = r
        valid[b, :len(r)] = True
    return HiddenSeq(Tensor(data), valid)


def train_gen(pairs: Sequence[tuple[Spectrum, sm.MoleculeRecord]], lib: RetrievalLibrary,
              params: ModelParams, model_cfg: ModelConfig, index_cfg: IndexConfig,
              cfg: GenConfig = GenConfig(), opt: OptimizerConfig = OptimizerConfig()) -> GenResult:
    """Train fusion and decoder with both encoders frozen.

    Candidates for each training spectrum come from stage-1 pre-retrieval
    over `lib`.
    """
    params.set_frozen("molecular_encoder", True)
    params.set_frozen("spectral_encoder", True)
    params.set_frozen("fusion", False)
    params.set_frozen("decoder", False)
    params.reset_optimizer()
    spectra = [s for s, _ in pairs]
    queries = embed_spectra(spectra, params, model_cfg)
    ranked = [pre_retrieve(s, lib, params, model_cfg, index_cfg, q) for s, q in zip(spectra, queries)]
    spec_rows = spectral_states(spectra, params, model_cfg)
    targets = [sm.encode_for_model(m.canonical_smiles) for _, m in pairs]
    rng = np.random.default_rng(cfg.seed)
    result = GenResult(params)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for k in range(0, len(order), cfg.batch_size):
            idx = order[k:k + cfg.batch_size]
            cand_ids = []
            for i in idx:
                ids = ranked[i].ids
                if rng.random() < cfg.shuffle_candidates:
                    ids = list(rng.permutation(ids))
                cand_ids.append(ids)
            cands = [lib.hidden_states(ids, params, model_cfg) for ids in cand_ids]
            fused = cross_fuse(stack_rows([spec_rows[i] for i in idx], model_cfg.d), cands,
                               params["fusion"], model_cfg)
            loss = teacher_forced_nll(fused, [targets[i] for i in idx], params["decoder"], model_cfg)
            params.zero_grad()
            ag.backward(loss)
            params.discard_frozen_grads()
            adamw_step(params, opt)
            step += 1
            result.curve.append((step, loss.item()))
            losses.append(loss.item())
        result.epoch_loss.append(float(np.mean(losses)) if losses else float("nan"))
        log.info("gen epoch %d nll %.4f", epoch, result.epoch_loss[-1])
    return result


# -- inference -------------------------------------------------------------

@dataclass
class QueryOutput:
    identifier: str
    generated_smiles: str | None
    beams: list[tuple[str, float]]
    ranking: RankedList
    fallback_used: bool

    def to_json(self, lib: RetrievalLibrary) -> dict:
        return {
            "identifier": self.identifier,
            "generated_smiles": self.generated_smiles,
            "beams": [{"smiles": s, "logprob": lp} for s, lp in self.beams],
            "ranking": [{"canonical_smiles": lib.records[i].canonical_smiles, "score": sc}
                        for i, sc in self.ranking.entries],
            "fallback_used": self.fallback_used,
        }


def generate_for(spectrum: Spectrum, fuse_ids: Sequence[int], lib: RetrievalLibrary,
                 params: ModelParams, cfg: ModelConfig, beam: BeamConfig):
    """Fuse with the given candidate ids and beam-decode."""
    rows = spectral_states([spectrum], params, cfg)
    cands = [lib.hidden_states(list(fuse_ids), params, cfg)]
    with ag.no_grad():
        fused = cross_fuse(stack_rows(rows, cfg.d), cands, params["fusion"], cfg)
    fused = HiddenSeq(Tensor(fused.states.data), fused.valid)
    return beam_generate(fused, params["decoder"], cfg, beam)


def retrieve_one(spectrum: Spectrum, lib: RetrievalLibrary, params: ModelParams,
                 cfg: ModelConfig, index_cfg: IndexConfig, beam: BeamConfig,
                 generative: bool = True, without_pre_retrieval: bool = False,
                 rng: np.random.Generator | None = None) -> QueryOutput:
    """Full two-stage inference for one spectrum.

    `without_pre_retrieval` fuses against K randomly chosen filtered candidates
    and re-ranks the whole filtered set.
    """
    ident = spectrum.metadata.identifier
    if without_pre_retrieval:
        rng = rng if rng is not None else np.random.default_rng(0)
        pool = lib.candidates_for(spectrum, index_cfg)
        full = lib.rank(embed_spectra([spectrum], params, cfg)[0], pool)
        fuse_ids = list(rng.permutation(pool)[:index_cfg.k])
        ranked = full
    else:
        ranked = pre_retrieve(spectrum, lib, params, cfg, index_cfg)
        fuse_ids = ranked.ids
    if not generative:
        return QueryOutput(ident, None, [], ranked, False)
    beams = generate_for(spectrum, fuse_ids, lib, params, cfg, beam)
    texts = [(beam_text(seq), lp) for seq, lp in beams]
    try:
        gen = first_parseable(beams)
    except NoParseableGeneration:
        return QueryOutput(ident, None, texts, ranked, True)
    return QueryOutput(ident, gen.canonical_smiles, texts, rerank(gen, ranked, lib, params, cfg), False)
