"""Molecular (SMILES transformer, CLS readout) and spectral (peak-set
transformer, mean pooling) encoders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import smiles as sm
from .spectra import Spectrum
from .tensor import autograd as ag
from .tensor import nn
from .tensor.autograd import Tensor


class SequenceTooLong(ValueError):
    pass


class TooManyPeaks(ValueError):
    pass


class NotNormalized(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    heads: int = 4
    mol_layers: int = 4
    spec_layers: int = 6
    dec_layers: int = 4
    ff_mult: int = 4
    max_mol_tokens: int = 512
    max_peaks: int = 61
    mz_scale: float = 1e-3
    max_rank: int = 64
    # initial gain of the spectral encoder's output norm; keeps the first
    # dot-product logits near zero so contrastive training starts unsaturated
    spec_output_gain: float = 0.005
    vocab_size: int = len(sm.VOCAB)

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError("d must be divisible by heads")
        for name in ("d", "heads", "mol_layers", "spec_layers", "dec_layers",
                     "max_mol_tokens", "max_peaks", "vocab_size", "max_rank"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.spec_output_gain > 0:
            raise ValueError("spec_output_gain must be positive")

    @classmethod
    def full(cls) -> "ModelConfig":
        """Full-size dimensions (width 256; 4/6/4 layers; 61 peaks)."""
        return cls(d=256, heads=8, mol_layers=4, spec_layers=6, dec_layers=4)

    @property
    def ff(self) -> int:
        return self.ff_mult * self.d


@dataclass
class HiddenSeq:
    """Token states (B,T,d) with a (B,T) validity mask."""

    states: Tensor
    valid: np.ndarray

    def row(self, b: int) -> np.ndarray:
        return self.states.data[b, self.valid[b]]


def init_molecular_encoder(rng: np.random.Generator, cfg: ModelConfig) -> nn.Params:
    pb = nn.ParamBuilder(rng)
    pb.embedding("tok", cfg.vocab_size, cfg.d)
    pb.params["cls"] = Tensor(rng.normal(0.0, 0.02, cfg.d))
    for i in range(cfg.mol_layers):
        pb.encoder_block(f"layer{i}", cfg.d, cfg.ff)
    pb.layer_norm("final", cfg.d)
    return pb.params


def init_spectral_encoder(rng: np.random.Generator, cfg: ModelConfig) -> nn.Params:
    pb = nn.ParamBuilder(rng)
    pb.linear("peak", 2, cfg.d)
    for i in range(cfg.spec_layers):
        pb.encoder_block(f"layer{i}", cfg.d, cfg.ff)
    pb.layer_norm("final", cfg.d)
    pb.params["final.g"] = Tensor(np.full(cfg.d, cfg.spec_output_gain))
    return pb.params


def pad_tokens(seqs: Sequence[Sequence[int]], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    valid = np.zeros((len(seqs), width), dtype=bool)
    for b, s in enumerate(seqs):
        ids[b, :len(s)] = s
        valid[b, :len(s)] = True
    return ids, valid


def encode_molecules(token_seqs: Sequence[Sequence[int]], params: nn.Params,
                     cfg: ModelConfig) -> tuple[HiddenSeq, Tensor]:
    """Encode a batch of SMILES token id lists (without specials).

    A learned CLS vector is prepended; the final CLS row is the embedding.
    """
    for s in token_seqs:
        if len(s) + 1 > cfg.max_mol_tokens:
            raise SequenceTooLong(f"{len(s) + 1} tokens exceeds {cfg.max_mol_tokens}")
    ids, valid = pad_tokens(token_seqs, sm.VOCAB.pad_id)
    b, t = ids.shape
    tok = ag.embedding(params["tok"], ids)
    cls = ag.as_tensor(params["cls"]).reshape(1, 1, cfg.d) * np.ones((b, 1, 1))
    x = ag.concat([cls, tok], axis=1)
    x = x + nn.sinusoidal_positions(t + 1, cfg.d)
    valid = np.concatenate([np.ones((b, 1), dtype=bool), valid], axis=1)
    mask = nn.key_padding_mask(valid)
    for i in range(cfg.mol_layers):
        x = nn.encoder_block(x, params, f"layer{i}", cfg.heads, mask)
    x = nn.norm(x, params, "final")
    return HiddenSeq(x, valid), x[:, 0, :]


def encode_molecule(smiles_or_tokens, params: nn.Params, cfg: ModelConfig) -> tuple[HiddenSeq, Tensor]:
    tokens = sm.tokenize(smiles_or_tokens) if isinstance(smiles_or_tokens, str) else smiles_or_tokens
    hidden, emb = encode_molecules([tokens], params, cfg)
    return hidden, emb[0]


def spectrum_features(spectra: Sequence[Spectrum], cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """(B,T,2) array of (scaled m/z, intensity) with a (B,T) validity mask."""
    for s in spectra:
        if len(s) > cfg.max_peaks:
            raise TooManyPeaks(f"{len(s)} peaks exceeds {cfg.max_peaks}")
        if not s.is_normalized():
            raise NotNormalized(f"spectrum {s.metadata.identifier!r} is not max-normalized")
    width = max(len(s) for s in spectra)
    feats = np.zeros((len(spectra), width, 2))
    valid = np.zeros((len(spectra), width), dtype=bool)
    for b, s in enumerate(spectra):
        n = len(s)
        feats[b, :n, 0] = s.mzs * cfg.mz_scale
        feats[b, :n, 1] = s.intensities
        valid[b, :n] = True
    return feats, valid


def encode_spectra(spectra: Sequence[Spectrum], params: nn.Params,
                   cfg: ModelConfig) -> tuple[HiddenSeq, Tensor]:
    """Encode peak sets; no positional encoding, mean pooling over valid peaks."""
    feats, valid = spectrum_features(spectra, cfg)
    return encode_peak_features(feats, valid, params, cfg)


def encode_peak_features(feats: np.ndarray, valid: np.ndarray, params: nn.Params,
                         cfg: ModelConfig) -> tuple[HiddenSeq, Tensor]:
    x = nn.linear(Tensor(feats), params, "peak")
    mask = nn.key_padding_mask(valid)
    for i in range(cfg.spec_layers):
        x = nn.encoder_block(x, params, f"layer{i}", cfg.heads, mask)
    x = nn.norm(x, params, "final")
    return HiddenSeq(x, valid), ag.masked_mean(x, valid)


def encode_spectrum(spectrum: Spectrum, params: nn.Params, cfg: ModelConfig) -> tuple[HiddenSeq, Tensor]:
    hidden, emb = encode_spectra([spectrum], params, cfg)
    return hidden, emb[0]
