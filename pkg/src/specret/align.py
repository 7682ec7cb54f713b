"""Stage 1: contrastive alignment of the spectral encoder to a frozen
molecular encoder with a two-directional InfoNCE objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import encoders as enc
from . import smiles as sm
from .spectra import Spectrum, perturb_spectrum
from .tensor import autograd as ag
from .tensor.autograd import Tensor
from .tensor.params import ModelParams, OptimizerConfig, adamw_step

log = logging.getLogger(__name__)


class WidthMismatch(ValueError):
    pass


class BatchTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.1
    n_spec_negatives: int = 1
    m_mol_negatives: int = 1
    batch_size: int = 32
    epochs: int = 200
    perturb_strength: float = 0.5
    seed: int = 0
    # score pairs by cosine / tau instead of raw dot product / tau
    normalize: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_spec_negatives < 1 or self.m_mol_negatives < 1:
            raise ValueError("need at least one negative per direction")
        if self.m_mol_negatives >= self.batch_size:
            raise ValueError("m_mol_negatives must be smaller than batch_size")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def info_nce(anchor: Tensor, positive: Tensor, negatives: Tensor, tau: float) -> Tensor:
    """Batch-mean of -log softmax over [positive, negatives] of anchor dot products / tau.

    anchor, positive: (B,d); negatives: (B,K,d). The positive sits in the
    denominator together with the negatives.
    """
    d = anchor.shape[-1]
    if positive.shape[-1] != d or negatives.shape[-1] != d:
        raise WidthMismatch("embedding widths differ")
    b = anchor.shape[0]
    a = anchor.reshape(b, 1, d)
    pos = (a @ positive.reshape(b, d, 1)).reshape(b, 1)
    neg = (a @ ag.swapaxes(negatives, 1, 2)).reshape(b, negatives.shape[1])
    logits = ag.concat([pos, neg], axis=1) * (1.0 / tau)
    return ag.cross_entropy(logits, np.zeros(b, dtype=np.int64))


def loss_mol2ms(mol_emb: Tensor, spec_pos: Tensor, spec_neg: Tensor, tau: float) -> Tensor:
    """Molecule anchors against their spectrum and N perturbed spectra."""
    return info_nce(ag.as_tensor(mol_emb), ag.as_tensor(spec_pos), ag.as_tensor(spec_neg), tau)


def loss_ms2mol(spec_emb: Tensor, mol_pos: Tensor, mol_neg: Tensor, tau: float) -> Tensor:
    """Spectrum anchors against their molecule and M other in-batch molecules."""
    return info_nce(ag.as_tensor(spec_emb), ag.as_tensor(mol_pos), ag.as_tensor(mol_neg), tau)


def sample_in_batch_negatives(batch_size: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """(B,m) indices, row i drawn without replacement from the other rows."""
    if batch_size < 2:
        raise BatchTooSmall("in-batch negatives need at least two pairs")
    if m >= batch_size:
        raise ValueError("m must be smaller than the batch size")
    out = np.empty((batch_size, m), dtype=np.int64)
    for i in range(batch_size):
        others = np.delete(np.arange(batch_size), i)
        out[i] = rng.choice(others, size=m, replace=False)
    return out


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    x = ag.as_tensor(x)
    return x * ((x * x).sum(axis=-1, keepdims=True) + eps) ** -0.5


def pre_loss(mol_emb: Tensor, spec_emb: Tensor, spec_neg: Tensor, mol_neg_idx: np.ndarray,
             tau: float, normalize: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (pre, ms2mol, mol2ms). mol_neg_idx selects rows of mol_emb."""
    mol_emb, spec_emb, spec_neg = ag.as_tensor(mol_emb), ag.as_tensor(spec_emb), ag.as_tensor(spec_neg)
    if mol_emb.shape[0] < 2:
        raise BatchTooSmall("pre_loss needs at least two pairs")
    if normalize:
        mol_emb, spec_emb, spec_neg = l2_normalize(mol_emb), l2_normalize(spec_emb), l2_normalize(spec_neg)
    l_mol2ms = loss_mol2ms(mol_emb, spec_emb, spec_neg, tau)
    l_ms2mol = loss_ms2mol(spec_emb, mol_emb, mol_emb[mol_neg_idx], tau)
    return (l_ms2mol + l_mol2ms) * 0.5, l_ms2mol, l_mol2ms


@dataclass
class AlignResult:
    params: ModelParams
    curve: list[tuple[int, float, float, float]]  # step, ms2mol, mol2ms, pre
    epoch_loss: list[float]


def embed_molecules(records: Sequence[sm.MoleculeRecord], params: ModelParams,
                    cfg: enc.ModelConfig, batch_size: int = 64) -> np.ndarray:
    out = []
    with ag.no_grad():
        for k in range(0, len(records), batch_size):
            chunk = [sm.tokenize(r.canonical_smiles) for r in records[k:k + batch_size]]
            _, emb = enc.encode_molecules(chunk, params["molecular_encoder"], cfg)
            out.append(emb.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, cfg.d))


def embed_spectra(spectra: Sequence[Spectrum], params: ModelParams, cfg: enc.ModelConfig,
                  batch_size: int = 64) -> np.ndarray:
    out = []
    with ag.no_grad():
        for k in range(0, len(spectra), batch_size):
            _, emb = enc.encode_spectra(spectra[k:k + batch_size], params["spectral_encoder"], cfg)
            out.append(emb.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, cfg.d))


def train_align(pairs: Sequence[tuple[Spectrum, sm.MoleculeRecord]], params: ModelParams,
                model_cfg: enc.ModelConfig, cfg: ContrastiveConfig,
                opt: OptimizerConfig = OptimizerConfig()) -> AlignResult:
    """Train the spectral encoder; the molecular encoder stays frozen."""
    if len(pairs) < 2:
        raise BatchTooSmall("need at least two training pairs")
    params.set_frozen("molecular_encoder", True)
    params.set_frozen("spectral_encoder", False)
    params.reset_optimizer()
    rng = np.random.default_rng(cfg.seed)
    # frozen encoder: molecule embeddings are constant for the whole run
    mol_all = embed_molecules([m for _, m in pairs], params, model_cfg)
    spectra = [s for s, _ in pairs]
    eta = params["spectral_encoder"]
    curve: list[tuple[int, float, float, float]] = []
    epoch_loss: list[float] = []
    step = 0
    bs = min(cfg.batch_size, len(pairs))
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for k in range(0, len(order), bs):
            idx = order[k:k + bs]
            if len(idx) < 2 or len(idx) <= cfg.m_mol_negatives:
                continue
            batch = [spectra[i] for i in idx]
            negs = [perturb_spectrum(s, rng, cfg.perturb_strength)
                    for s in batch for _ in range(cfg.n_spec_negatives)]
            _, emb = enc.encode_spectra(batch + negs, eta, model_cfg)
            b = len(batch)
            spec_pos = emb[:b]
            spec_neg = emb[b:].reshape(b, cfg.n_spec_negatives, model_cfg.d)
            neg_idx = sample_in_batch_negatives(b, cfg.m_mol_negatives, rng)
            loss, l1, l2 = pre_loss(Tensor(mol_all[idx]), spec_pos, spec_neg, neg_idx, cfg.tau,
                                    cfg.normalize)
            params.zero_grad()
            ag.backward(loss)
            params.discard_frozen_grads()
            adamw_step(params, opt)
            step += 1
            curve.append((step, l1.item(), l2.item(), loss.item()))
            losses.append(loss.item())
        epoch_loss.append(float(np.mean(losses)) if losses else float("nan"))
        log.info("align epoch %d loss %.4f", epoch, epoch_loss[-1])
    return AlignResult(params, curve, epoch_loss)


def format_loss_csv(curve: Sequence[tuple[int, float, float, float]]) -> str:
    lines = ["step,loss_ms2mol,loss_mol2ms,loss_pre"]
    lines += [f"{s},{a!r},{b!r},{c!r}" for s, a, b, c in curve]
    return "\n".join(lines) + "\n"
