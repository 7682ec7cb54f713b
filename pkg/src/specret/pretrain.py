"""Desk-scale pretraining of the molecular encoder and the decoder.

Two objectives share one pass over a SMILES corpus:
  * the decoder reconstructs each SMILES while attending over the encoder's
    token states, which teaches it the SMILES grammar and to read token-level
    molecular states;
  * a throwaway linear head predicts the folded Morgan fingerprint from the
    CLS row, so the pooled embedding separates molecules by substructure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import encoders as enc
from . import smiles as sm
from .encoders import ModelConfig
from .genret import teacher_forced_nll
from .tensor import autograd as ag
from .tensor import nn
from .tensor.params import ModelParams, OptimizerConfig, adamw_step

log = logging.getLogger(__name__)

HEAD_GROUP = "fingerprint_head"


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 1e-3
    fingerprint_bits: int = 512
    fingerprint_radius: int = 1
    # weight of the per-molecule fingerprint loss (summed over bits)
    fingerprint_weight: float = 0.2


@dataclass
class PretrainResult:
    params: ModelParams
    curve: list[tuple[int, float, float]] = field(default_factory=list)  # step, nll, bce
    epoch_loss: list[float] = field(default_factory=list)


def pretrain_autoencoder(smiles: Sequence[str], params: ModelParams, model_cfg: ModelConfig,
                         cfg: PretrainConfig = PretrainConfig()) -> PretrainResult:
    """Jointly train the molecular encoder and decoder; other groups untouched."""
    before = dict(params.frozen)
    for g in params.groups:
        params.set_frozen(g, g not in ("molecular_encoder", "decoder"))
    rng = np.random.default_rng(cfg.seed)
    canon = [sm.canonical_smiles(s) for s in smiles]
    inputs = [sm.tokenize(s) for s in canon]
    targets = [sm.encode_for_model(s) for s in canon]
    bits = np.stack([sm.morgan_fingerprint(sm.parse(s), cfg.fingerprint_radius, cfg.fingerprint_bits) for s in canon])
    head = nn.ParamBuilder(rng)
    head.linear("fp", model_cfg.d, cfg.fingerprint_bits)
    # start the head at the per-bit base rate
    rate = np.clip(bits.mean(axis=0), 1e-3, 1 - 1e-3)
    head.params["fp.b"].data = np.log(rate / (1 - rate))
    params.add_group(HEAD_GROUP, head.params)
    params.reset_optimizer()
    opt = OptimizerConfig(learning_rate=cfg.learning_rate, weight_decay=0.01)
    result = PretrainResult(params)
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(canon))
            losses = []
            for k in range(0, len(order), cfg.batch_size):
                idx = order[k:k + cfg.batch_size]
                hidden, emb = enc.encode_molecules([inputs[i] for i in idx],
                                                   params["molecular_encoder"], model_cfg)
                nll = teacher_forced_nll(hidden, [targets[i] for i in idx], params["decoder"], model_cfg)
                logits = nn.linear(emb, params[HEAD_GROUP], "fp")
                bce = ag.binary_cross_entropy_with_logits(logits, bits[idx])
                loss = nll + bce * (cfg.fingerprint_weight * cfg.fingerprint_bits)
                params.zero_grad()
                ag.backward(loss)
                params.discard_frozen_grads()
                adamw_step(params, opt)
                step += 1
                result.curve.append((step, nll.item(), bce.item()))
                losses.append(loss.item())
            result.epoch_loss.append(float(np.mean(losses)))
            log.info("pretrain epoch %d loss %.4f", epoch, result.epoch_loss[-1])
    finally:
        params.drop_group(HEAD_GROUP)
        for g, was in before.items():
            params.set_frozen(g, was)
        params.reset_optimizer()
    return result
