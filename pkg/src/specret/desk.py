"""Synthetic desk-scale benchmark: pretraining stand-in, both training stages
and the three retrieval arms on fragment pseudo-spectra."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import smiles as sm
from . import spectra as sp
from . import synthetic
from .align import ContrastiveConfig, embed_spectra, train_align
from .encoders import ModelConfig
from .genret import BeamConfig, GenConfig, init_params, retrieve_one, train_gen
from .index import IndexConfig, RetrievalLibrary
from .pretrain import PretrainConfig, pretrain_autoencoder
from .tensor.params import ModelParams, OptimizerConfig, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

BENCH_SEED = 1
PRETRAIN_SEED = 123
PRETRAINED_PATH = Path(__file__).with_name("data") / "desk_pretrained.bin"


def desk_model() -> ModelConfig:
    return ModelConfig(d=64, heads=4, mol_layers=2, spec_layers=2, dec_layers=2)


@dataclass(frozen=True)
class BenchmarkConfig:
    n_labelled: int = 500
    n_train: int = 400
    n_decoys: int = 400
    seed: int = BENCH_SEED
    index: IndexConfig = IndexConfig(k=40, mass_tolerance=0.5, mode="all")
    contrastive: ContrastiveConfig = ContrastiveConfig(epochs=100, m_mol_negatives=31)
    align_lr: float = 1e-3
    gen: GenConfig = GenConfig(epochs=30)
    gen_lr: float = 1e-3
    beam: BeamConfig = BeamConfig(beam_width=5, max_length=64)
    model_seed: int = 0


def benchmark_molecules(cfg: BenchmarkConfig = BenchmarkConfig()) -> list[str]:
    return synthetic.molecule_corpus(cfg.n_labelled + cfg.n_decoys, seed=cfg.seed)


def pretraining_corpus(count: int, exclude=()) -> list[str]:
    return synthetic.molecule_corpus(count, seed=PRETRAIN_SEED, exclude=exclude)


def pretrain_desk(out=PRETRAINED_PATH, count: int = 2000,
                  cfg: PretrainConfig = PretrainConfig(epochs=24), model_seed: int = 0) -> ModelParams:
    """Regenerate the shipped desk-pretrained checkpoint."""
    model = desk_model()
    exclude = benchmark_molecules()
    corpus = pretraining_corpus(count, exclude)
    params = init_params(model, model_seed)
    res = pretrain_autoencoder(corpus, params, model, cfg)
    save_checkpoint(out, params, model_seed, {
        "model": asdict(model), "pretrain": asdict(cfg), "corpus_size": count,
        "corpus_seed": PRETRAIN_SEED, "excluded_benchmark_seed": BENCH_SEED,
        "final_loss": res.epoch_loss[-1] if res.epoch_loss else None,
    })
    return params


def load_pretrained(path=PRETRAINED_PATH) -> ModelParams:
    params, _ = load_checkpoint(path)
    return params


@dataclass
class ArmResult:
    recall: dict[int, float]
    mrr: float
    ranks: list[int | None]


@dataclass
class BenchmarkReport:
    baseline_recall_at_1: float
    arms: dict[str, ArmResult]
    gap_unaligned: float
    gap_aligned: float
    gap_generated: float
    generated_valid: float
    timings: dict[str, float] = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)


def _gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    return 1.0 - np.sum(a * b, axis=1)


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), params: ModelParams | None = None,
                  model: ModelConfig | None = None) -> BenchmarkReport:
    model = model or desk_model()
    params = params if params is not None else load_pretrained()
    # spectral encoder and fusion start from fresh seeded weights
    fresh = init_params(model, cfg.model_seed)
    params.merge(fresh, ("spectral_encoder", "fusion"))

    mols = benchmark_molecules(cfg)
    recs = [sm.MoleculeRecord.from_smiles(s) for s in mols]
    labelled, decoys = recs[:cfg.n_labelled], recs[cfg.n_labelled:]
    specs = [sp.synth_fragment_spectrum(r, f"syn{i:04d}") for i, r in enumerate(labelled)]
    train = list(zip(specs[:cfg.n_train], labelled[:cfg.n_train]))
    test = list(zip(specs[cfg.n_train:], labelled[cfg.n_train:]))
    timings, checks = {}, {}

    test_specs = [s for s, _ in test]
    test_lib = RetrievalLibrary.build(labelled[cfg.n_train:] + decoys, params, model)
    truth_emb = test_lib.embeddings[:len(test)]
    gap_unaligned = float(_gap(embed_spectra(test_specs, params, model), truth_emb).mean())

    t = time.time()
    checks["gamma_before_align"] = params.checksum("molecular_encoder")
    train_align(train, params, model, cfg.contrastive, OptimizerConfig(learning_rate=cfg.align_lr))
    checks["gamma_after_align"] = params.checksum("molecular_encoder")
    timings["align"] = time.time() - t
    gap_aligned = float(_gap(embed_spectra(test_specs, params, model), truth_emb).mean())

    t = time.time()
    train_lib = RetrievalLibrary.build(labelled[:cfg.n_train] + decoys, params, model)
    checks["gamma_before_gen"] = params.checksum("molecular_encoder")
    checks["eta_before_gen"] = params.checksum("spectral_encoder")
    train_gen(train, train_lib, params, model, cfg.index, cfg.gen, OptimizerConfig(learning_rate=cfg.gen_lr))
    checks["gamma_after_gen"] = params.checksum("molecular_encoder")
    checks["eta_after_gen"] = params.checksum("spectral_encoder")
    timings["gen"] = time.time() - t

    t = time.time()
    arms = {"pre_retrieval_only": [], "full": [], "without_pre_retrieval": []}
    sizes, gen_gaps, valid = [], [], 0
    rng = np.random.default_rng(cfg.seed)
    for q, (s, truth) in enumerate(test):
        sizes.append(len(test_lib.candidates_for(s, cfg.index)))
        pre = retrieve_one(s, test_lib, params, model, cfg.index, cfg.beam, generative=False)
        full = retrieve_one(s, test_lib, params, model, cfg.index, cfg.beam)
        nopre = retrieve_one(s, test_lib, params, model, cfg.index, cfg.beam,
                             without_pre_retrieval=True, rng=rng)
        for name, out in (("pre_retrieval_only", pre), ("full", full), ("without_pre_retrieval", nopre)):
            ranking = [test_lib.records[i].canonical_smiles for i in out.ranking.ids]
            arms[name].append(ev.QueryResult(s.metadata.identifier, ranking, truth.canonical_smiles))
        if full.generated_smiles is not None:
            valid += 1
            gen_emb = RetrievalLibrary.build([sm.MoleculeRecord.from_smiles(full.generated_smiles)],
                                             params, model).embeddings
            gen_gaps.append(float(_gap(gen_emb, truth_emb[[q]])[0]))
    timings["inference"] = time.time() - t
    report_arms = {
        name: ArmResult({k: ev.recall_at_k(res, k) for k in ev.RECALL_KS}, ev.mrr(res),
                        [r.rank_of_truth for r in res])
        for name, res in arms.items()
    }
    return BenchmarkReport(
        baseline_recall_at_1=100.0 * float(np.mean([1.0 / n for n in sizes])),
        arms=report_arms,
        gap_unaligned=gap_unaligned,
        gap_aligned=gap_aligned,
        # over queries whose beams yielded a valid molecule
        gap_generated=float(np.mean(gen_gaps)) if gen_gaps else float("nan"),
        generated_valid=valid / len(test),
        timings=timings,
        checksums=checks,
    )
