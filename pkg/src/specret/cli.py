"""Command-line entry point: ingestion, pretraining, both training stages,
library building, retrieval, evaluation and batch MCES.

Exit codes: 0 success, 2 usage, 3 data, 4 model mismatch.
"""

from __future__ import annotations

import os

if "SPECRET_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["SPECRET_THREADS"])

import argparse
import hashlib
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import mces as mc
from . import smiles as sm
from . import spectra as sp
from . import synthetic
from .align import format_loss_csv, train_align
from .config import ConfigError, RunConfig, load_config
from .genret import init_params, retrieve_one, train_gen
from .index import EmptyCandidateSet, IndexConfig, LibraryMismatch, RetrievalLibrary, load_library_records
from .pretrain import pretrain_autoencoder
from .tensor.params import atomic_write_text, load_checkpoint, save_checkpoint

log = logging.getLogger("specret")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISMATCH = 0, 2, 3, 4


class DataError(Exception):
    pass


class ModelMismatch(Exception):
    pass


# -- helpers -----------------------------------------------------------------

def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, inputs: dict, cfg: RunConfig | None, extra=None) -> None:
    body = {
        "command": command,
        "version": __version__,
        "inputs": {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in inputs.items() if v},
        "config": cfg.to_dict() if cfg else None,
        "seed": cfg.seed if cfg else None,
    }
    if extra:
        body.update(extra)
    atomic_write_text(out / "manifest.json", json.dumps(body, indent=2, sort_keys=True) + "\n")
    if cfg is not None:
        atomic_write_text(out / "config.txt", cfg.to_text())


def read_spectra(path) -> list[sp.Spectrum]:
    text = Path(path).read_text()
    if str(path).lower().endswith(".mgf"):
        return sp.parse_mgf(text).spectra
    return sp.parse_dataset_table(text)


def labelled_pairs(spectra) -> list[tuple[sp.Spectrum, sm.MoleculeRecord]]:
    pairs = []
    for s in spectra:
        if not s.metadata.smiles:
            raise DataError(f"{s.metadata.identifier}: no SMILES label")
        pairs.append((s, sm.MoleculeRecord.from_smiles(s.metadata.smiles)))
    if len(pairs) < 2:
        raise DataError("need at least two labelled spectra")
    return pairs


def load_model(path, cfg: RunConfig):
    params, manifest = load_checkpoint(path)
    want = cfg.model
    emb = params["molecular_encoder"]["tok"]
    if emb.shape != (want.vocab_size, want.d):
        raise ModelMismatch(f"checkpoint width {emb.shape[1]} does not match config d={want.d}")
    return params, manifest


def load_library(path, params, cfg: RunConfig) -> RetrievalLibrary:
    path = Path(path)
    blob = path.with_suffix(".emb")
    if blob.exists():
        lib = RetrievalLibrary.load(path, blob)
        lib.check_params(params)
        return lib
    return RetrievalLibrary.build(load_library_records(path), params, cfg.model)


def resolve_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None), getattr(args, "preset", "desk"))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace("run", seed=args.seed)
    return cfg


# -- commands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = Path(args.out)
    drops: Counter = Counter()
    src = args.mgf or args.tsv
    text = Path(src).read_text()
    if args.mgf:
        parsed = sp.parse_mgf(text)
        spectra, drops["malformed"] = parsed.spectra, len(parsed.errors)
    else:
        spectra = sp.parse_dataset_table(text)
    read = len(spectra) + drops["malformed"]
    train = set()
    if args.train_smiles:
        for line in Path(args.train_smiles).read_text().splitlines():
            if line.strip():
                train.add(sm.canonical_smiles(line.split("\t")[0].strip()))
    kept = []
    for s in spectra:
        if not s.metadata.smiles:
            drops["missing_smiles"] += 1
            continue
        try:
            rec = sm.MoleculeRecord.from_smiles(s.metadata.smiles)
        except sm.SmilesError:
            drops["bad_smiles"] += 1
            continue
        if rec.canonical_smiles in train:
            drops["in_training_set"] += 1
            continue
        parent = s.metadata.parent_mass
        kept.append(sp.with_metadata(
            s, smiles=rec.canonical_smiles, formula=rec.formula_text,
            parent_mass=rec.parent_mass if np.isnan(parent) else parent))
    print(f"read {read} kept {len(kept)} dropped {sum(drops.values())}")
    for reason, n in sorted(drops.items()):
        if n:
            print(f"  dropped {reason}: {n}")
    if not kept:
        print("error: no usable records", file=sys.stderr)
        return EXIT_DATA
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "dataset.tsv", sp.serialize_dataset_table(kept))
    write_manifest(out, "ingest", {"source": src, "train_smiles": args.train_smiles}, None,
                   {"counts": {"read": read, "kept": len(kept), **{k: v for k, v in drops.items() if v}}})
    return EXIT_OK


def cmd_synth(args) -> int:
    """Synthetic fixture: fragment pseudo-spectra for random molecules."""
    out = Path(args.out)
    mols = synthetic.molecule_corpus(args.count + args.decoys, seed=args.seed)
    labelled, decoys = mols[:args.count], mols[args.count:]
    n_train = int(round(args.count * args.train_fraction))
    specs = [sp.synth_fragment_spectrum(sm.MoleculeRecord.from_smiles(s), f"syn{i:05d}")
             for i, s in enumerate(labelled)]
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "train.tsv", sp.serialize_dataset_table(specs[:n_train]))
    atomic_write_text(out / "test.tsv", sp.serialize_dataset_table(specs[n_train:]))
    lib = labelled[n_train:] + decoys
    atomic_write_text(out / "library.tsv", "canonical_smiles\n" + "\n".join(lib) + "\n")
    atomic_write_text(out / "train_smiles.txt", "\n".join(labelled[:n_train]) + "\n")
    print(f"train {n_train} test {len(specs) - n_train} library {len(lib)}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    smiles = [l.split("\t")[0].strip() for l in Path(args.smiles).read_text().splitlines() if l.strip()]
    if smiles and smiles[0] in ("smiles", "canonical_smiles"):
        smiles = smiles[1:]
    if not smiles:
        raise DataError("empty SMILES corpus")
    params = init_params(cfg.model, cfg.seed)
    res = pretrain_autoencoder(smiles, params, cfg.model, cfg.pretrain)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", params, cfg.seed, cfg.to_dict())
    lines = ["step,nll,fingerprint_bce"] + [f"{s},{a!r},{b!r}" for s, a, b in res.curve]
    atomic_write_text(out / "loss.csv", "\n".join(lines) + "\n")
    write_manifest(out, "pretrain", {"smiles": args.smiles, "config": args.config}, cfg)
    return EXIT_OK


def cmd_train_align(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    pairs = labelled_pairs(sp.parse_dataset_table(Path(args.data).read_text()))
    if args.init:
        params, _ = load_model(args.init, cfg)
    else:
        params = init_params(cfg.model, cfg.seed)
    contrastive = cfg.contrastive if args.seed is None else cfg.replace("contrastive", seed=cfg.seed).contrastive
    res = train_align(pairs, params, cfg.model, contrastive, cfg.optimizer)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", params, cfg.seed, cfg.to_dict())
    atomic_write_text(out / "loss.csv", format_loss_csv(res.curve))
    write_manifest(out, "train-align", {"data": args.data, "init": args.init, "config": args.config}, cfg)
    return EXIT_OK


def cmd_train_gen(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    pairs = labelled_pairs(sp.parse_dataset_table(Path(args.data).read_text()))
    params, _ = load_model(args.stage1, cfg)
    lib = load_library(args.library, params, cfg)
    index_cfg = IndexConfig(k=args.k or cfg.index.k, mass_tolerance=cfg.index.mass_tolerance,
                            mode=args.mode or cfg.index.mode)
    res = train_gen(pairs, lib, params, cfg.model, index_cfg, cfg.gen, cfg.optimizer)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", params, cfg.seed, cfg.to_dict())
    lines = ["step,nll"] + [f"{s},{v!r}" for s, v in res.curve]
    atomic_write_text(out / "loss.csv", "\n".join(lines) + "\n")
    write_manifest(out, "train-gen", {"data": args.data, "library": args.library,
                                      "stage1": args.stage1, "config": args.config}, cfg)
    return EXIT_OK


def cmd_index(args) -> int:
    cfg = resolve_config(args)
    params, _ = load_model(args.checkpoint, cfg)
    lib = RetrievalLibrary.build(load_library_records(args.smiles), params, cfg.model)
    out = Path(args.out)
    lib.save(out / "library.tsv", out / "library.emb")
    write_manifest(out, "index", {"smiles": args.smiles, "checkpoint": args.checkpoint}, cfg,
                   {"records": len(lib)})
    return EXIT_OK


def cmd_retrieve(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    params, _ = load_model(args.checkpoint, cfg)
    lib = load_library(args.library, params, cfg)
    index_cfg = IndexConfig(k=args.k, mass_tolerance=cfg.index.mass_tolerance, mode=args.mode)
    rng = np.random.default_rng(cfg.seed)
    lines, failures = [], {}
    spectra = read_spectra(args.spectra)
    for s in spectra:
        try:
            res = retrieve_one(s, lib, params, cfg.model, index_cfg, cfg.beam,
                               generative=args.generative == "on",
                               without_pre_retrieval=args.no_pre_retrieval, rng=rng)
        except EmptyCandidateSet as exc:
            failures[s.metadata.identifier] = str(exc)
            continue
        lines.append(json.dumps(res.to_json(lib), sort_keys=True))
    if not lines:
        raise DataError("no query produced a ranking")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "results.jsonl", "\n".join(lines) + "\n")
    write_manifest(out, "retrieve", {"spectra": args.spectra, "library": args.library,
                                     "checkpoint": args.checkpoint, "config": args.config}, cfg,
                   {"mode": args.mode, "k": args.k, "generative": args.generative,
                    "pre_retrieval": not args.no_pre_retrieval, "failures": failures})
    print(f"queries {len(spectra)} ranked {len(lines)} failed {len(failures)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = Path(args.out)
    rows = [json.loads(l) for l in Path(args.results).read_text().splitlines() if l.strip()]
    if not rows:
        raise DataError("results file is empty")
    truth = {s.metadata.identifier: s.metadata.smiles for s in read_spectra(args.truth)}
    results, errors = [], {}
    for row in rows:
        ident = row.get("identifier")
        if ident not in truth or not truth[ident]:
            errors[str(ident)] = "no ground truth"
            continue
        try:
            canon = sm.canonical_smiles(truth[ident])
        except sm.SmilesError as exc:
            errors[ident] = f"bad truth SMILES: {exc}"
            continue
        results.append(ev.QueryResult(ident, [r["canonical_smiles"] for r in row["ranking"]], canon))
    if not results:
        raise DataError("no result row could be matched to a ground truth")
    report = ev.evaluate(results, with_mces=not args.no_mces)
    report.mces_errors.update(errors)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.json", report.to_json())
    atomic_write_text(out / "per_query.jsonl",
                      "".join(json.dumps(q, sort_keys=True) + "\n" for q in report.per_query))
    table = report.summary_table(args.label)
    atomic_write_text(out / "summary.txt", table)
    write_manifest(out, "eval", {"results": args.results, "truth": args.truth}, None)
    print(table, end="")
    return EXIT_OK


def cmd_mces(args) -> int:
    out = Path(args.out)
    rows = []
    for line in Path(args.pairs).read_text().splitlines():
        parts = line.split("\t")
        if len(parts) < 2 or parts[0] in ("smiles_a", ""):
            continue
        try:
            rows.append(mc.mces_exact(parts[0].strip(), parts[1].strip(), args.budget))
        except sm.SmilesError as exc:
            rows.append(exc)
    if not rows or all(isinstance(r, Exception) for r in rows):
        raise DataError("no pair could be scored")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "mces.tsv", mc.format_batch(rows))
    write_manifest(out, "mces", {"pairs": args.pairs}, None,
                   {"errors": sum(isinstance(r, Exception) for r in rows)})
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _add_config(p, seed=True):
    p.add_argument("--config", help="key=value sections file")
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    if seed:
        p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specret", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, canonicalize, normalize and dedup spectra")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mgf")
    src.add_argument("--tsv")
    p.add_argument("--train-smiles")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a synthetic train/test/library fixture")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--decoys", type=int, default=400)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="pretrain molecular encoder and decoder on SMILES")
    p.add_argument("--smiles", required=True)
    _add_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-align", help="stage 1: contrastive alignment")
    p.add_argument("--data", required=True)
    p.add_argument("--init", help="pretrained checkpoint to start from")
    _add_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_align)

    p = sub.add_parser("train-gen", help="stage 2: fusion and decoder training")
    p.add_argument("--data", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--mode", choices=("weight", "formula", "all"))
    p.add_argument("--k", type=int)
    _add_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_gen)

    p = sub.add_parser("index", help="embed a candidate library")
    p.add_argument("--smiles", required=True)
    p.add_argument("--checkpoint", required=True)
    _add_config(p, seed=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("retrieve", help="rank library candidates for each spectrum")
    p.add_argument("--spectra", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("weight", "formula", "all"), default="weight")
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--generative", choices=("on", "off"), default="on")
    p.add_argument("--no-pre-retrieval", action="store_true",
                   help="fuse random filtered candidates and rerank the whole filtered set")
    _add_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="score a results file against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--label", default="model")
    p.add_argument("--no-mces", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mces", help="batch MCES distances for SMILES pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--budget", type=int, default=mc.DEFAULT_NODE_BUDGET)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mces)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LibraryMismatch, ModelMismatch) as exc:
        print(f"model mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (DataError, sp.SpectrumError, sm.SmilesError, EmptyCandidateSet, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
