"""Candidate library with mass/formula indexes and cosine top-K pre-retrieval."""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import encoders as enc
from . import smiles as sm
from .align import embed_molecules, embed_spectra
from .spectra import Spectrum
from .tensor import autograd as ag
from .tensor.params import ModelParams, atomic_write_bytes, atomic_write_text

MODES = ("weight", "formula", "all")


class ZeroVector(ValueError):
    pass


class EmptyCandidateSet(LookupError):
    pass


class LibraryMismatch(ValueError):
    """Library embeddings were computed with a different molecular encoder."""


@dataclass(frozen=True)
class IndexConfig:
    k: int = 40
    mass_tolerance: float = 0.5
    mode: str = "weight"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.mass_tolerance > 0:
            raise ValueError("mass_tolerance must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class RankedList:
    entries: tuple[tuple[int, float], ...]

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in ranking")
        scores = [s for _, s in self.entries]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def rank_by_score(ids: Sequence[int], scores: Sequence[float], tiebreak: Sequence[str],
                  k: int | None = None) -> RankedList:
    """Sort descending by score, ties by tiebreak text ascending."""
    order = sorted(range(len(ids)), key=lambda j: (-scores[j], tiebreak[j]))
    if k is not None:
        order = order[:k]
    return RankedList(tuple((int(ids[j]), float(scores[j])) for j in order))


class RetrievalLibrary:
    """Immutable candidate set with precomputed molecular embeddings."""

    def __init__(self, records: Sequence[sm.MoleculeRecord], embeddings: np.ndarray,
                 gamma_checksum: str):
        if len(records) != len(embeddings):
            raise ValueError("one embedding row per record required")
        self.records = list(records)
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        self.gamma_checksum = gamma_checksum
        norms = np.linalg.norm(self.embeddings, axis=1, keepdims=True)
        self._unit = self.embeddings / np.where(norms > 0, norms, 1.0)
        masses = [(r.parent_mass, i) for i, r in enumerate(self.records)]
        masses.sort()
        self._mass_keys = [m for m, _ in masses]
        self._mass_ids = [i for _, i in masses]
        self._formula: dict[tuple, list[int]] = {}
        for i, r in enumerate(self.records):
            self._formula.setdefault(_formula_key(r.formula), []).append(i)
        self._by_canonical = {r.canonical_smiles: i for i, r in enumerate(self.records)}
        self._hidden_cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def build(cls, records: Sequence[sm.MoleculeRecord], params: ModelParams,
              cfg: enc.ModelConfig) -> "RetrievalLibrary":
        return cls(records, embed_molecules(records, params, cfg),
                   params.checksum("molecular_encoder"))

    def id_of(self, canonical_smiles: str) -> int | None:
        return self._by_canonical.get(canonical_smiles)

    def check_params(self, params: ModelParams) -> None:
        if params.checksum("molecular_encoder") != self.gamma_checksum:
            raise LibraryMismatch("library embeddings do not match the molecular encoder")

    def filter_by_weight(self, mass: float, tolerance: float) -> list[int]:
        lo = bisect.bisect_left(self._mass_keys, mass - tolerance)
        hi = bisect.bisect_right(self._mass_keys, mass + tolerance)
        return sorted(self._mass_ids[lo:hi])

    def filter_by_formula(self, formula) -> list[int]:
        if isinstance(formula, str):
            formula = sm.parse_formula(formula)
        return list(self._formula.get(_formula_key(formula), []))

    def candidates_for(self, spectrum: Spectrum, cfg: IndexConfig) -> list[int]:
        meta = spectrum.metadata
        if cfg.mode == "all":
            return list(range(len(self.records)))
        if cfg.mode == "weight":
            mass = meta.query_mass
            if math.isnan(mass):
                raise EmptyCandidateSet(f"{meta.identifier}: no precursor or parent mass")
            return self.filter_by_weight(mass, cfg.mass_tolerance)
        if not meta.formula:
            raise EmptyCandidateSet(f"{meta.identifier}: no formula for formula filtering")
        return self.filter_by_formula(meta.formula)

    def score(self, query: np.ndarray, ids: Sequence[int]) -> np.ndarray:
        nq = np.linalg.norm(query)
        if nq == 0:
            raise ZeroVector("query embedding is zero")
        return np.clip(self._unit[list(ids)] @ (query / nq), -1.0, 1.0)

    def rank(self, query: np.ndarray, ids: Sequence[int], k: int | None = None) -> RankedList:
        ids = list(ids)
        scores = self.score(query, ids) if ids else np.zeros(0)
        return rank_by_score(ids, scores, [self.records[i].canonical_smiles for i in ids], k)

    def hidden_states(self, ids: Sequence[int], params: ModelParams,
                      cfg: enc.ModelConfig) -> list[np.ndarray]:
        """Molecular encoder token states (valid rows) per record, cached."""
        missing = [i for i in ids if i not in self._hidden_cache]
        with ag.no_grad():
            for k in range(0, len(missing), 64):
                chunk = missing[k:k + 64]
                toks = [sm.tokenize(self.records[i].canonical_smiles) for i in chunk]
                hidden, _ = enc.encode_molecules(toks, params["molecular_encoder"], cfg)
                for b, i in enumerate(chunk):
                    self._hidden_cache[i] = hidden.row(b)
        return [self._hidden_cache[i] for i in ids]

    # -- persistence -------------------------------------------------------
    def save(self, tsv_path, blob_path=None) -> None:
        tsv_path = Path(tsv_path)
        blob_path = Path(blob_path) if blob_path else tsv_path.with_suffix(".emb")
        lines = ["canonical_smiles\tformula\tparent_mass"]
        lines += [f"{r.canonical_smiles}\t{r.formula_text}\t{r.parent_mass!r}" for r in self.records]
        atomic_write_text(tsv_path, "\n".join(lines) + "\n")
        manifest = json.dumps({
            "d": int(self.embeddings.shape[1]) if len(self.records) else 0,
            "count": len(self.records),
            "gamma_checksum": self.gamma_checksum,
        }, sort_keys=True).encode()
        body = np.ascontiguousarray(self.embeddings, dtype="<f8").tobytes()
        atomic_write_bytes(blob_path, len(manifest).to_bytes(8, "little") + manifest + body)

    @classmethod
    def load(cls, tsv_path, blob_path=None) -> "RetrievalLibrary":
        tsv_path = Path(tsv_path)
        blob_path = Path(blob_path) if blob_path else tsv_path.with_suffix(".emb")
        records = load_library_records(tsv_path)
        raw = blob_path.read_bytes()
        size = int.from_bytes(raw[:8], "little")
        manifest = json.loads(raw[8:8 + size])
        if manifest["count"] != len(records):
            raise ValueError("embedding blob and library TSV disagree on record count")
        emb = np.frombuffer(raw, dtype="<f8", offset=8 + size).astype(np.float64)
        emb = emb.reshape(manifest["count"], manifest["d"])
        return cls(records, emb, manifest["gamma_checksum"])


def load_library_records(path) -> list[sm.MoleculeRecord]:
    """Read a library TSV; only the first column (SMILES) is required."""
    records = []
    lines = Path(path).read_text().splitlines()
    start = 1 if lines and lines[0].split("\t")[0] in ("canonical_smiles", "smiles") else 0
    for line in lines[start:]:
        if line.strip():
            records.append(sm.MoleculeRecord.from_smiles(line.split("\t")[0].strip()))
    return records


def _formula_key(formula: dict[str, int]) -> tuple:
    return tuple(sorted((k, v) for k, v in formula.items() if v))


def pre_retrieve(spectrum: Spectrum, lib: RetrievalLibrary, params: ModelParams,
                 model_cfg: enc.ModelConfig, cfg: IndexConfig,
                 query_embedding: np.ndarray | None = None) -> RankedList:
    """Cosine top-K over the filtered candidates."""
    lib.check_params(params)
    ids = lib.candidates_for(spectrum, cfg)
    if not ids:
        raise EmptyCandidateSet(f"{spectrum.metadata.identifier}: no candidates pass the filter")
    if query_embedding is None:
        query_embedding = embed_spectra([spectrum], params, model_cfg)[0]
    return lib.rank(query_embedding, ids, cfg.k)
