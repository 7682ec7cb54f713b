"""Spectrum data model, MGF/TSV ingestion, normalization and synthetic spectra."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from . import smiles as sm

MAX_PEAKS = 61
TABLE_COLUMNS = (
    "identifier", "mzs", "intensities", "smiles", "formula", "precursor_formula",
    "parent_mass", "precursor_mz", "adduct", "instrument_type", "collision_energy",
)


class SpectrumError(ValueError):
    pass


class EmptySpectrum(SpectrumError):
    pass


class NonPositiveIntensity(SpectrumError):
    pass


class ColumnCountMismatch(SpectrumError):
    def __init__(self, line: int, expected: int, got: int):
        super().__init__(f"line {line}: expected {expected} columns, got {got}")
        self.line = line


class ArrayLengthMismatch(SpectrumError):
    def __init__(self, identifier: str):
        super().__init__(f"{identifier}: mzs and intensities differ in length")
        self.identifier = identifier


@dataclass(frozen=True)
class MalformedBlock:
    line: int
    reason: str


@dataclass(frozen=True)
class Peak:
    mz: float
    intensity: float


@dataclass(frozen=True)
class SpectrumMetadata:
    identifier: str = ""
    precursor_mz: float = math.nan
    precursor_formula: str = ""
    adduct: str = ""
    instrument_type: str = ""
    collision_energy: float = math.nan
    smiles: str = ""
    formula: str = ""
    parent_mass: float = math.nan

    @property
    def query_mass(self) -> float:
        """Neutral mass used for weight filtering; falls back to precursor m/z."""
        return self.parent_mass if not math.isnan(self.parent_mass) else self.precursor_mz


@dataclass(frozen=True)
class Spectrum:
    peaks: tuple[Peak, ...]
    metadata: SpectrumMetadata = field(default_factory=SpectrumMetadata)

    def __post_init__(self):
        if not self.peaks:
            raise EmptySpectrum("spectrum has no peaks")
        for a, b in zip(self.peaks, self.peaks[1:]):
            if not b.mz > a.mz:
                raise SpectrumError("peak m/z values must be strictly increasing")
        if self.peaks[0].mz <= 0:
            raise SpectrumError("m/z must be positive")

    @property
    def mzs(self) -> np.ndarray:
        return np.array([p.mz for p in self.peaks])

    @property
    def intensities(self) -> np.ndarray:
        return np.array([p.intensity for p in self.peaks])

    def __len__(self) -> int:
        return len(self.peaks)

    def is_normalized(self) -> bool:
        ints = self.intensities
        return bool(ints.max() == 1.0 and (ints > 0).all())


def normalize_intensities(
    raw: Iterable[tuple[float, float]],
    max_peaks: int = MAX_PEAKS,
    metadata: SpectrumMetadata | None = None,
) -> Spectrum:
    """Divide by the maximum intensity, keeping the `max_peaks` most intense peaks.

    Zero-intensity peaks are dropped; duplicate m/z values keep the larger
    intensity.
    """
    merged: dict[float, float] = {}
    count = 0
    for mz, intensity in raw:
        count += 1
        mz, intensity = float(mz), float(intensity)
        if not (math.isfinite(mz) and math.isfinite(intensity)):
            raise SpectrumError("non-finite peak value")
        if intensity < 0:
            raise NonPositiveIntensity(f"negative intensity at m/z {mz}")
        if mz <= 0:
            raise SpectrumError(f"non-positive m/z {mz}")
        if intensity > 0:
            merged[mz] = max(merged.get(mz, 0.0), intensity)
    if count == 0:
        raise EmptySpectrum("no peaks")
    if not merged:
        raise NonPositiveIntensity("no peak with positive intensity")
    items = sorted(merged.items(), key=lambda p: (-p[1], p[0]))[:max_peaks]
    top = items[0][1]
    # subnormal intensities can underflow to zero after division
    peaks = tuple(Peak(mz, i / top) for mz, i in sorted(items) if i / top > 0)
    return Spectrum(peaks, metadata or SpectrumMetadata())


# ---------------------------------------------------------------------------
# MGF

_MGF_KEYS = {
    "TITLE": "identifier", "SPECTRUM_ID": "identifier", "ID": "identifier",
    "IDENTIFIER": "identifier", "SPECTRUMID": "identifier",
    "PEPMASS": "precursor_mz", "PRECURSOR_MZ": "precursor_mz",
    "SMILES": "smiles", "FORMULA": "formula", "PRECURSOR_FORMULA": "precursor_formula",
    "ADDUCT": "adduct", "INSTRUMENT_TYPE": "instrument_type",
    "SOURCE_INSTRUMENT": "instrument_type", "COLLISION_ENERGY": "collision_energy",
    "PARENT_MASS": "parent_mass",
}
_FLOAT_FIELDS = {"precursor_mz", "collision_energy", "parent_mass"}


@dataclass
class MgfResult:
    spectra: list[Spectrum]
    errors: list[MalformedBlock]


def _metadata_from_headers(headers: dict[str, str], fallback_id: str) -> SpectrumMetadata:
    values: dict[str, object] = {}
    for key, raw in headers.items():
        name = _MGF_KEYS.get(key.upper())
        if name is None or name in values:
            continue
        if name in _FLOAT_FIELDS:
            token = raw.split()[0] if raw.split() else ""
            try:
                values[name] = float(token)
            except ValueError:
                values[name] = math.nan
        else:
            values[name] = raw.strip()
    values.setdefault("identifier", fallback_id)
    if not values["identifier"]:
        values["identifier"] = fallback_id
    return SpectrumMetadata(**values)


def parse_mgf(text: str, max_peaks: int = MAX_PEAKS) -> MgfResult:
    """Parse MGF text. Bad blocks are collected in `errors`, never raised."""
    spectra: list[Spectrum] = []
    errors: list[MalformedBlock] = []
    in_block = False
    block_start = 0
    headers: dict[str, str] = {}
    peaks: list[tuple[float, float]] = []
    problem: str | None = None
    seen_ids: set[str] = set()

    def finish():
        if problem is not None:
            errors.append(MalformedBlock(block_start, problem))
            return
        meta = _metadata_from_headers(headers, f"mgf_{len(spectra) + len(errors)}")
        if meta.identifier in seen_ids:
            errors.append(MalformedBlock(block_start, f"duplicate identifier {meta.identifier}"))
            return
        try:
            spectra.append(normalize_intensities(peaks, max_peaks, meta))
        except SpectrumError as exc:
            errors.append(MalformedBlock(block_start, str(exc) or type(exc).__name__))
            return
        seen_ids.add(meta.identifier)

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line[0] in "#;!/":
            continue
        if line == "BEGIN IONS":
            if in_block:
                errors.append(MalformedBlock(block_start, "missing END IONS"))
            in_block, block_start = True, lineno
            headers, peaks, problem = {}, [], None
            continue
        if line == "END IONS":
            if not in_block:
                errors.append(MalformedBlock(lineno, "END IONS without BEGIN IONS"))
                continue
            finish()
            in_block = False
            continue
        if not in_block:
            continue  # global parameters outside blocks
        if "=" in line and not line[0].isdigit():
            key, _, value = line.partition("=")
            headers[key.strip()] = value.strip()
            continue
        parts = line.split()
        try:
            mz, intensity = float(parts[0]), float(parts[1])
        except (ValueError, IndexError):
            if problem is None:
                problem = f"bad peak line {lineno}"
            continue
        peaks.append((mz, intensity))
    if in_block:
        errors.append(MalformedBlock(block_start, "missing END IONS"))
    return MgfResult(spectra, errors)


def format_mgf(spectra: Sequence[Spectrum]) -> str:
    out = []
    for s in spectra:
        m = s.metadata
        out.append("BEGIN IONS")
        out.append(f"TITLE={m.identifier}")
        if not math.isnan(m.precursor_mz):
            out.append(f"PEPMASS={m.precursor_mz!r}")
        for key, value in (("SMILES", m.smiles), ("FORMULA", m.formula),
                           ("PRECURSOR_FORMULA", m.precursor_formula), ("ADDUCT", m.adduct),
                           ("INSTRUMENT_TYPE", m.instrument_type)):
            if value:
                out.append(f"{key}={value}")
        if not math.isnan(m.collision_energy):
            out.append(f"COLLISION_ENERGY={m.collision_energy!r}")
        if not math.isnan(m.parent_mass):
            out.append(f"PARENT_MASS={m.parent_mass!r}")
        out.extend(f"{p.mz!r} {p.intensity!r}" for p in s.peaks)
        out.append("END IONS")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# dataset table


def _float_or_nan(text: str) -> float:
    text = text.strip()
    if not text or text.lower() in ("nan", "none", "na"):
        return math.nan
    return float(text)


def _fmt_float(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def parse_dataset_table(text: str, max_peaks: int = MAX_PEAKS) -> list[Spectrum]:
    """Read the tab-separated dataset table into spectra with full metadata."""
    reader = csv.reader(io.StringIO(text), delimiter="\t", quoting=csv.QUOTE_NONE)
    rows = iter(reader)
    try:
        header = next(rows)
    except StopIteration:
        return []
    missing = [c for c in TABLE_COLUMNS if c not in header]
    if missing:
        raise SpectrumError(f"dataset table missing columns: {missing}")
    col = {name: header.index(name) for name in TABLE_COLUMNS}
    out = []
    for lineno, row in enumerate(rows, start=2):
        if not row or row == [""]:
            continue
        if len(row) != len(header):
            raise ColumnCountMismatch(lineno, len(header), len(row))
        get = lambda name: row[col[name]]  # noqa: E731
        ident = get("identifier")
        mzs = [float(x) for x in get("mzs").split(",") if x.strip()]
        ints = [float(x) for x in get("intensities").split(",") if x.strip()]
        if len(mzs) != len(ints):
            raise ArrayLengthMismatch(ident)
        meta = SpectrumMetadata(
            identifier=ident,
            precursor_mz=_float_or_nan(get("precursor_mz")),
            precursor_formula=get("precursor_formula"),
            adduct=get("adduct"),
            instrument_type=get("instrument_type"),
            collision_energy=_float_or_nan(get("collision_energy")),
            smiles=get("smiles"),
            formula=get("formula"),
            parent_mass=_float_or_nan(get("parent_mass")),
        )
        pairs = list(zip(mzs, ints))
        if pairs and max(ints) == 1.0 and min(ints) > 0 and len(pairs) <= max_peaks \
                and all(b > a for a, b in zip(mzs, mzs[1:])):
            spectrum = Spectrum(tuple(Peak(m, i) for m, i in pairs), meta)
        else:
            spectrum = normalize_intensities(pairs, max_peaks, meta)
        out.append(spectrum)
    return out


def serialize_dataset_table(spectra: Sequence[Spectrum]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE,
                        escapechar="\\")
    writer.writerow(TABLE_COLUMNS)
    for s in spectra:
        m = s.metadata
        writer.writerow([
            m.identifier,
            ",".join(repr(p.mz) for p in s.peaks),
            ",".join(repr(p.intensity) for p in s.peaks),
            m.smiles,
            m.formula,
            m.precursor_formula,
            _fmt_float(m.parent_mass),
            _fmt_float(m.precursor_mz),
            m.adduct,
            m.instrument_type,
            _fmt_float(m.collision_energy),
        ])
    return buf.getvalue()


T = TypeVar("T")


def dedup_against(
    train_smiles: Iterable[str],
    candidates: Sequence[T],
    smiles_of: Callable[[T], str] | None = None,
) -> list[T]:
    """Drop candidates whose canonical SMILES occurs in the training set."""
    if smiles_of is None:
        smiles_of = _default_smiles_of
    train = {sm.canonical_smiles(s) for s in train_smiles}
    if not train:
        return list(candidates)
    return [c for c in candidates if sm.canonical_smiles(smiles_of(c)) not in train]


def _default_smiles_of(item) -> str:
    if isinstance(item, str):
        return item
    if isinstance(item, sm.MoleculeRecord):
        return item.canonical_smiles
    if isinstance(item, Spectrum):
        return item.metadata.smiles
    raise TypeError(f"cannot extract SMILES from {type(item).__name__}")


def perturb_spectrum(spectrum: Spectrum, seed, strength: float = 0.3) -> Spectrum:
    """Multiply each intensity by a seeded uniform factor and renormalize.

    `seed` is anything accepted by numpy.random.default_rng, including a
    Generator, which is then advanced.
    """
    if not 0 <= strength < 1:
        raise ValueError("strength must lie in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    factors = rng.uniform(1 - strength, 1 + strength, size=len(spectrum))
    ints = spectrum.intensities * factors
    ints = ints / ints.max()
    peaks = tuple(Peak(p.mz, float(i)) for p, i in zip(spectrum.peaks, ints))
    return Spectrum(peaks, spectrum.metadata)


def synth_fragment_spectrum(
    mol: sm.MoleculeRecord,
    identifier: str = "",
    max_peaks: int = MAX_PEAKS,
    merge_tolerance: float = 1e-4,
) -> Spectrum:
    """Deterministic pseudo-fragmentation of a molecule.

    Each acyclic single bond is cut; both sides contribute a peak at their
    neutral mass (atoms plus their hydrogens, no H transfer) with intensity
    proportional to the fragment heavy-atom count. The precursor peak sits at
    the parent mass with intensity 1. Peaks closer than `merge_tolerance` are
    merged by summing intensities.
    """
    g = mol.graph
    n = g.num_atoms
    raw: list[tuple[float, float]] = [(mol.parent_mass, 1.0)]
    ring = _ring_bonds(g)
    for bond in g.bonds:
        if bond.order != sm.SINGLE or bond.key in ring:
            continue
        side = _side_of(g, bond.a, bond)
        for frag in (side, [i for i in range(n) if i not in side]):
            formula: dict[str, int] = {}
            for i in frag:
                el = g.atoms[i].element
                formula[el] = formula.get(el, 0) + 1
                formula["H"] = formula.get("H", 0) + g.hydrogens[i]
            raw.append((sm.formula_mass(formula), len(frag) / n))
    raw.sort()
    merged: list[list[float]] = []
    for mz, inten in raw:
        if merged and mz - merged[-1][0] <= merge_tolerance:
            merged[-1][1] += inten
        else:
            merged.append([mz, inten])
    meta = SpectrumMetadata(
        identifier=identifier,
        precursor_mz=mol.parent_mass,
        adduct="[M]+",
        smiles=mol.canonical_smiles,
        formula=mol.formula_text,
        parent_mass=mol.parent_mass,
    )
    return normalize_intensities([(m, i) for m, i in merged], max_peaks, meta)


def _ring_bonds(g: sm.MolGraph) -> set[tuple[int, int]]:
    """Bonds lying on a cycle (non-bridges)."""
    n = g.num_atoms
    disc = [-1] * n
    low = [0] * n
    bridges: set[tuple[int, int]] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        stack = [(root, -1, iter(g.adjacency[root]))]
        disc[root] = low[root] = timer
        timer += 1
        while stack:
            u, parent, it = stack[-1]
            advanced = False
            for v, _ in it:
                if v == parent:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, u, iter(g.adjacency[v])))
                    advanced = True
                    break
                low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if parent >= 0:
                    low[parent] = min(low[parent], low[u])
                    if low[u] > disc[parent]:
                        bridges.add((min(u, parent), max(u, parent)))
    return {b.key for b in g.bonds} - bridges


def _side_of(g: sm.MolGraph, start: int, cut: sm.Bond) -> list[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v, _ in g.adjacency[u]:
            if {u, v} == {cut.a, cut.b} or v in seen:
                continue
            seen.add(v)
            stack.append(v)
    return sorted(seen)


def with_metadata(spectrum: Spectrum, **changes) -> Spectrum:
    return Spectrum(spectrum.peaks, replace(spectrum.metadata, **changes))
