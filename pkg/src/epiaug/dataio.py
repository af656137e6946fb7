"""Surveillance data model, CSV schemas, and validated ingestion.

Surveillance CSV: ``area_id,site_id,year,tested,positive``.  Auxiliary
pseudo-observations reuse the schema with site_id prefixed ``aux:``.
Survey calibration CSV: ``area_id,year,prevalence,std_err``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "IngestError",
    "SurveillanceRecord",
    "NPBSRecord",
    "SurveillanceDataset",
    "ingest",
    "ingest_npbs",
    "write_surveillance_csv",
    "write_npbs_csv",
    "AUX_PREFIX",
]

AUX_PREFIX = "aux:"

SURVEILLANCE_COLUMNS = ("area_id", "site_id", "year", "tested", "positive")
NPBS_COLUMNS = ("area_id", "year", "prevalence", "std_err")


class IngestError(ValueError):
    """Validation failure with one itemized message per offending row."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class SurveillanceRecord:
    """One sentinel-site observation: positives out of tested in a year."""

    area_id: str
    site_id: str
    year: int
    tested: int
    positive: int
    is_auxiliary: bool = False


@dataclass(frozen=True)
class NPBSRecord:
    """A population-survey prevalence point used for bias calibration."""

    area_id: str
    year: int
    prevalence: float
    std_err: float

    def __post_init__(self) -> None:
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError(f"survey prevalence must be in (0,1), got {self.prevalence}")
        if self.std_err <= 0:
            raise ValueError(f"survey std_err must be positive, got {self.std_err}")


@dataclass
class SurveillanceDataset:
    """Validated collection of surveillance records plus survey points."""

    records: list[SurveillanceRecord] = field(default_factory=list)
    npbs: list[NPBSRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        problems = _validate_records(self.records)
        if problems:
            raise IngestError(problems)

    @property
    def areas(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.area_id)
        return sorted(seen)

    @property
    def years(self) -> np.ndarray:
        return np.array(sorted({r.year for r in self.records}), dtype=int)

    def for_area(self, area_id: str) -> "SurveillanceDataset":
        return SurveillanceDataset(
            records=[r for r in self.records if r.area_id == area_id],
            npbs=[n for n in self.npbs if n.area_id == area_id],
        )

    def real_records(self) -> list[SurveillanceRecord]:
        return [r for r in self.records if not r.is_auxiliary]

    def augmented_with(self, aux: list[SurveillanceRecord]) -> "SurveillanceDataset":
        return SurveillanceDataset(records=self.records + list(aux), npbs=list(self.npbs))

    def subset(self, indices: list[int]) -> "SurveillanceDataset":
        return SurveillanceDataset(
            records=[self.records[i] for i in indices], npbs=list(self.npbs)
        )


def _validate_records(records: list[SurveillanceRecord]) -> list[str]:
    problems = []
    seen: dict[tuple[str, int], int] = {}
    site_area: dict[str, str] = {}
    for i, r in enumerate(records):
        where = f"record {i} ({r.site_id}, {r.year})"
        if r.tested < 1:
            problems.append(f"{where}: tested must be >= 1, got {r.tested}")
        if not 0 <= r.positive <= r.tested:
            problems.append(
                f"{where}: positive must be in [0, tested], got {r.positive}/{r.tested}"
            )
        key = (r.site_id, r.year)
        if key in seen:
            problems.append(
                f"duplicate (site, year) = {key}: records {seen[key]} and {i}"
            )
        else:
            seen[key] = i
        prior_area = site_area.setdefault(r.site_id, r.area_id)
        if prior_area != r.area_id:
            problems.append(
                f"site {r.site_id} appears under areas {prior_area} and {r.area_id}"
            )
    return problems


def _parse_int(value: str, what: str, row: int, problems: list[str]) -> int | None:
    try:
        as_float = float(value)
    except ValueError:
        problems.append(f"row {row}: {what} is not a number: {value!r}")
        return None
    if as_float != int(as_float):
        problems.append(f"row {row}: {what} must be an integer, got {value!r}")
        return None
    return int(as_float)


def ingest(path: str) -> SurveillanceDataset:
    """Read and validate a surveillance CSV; all problems reported at once."""
    with open(path, newline="") as fh:
        return _ingest_stream(fh, path)


def _ingest_stream(fh: io.TextIOBase, label: str) -> SurveillanceDataset:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError([f"{label}: empty file (missing header)"])
    if tuple(h.strip() for h in header) != SURVEILLANCE_COLUMNS:
        raise IngestError(
            [f"{label}: expected header {','.join(SURVEILLANCE_COLUMNS)}, got {','.join(header)}"]
        )
    problems: list[str] = []
    records: list[SurveillanceRecord] = []
    dupes: dict[tuple[str, int], int] = {}
    site_area: dict[str, str] = {}
    for rownum, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(SURVEILLANCE_COLUMNS):
            problems.append(f"row {rownum}: expected {len(SURVEILLANCE_COLUMNS)} fields, got {len(row)}")
            continue
        area_id, site_id = row[0].strip(), row[1].strip()
        year = _parse_int(row[2].strip(), "year", rownum, problems)
        tested = _parse_int(row[3].strip(), "tested", rownum, problems)
        positive = _parse_int(row[4].strip(), "positive", rownum, problems)
        if None in (year, tested, positive):
            continue
        if tested < 1:
            problems.append(f"row {rownum}: tested must be >= 1, got {tested}")
            continue
        if not 0 <= positive <= tested:
            problems.append(
                f"row {rownum}: positive must be in [0, tested], got {positive} > {tested}"
                if positive > tested
                else f"row {rownum}: positive must be non-negative, got {positive}"
            )
            continue
        key = (site_id, year)
        if key in dupes:
            problems.append(
                f"row {rownum}: duplicate (site, year) = ({site_id}, {year}), first seen at row {dupes[key]}"
            )
            continue
        dupes[key] = rownum
        prior_area = site_area.setdefault(site_id, area_id)
        if prior_area != area_id:
            problems.append(
                f"row {rownum}: site {site_id} already belongs to area {prior_area}"
            )
            continue
        records.append(
            SurveillanceRecord(
                area_id=area_id,
                site_id=site_id,
                year=year,
                tested=tested,
                positive=positive,
                is_auxiliary=site_id.startswith(AUX_PREFIX),
            )
        )
    if problems:
        raise IngestError(problems)
    return SurveillanceDataset(records=records)


def ingest_npbs(path: str) -> list[NPBSRecord]:
    """Read and validate a survey-calibration CSV."""
    problems: list[str] = []
    out: list[NPBSRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError([f"{path}: empty file (missing header)"])
        if tuple(h.strip() for h in header) != NPBS_COLUMNS:
            raise IngestError(
                [f"{path}: expected header {','.join(NPBS_COLUMNS)}, got {','.join(header)}"]
            )
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(NPBS_COLUMNS):
                problems.append(f"row {rownum}: expected {len(NPBS_COLUMNS)} fields, got {len(row)}")
                continue
            year = _parse_int(row[1].strip(), "year", rownum, problems)
            try:
                prevalence = float(row[2])
                std_err = float(row[3])
            except ValueError:
                problems.append(f"row {rownum}: prevalence/std_err not numeric: {row[2]!r},{row[3]!r}")
                continue
            if year is None:
                continue
            if not 0.0 < prevalence < 1.0:
                problems.append(f"row {rownum}: prevalence must be in (0,1), got {prevalence}")
                continue
            if std_err <= 0:
                problems.append(f"row {rownum}: std_err must be positive, got {std_err}")
                continue
            out.append(NPBSRecord(row[0].strip(), year, prevalence, std_err))
    if problems:
        raise IngestError(problems)
    return out


def _fmt(value: float) -> str:
    """Shortest round-trip decimal form; keeps reruns byte-identical."""
    return repr(float(value))


def write_surveillance_csv(path: str, dataset: SurveillanceDataset | list[SurveillanceRecord]) -> None:
    records = dataset.records if isinstance(dataset, SurveillanceDataset) else dataset
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SURVEILLANCE_COLUMNS)
        for r in records:
            writer.writerow([r.area_id, r.site_id, r.year, r.tested, r.positive])


def write_npbs_csv(path: str, npbs: list[NPBSRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(NPBS_COLUMNS)
        for n in npbs:
            writer.writerow([n.area_id, n.year, _fmt(n.prevalence), _fmt(n.std_err)])
