"""Check-in CSV parsing and sequence building.

Input is a UTF-8 CSV with a header row and at least the columns userid,
datetime, city, category (placeid, lat, lon are parsed when present and
carried along unused). Records are filtered to one city and a date window,
grouped into one sequence per user and ISO week, and users with too few
check-ins are dropped entirely. A median-based cap then limits how many
sequences any single user contributes, so hyperactive users cannot dominate
the clustering.

The sequence file format is JSON lines: a header object
``{"categories": [...]}`` followed by one object per sequence with keys
user, city, week ("YYYY-Www"), and states (category indices).
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path

import numpy as np

from .model import CategorySet, Sequence, SequenceDataset

# Venue vocabulary of the Weeplaces export, in its documented order; index
# in this tuple is the state index everywhere downstream.
WEEPLACES_CATEGORIES = CategorySet(
    (
        "Food",
        "Art & Entertainment",
        "College & Education",
        "Home/Work",
        "Nightlife",
        "Parks & Outdoors",
        "Shops",
        "Travel",
    )
)

REQUIRED_COLUMNS = ("userid", "datetime", "city", "category")


class ParseError(ValueError):
    """A malformed input row; str(err) includes the 1-based line number."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class CheckinRecord:
    """One parsed check-in row (timestamps kept as written, no timezone math)."""

    userid: str
    when: datetime
    city: str
    category: str
    placeid: str | None = None
    lat: float | None = None
    lon: float | None = None


@dataclass(frozen=True)
class IngestConfig:
    """Filters and knobs of the preprocessing pipeline.

    min_checkins applies to a user's total record count after the city and
    date filters; min_seq_len then drops weekly sequences that are too short
    to contain a transition.
    """

    city: str | None = None
    date_from: date = date(2009, 1, 1)
    date_to: date = date(2011, 12, 31)
    min_checkins: int = 10
    min_seq_len: int = 2
    seed: int = 0
    categories: CategorySet = WEEPLACES_CATEGORIES
    strict: bool = False

    def __post_init__(self):
        if self.min_checkins < 1:
            raise ValueError("min_checkins must be at least 1")
        if self.min_seq_len < 1:
            raise ValueError("min_seq_len must be at least 1")
        if self.date_from > self.date_to:
            raise ValueError("date_from must not be after date_to")


def _parse_timestamp(raw: str, line: int) -> datetime:
    try:
        return datetime.fromisoformat(raw.strip())
    except ValueError:
        raise ParseError(line, f"unparseable datetime {raw!r}") from None


def _optional_float(raw: str | None, line: int, column: str) -> float | None:
    if raw is None or raw.strip() == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise ParseError(line, f"unparseable {column} {raw!r}") from None


def parse_checkins(source, config: IngestConfig) -> list[CheckinRecord]:
    """Read and filter check-in rows from a CSV path or stream.

    Returns records matching the configured city and date window, sorted by
    (userid, datetime); the sort is stable, so equal timestamps keep file
    order. Unknown categories are skipped with a warning, or raise when
    config.strict is set. Any structurally malformed row raises ParseError
    with its line number.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as handle:
            return parse_checkins(handle, config)
    if isinstance(source, io.TextIOBase):
        text = source
    else:
        text = io.TextIOWrapper(source, encoding="utf-8", newline="")

    reader = csv.DictReader(text)
    if reader.fieldnames is None:
        raise ParseError(1, "empty input, expected a CSV header row")
    missing = [col for col in REQUIRED_COLUMNS if col not in reader.fieldnames]
    if missing:
        raise ParseError(1, f"missing required column(s): {', '.join(missing)}")

    records: list[CheckinRecord] = []
    unknown: dict[str, int] = {}
    for row in reader:
        line = reader.line_num
        if any(row.get(col) is None for col in REQUIRED_COLUMNS):
            raise ParseError(line, "row has fewer fields than the header")
        userid = row["userid"].strip()
        city = row["city"].strip()
        category = row["category"].strip()
        if not userid or not city or not category:
            raise ParseError(line, "userid, city, and category must be non-empty")
        when = _parse_timestamp(row["datetime"], line)

        if config.city is not None and city != config.city:
            continue
        if not (config.date_from <= when.date() <= config.date_to):
            continue
        if category not in config.categories:
            if config.strict:
                raise ParseError(line, f"unknown category {category!r}")
            unknown[category] = unknown.get(category, 0) + 1
            continue

        placeid = (row.get("placeid") or "").strip() or None
        records.append(
            CheckinRecord(
                userid=userid,
                when=when,
                city=city,
                category=category,
                placeid=placeid,
                lat=_optional_float(row.get("lat"), line, "lat"),
                lon=_optional_float(row.get("lon"), line, "lon"),
            )
        )

    if unknown:
        detail = ", ".join(f"{name!r} x{count}" for name, count in sorted(unknown.items()))
        warnings.warn(f"skipped check-ins with unknown categories: {detail}", stacklevel=2)
    records.sort(key=lambda rec: (rec.userid, rec.when))
    return records


def _week_id(when: datetime) -> str:
    iso = when.isocalendar()
    return f"{iso[0]:04d}-W{iso[1]:02d}"


def build_sequences(records: list[CheckinRecord], config: IngestConfig) -> SequenceDataset:
    """Group records into one sequence per (user, city, ISO week).

    Users whose total record count is below config.min_checkins contribute
    nothing; sequences shorter than config.min_seq_len are dropped. Records
    must already be sorted as produced by parse_checkins, which keeps every
    sequence chronological.
    """
    categories = config.categories
    sequences: list[Sequence] = []
    by_user: dict[str, list[CheckinRecord]] = {}
    for rec in records:
        by_user.setdefault(rec.userid, []).append(rec)

    for userid, user_records in by_user.items():
        if len(user_records) < config.min_checkins:
            continue
        weekly: dict[tuple[str, str], list[int]] = {}
        for rec in user_records:
            key = (_week_id(rec.when), rec.city)
            weekly.setdefault(key, []).append(categories.index(rec.category))
        for (week, city) in sorted(weekly):
            states = weekly[(week, city)]
            if len(states) < config.min_seq_len:
                continue
            sequences.append(Sequence(user=userid, city=city, week=week, states=tuple(states)))
    return SequenceDataset(categories, tuple(sequences))


def median_sequences_per_user(data: SequenceDataset) -> int:
    """Lower median of per-user sequence counts (always an attained count)."""
    counts = sorted(len(ixs) for ixs in data.user_indices().values())
    if not counts:
        raise ValueError("dataset has no sequences")
    return counts[(len(counts) - 1) // 2]


def downsample_per_user(data: SequenceDataset, seed: int) -> SequenceDataset:
    """Cap every user at the median number of sequences per user.

    Users above the median keep a uniform random subset of that size, drawn
    without replacement from a PCG64 generator seeded with ``seed`` (users
    are visited in first-appearance order, so output is deterministic).
    Kept sequences stay in their original order.
    """
    if len(data) == 0:
        raise ValueError("cannot downsample an empty dataset")
    cap = median_sequences_per_user(data)
    rng = np.random.default_rng(seed)
    keep: set[int] = set()
    for indices in data.user_indices().values():
        if len(indices) <= cap:
            keep.update(indices)
        else:
            chosen = rng.choice(len(indices), size=cap, replace=False)
            keep.update(indices[i] for i in chosen)
    kept = tuple(seq for i, seq in enumerate(data.sequences) if i in keep)
    return SequenceDataset(data.categories, kept)


def write_sequences(path, data: SequenceDataset) -> None:
    """Write the JSON-lines sequence file (header line carries the vocabulary)."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps({"categories": list(data.categories.names)}) + "\n")
        for seq in data.sequences:
            row = {"user": seq.user, "city": seq.city, "week": seq.week, "states": list(seq.states)}
            handle.write(json.dumps(row) + "\n")


def read_sequences(path) -> SequenceDataset:
    """Read a sequence file written by write_sequences."""
    with open(path, "r", encoding="utf-8") as handle:
        header_line = handle.readline()
        if not header_line.strip():
            raise ValueError(f"{path}: missing header line")
        header = json.loads(header_line)
        if "categories" not in header:
            raise ValueError(f"{path}: first line must carry the category vocabulary")
        categories = CategorySet(tuple(header["categories"]))
        sequences = []
        for line in handle:
            if not line.strip():
                continue
            row = json.loads(line)
            sequences.append(
                Sequence(
                    user=row["user"], city=row["city"], week=row["week"], states=tuple(row["states"])
                )
            )
    return SequenceDataset(categories, tuple(sequences))
