"""Corpus ingestion: TIMIT-style directory scanning, manifest files,
class balancing and deterministic splits.

A corpus is described by a :class:`Manifest`, an ordered list of
:class:`SpeakerRecord` plus label/index maps built in first-appearance
order. Manifests round-trip through a plain CSV
(``path,speaker_id,gender,age,accent,split``).
"""

from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError, ValidationError

logger = logging.getLogger(__name__)

ACCENTS = ("DR1", "DR2", "DR3", "DR4", "DR5", "DR6", "DR7", "DR8")
GENDERS = ("M", "F")
SPLITS = ("train", "val", "test", "unassigned")

MANIFEST_HEADER = ["path", "speaker_id", "gender", "age", "accent", "split"]
META_HEADER = ["speaker_id", "age"]

_AUDIO_SUFFIXES = (".wav", ".WAV")


def gender_code(gender: str) -> int:
    """Fixed gender index used for model targets: M=0, F=1."""
    return GENDERS.index(gender)


def accent_code(accent: str) -> int:
    """Fixed accent index used for model targets: DR1=0 .. DR8=7."""
    return ACCENTS.index(accent)


@dataclass(frozen=True)
class SpeakerRecord:
    """One utterance with its speaker-level labels."""

    path: str
    speaker_id: str
    gender: str
    age: float
    accent: str
    split: str = "unassigned"

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValidationError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.accent not in ACCENTS:
            raise ValidationError(f"accent must be one of DR1..DR8, got {self.accent!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not (0 < self.age < 120):
            raise ValidationError(
                f"age must lie in (0, 120), got {self.age} for {self.speaker_id}"
            )
        lead = self.speaker_id[:1].upper()
        if lead in GENDERS and lead != self.gender:
            raise ValidationError(
                f"speaker id {self.speaker_id} implies gender {lead}, "
                f"record says {self.gender}"
            )


class Manifest:
    """Immutable record list plus label->index bijections.

    Index maps cover gender, accent and speaker_id in first-appearance
    order. Model targets use the fixed :func:`gender_code` /
    :func:`accent_code` spaces instead, so partially-populated corpora
    still drive full-width heads.
    """

    def __init__(self, records):
        records = tuple(records)
        seen = set()
        for rec in records:
            if rec.path in seen:
                raise ValidationError(f"duplicate path in manifest: {rec.path}")
            seen.add(rec.path)
        self.records = records
        self.label_maps = {
            "gender": _first_appearance(r.gender for r in records),
            "accent": _first_appearance(r.accent for r in records),
            "speaker_id": _first_appearance(r.speaker_id for r in records),
        }

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def speakers(self):
        return tuple(self.label_maps["speaker_id"])

    def for_split(self, split: str):
        return [r for r in self.records if r.split == split]

    def speaker_index(self, speaker_id: str) -> int:
        return self.label_maps["speaker_id"][speaker_id]

    def with_records(self, records) -> "Manifest":
        return Manifest(records)


def _first_appearance(labels):
    mapping = {}
    for label in labels:
        if label not in mapping:
            mapping[label] = len(mapping)
    return mapping


@dataclass(frozen=True)
class SkipEntry:
    path: str
    reason: str


@dataclass(frozen=True)
class ScanResult:
    """Manifest plus the per-file skip report from a directory scan."""

    manifest: Manifest
    skipped: tuple

    @property
    def files_seen(self) -> int:
        return len(self.manifest) + len(self.skipped)


def read_speaker_meta(path) -> dict:
    """Read the sidecar ``speaker_id,age`` CSV into an upper-cased dict."""
    ages = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != META_HEADER:
            raise ParseError(f"{path}: expected header {','.join(META_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: expected 2 fields", line=lineno)
            speaker_id, age_text = row[0].strip(), row[1].strip()
            try:
                ages[speaker_id.upper()] = float(age_text)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric age {age_text!r}", line=lineno
                ) from None
    return ages


def scan_timit_layout(root, speaker_meta) -> ScanResult:
    """Scan a ``DRn/<speaker_id>/<utt>.wav`` tree into a manifest.

    Accent comes from the DRn ancestor directory, gender from the first
    character of the speaker id, age from the sidecar CSV. A TRAIN or
    TEST ancestor directory, when present, sets the record's split.
    Files under malformed speaker directories or speakers missing from
    the metadata are skipped and listed in the scan report.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root {root} does not exist")
    ages = read_speaker_meta(speaker_meta)

    records = []
    skipped = []
    warned = set()
    region_dirs = sorted(
        p for p in root.rglob("*") if p.is_dir() and p.name.upper() in ACCENTS
    )
    for region_dir in region_dirs:
        accent = region_dir.name.upper()
        split = _split_from_ancestors(region_dir, root)
        for speaker_dir in sorted(p for p in region_dir.iterdir() if p.is_dir()):
            speaker_id = speaker_dir.name.upper()
            files = sorted(
                p for p in speaker_dir.iterdir()
                if p.is_file() and p.suffix in _AUDIO_SUFFIXES
            )
            gender = speaker_id[:1]
            if len(speaker_id) < 2 or gender not in GENDERS:
                skipped.extend(
                    SkipEntry(str(p), f"malformed speaker directory {speaker_dir.name!r}")
                    for p in files
                )
                continue
            if speaker_id not in ages:
                if speaker_id not in warned:
                    logger.warning(
                        "speaker %s has no age metadata; dropping %d file(s)",
                        speaker_id, len(files),
                    )
                    warned.add(speaker_id)
                skipped.extend(
                    SkipEntry(str(p), f"speaker {speaker_id} missing from metadata")
                    for p in files
                )
                continue
            records.extend(
                SpeakerRecord(
                    path=str(p),
                    speaker_id=speaker_id,
                    gender=gender,
                    age=ages[speaker_id],
                    accent=accent,
                    split=split,
                )
                for p in files
            )
    return ScanResult(Manifest(records), tuple(skipped))


def _split_from_ancestors(path: Path, root: Path) -> str:
    for parent in path.relative_to(root).parts:
        name = parent.upper()
        if name == "TRAIN":
            return "train"
        if name == "TEST":
            return "test"
    return "unassigned"


def parse_manifest(path) -> Manifest:
    """Load a manifest CSV, validating labels row by row."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ParseError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ParseError(
                    f"{path}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}",
                    line=lineno,
                )
            rec_path, speaker_id, gender, age_text, accent, split = (
                field.strip() for field in row
            )
            if accent not in ACCENTS:
                raise ParseError(f"{path}: unknown accent {accent!r}", line=lineno)
            if gender not in GENDERS:
                raise ParseError(f"{path}: unknown gender {gender!r}", line=lineno)
            if split not in SPLITS:
                raise ParseError(f"{path}: unknown split {split!r}", line=lineno)
            try:
                age = float(age_text)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric age {age_text!r}", line=lineno
                ) from None
            records.append(
                SpeakerRecord(rec_path, speaker_id, gender, age, accent, split)
            )
    return Manifest(records)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest:
            writer.writerow(
                [rec.path, rec.speaker_id, rec.gender, format(rec.age, "g"),
                 rec.accent, rec.split]
            )


def oversample_balanced(records, seed: int):
    """Resample records until every (accent, gender) count equals the max.

    All originals are kept in input order; replacement draws are
    appended per combination in sorted combination order, so output is
    deterministic for a fixed seed. Total output size is always
    ``max_count * n_combinations``.
    """
    records = list(records)
    if not records:
        raise DataError("cannot oversample an empty record list")
    by_combo = defaultdict(list)
    for rec in records:
        by_combo[(rec.accent, rec.gender)].append(rec)
    max_count = max(len(group) for group in by_combo.values())

    rng = np.random.default_rng(seed)
    extras = []
    for combo in sorted(by_combo):
        group = by_combo[combo]
        deficit = max_count - len(group)
        if deficit > 0:
            picks = rng.integers(0, len(group), size=deficit)
            extras.extend(group[i] for i in picks)
    return records + extras


def combo_counts(records) -> Counter:
    """Count records per (accent, gender) combination."""
    return Counter((rec.accent, rec.gender) for rec in records)


def split_for_speaker_id(manifest: Manifest, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> Manifest:
    """Stratified per-speaker split so every speaker lands in all three splits.

    Each speaker's utterances are shuffled with a seeded RNG and dealt
    train/val/test. For n utterances: train = round(r_train*n) and
    val = round(r_val*n) floored at 1, the remainder is test; train is
    reduced if needed so the test share never empties. Ten utterances
    under the default ratios give the 7/1/2 deal.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must be three values summing to 1, got {ratios}")
    by_speaker = defaultdict(list)
    for rec in manifest:
        by_speaker[rec.speaker_id].append(rec)
    for speaker_id, group in sorted(by_speaker.items()):
        if len(group) < 3:
            raise DataError(
                f"speaker {speaker_id} has {len(group)} utterance(s); "
                "need at least 3 for a 3-way split"
            )

    rng = np.random.default_rng(seed)
    assigned = {}
    for speaker_id in sorted(by_speaker):
        group = sorted(by_speaker[speaker_id], key=lambda r: r.path)
        n = len(group)
        n_train = round(ratios[0] * n)
        n_val = max(1, round(ratios[1] * n))
        while n - n_train - n_val < 1:
            n_train -= 1
        order = rng.permutation(n)
        for rank, idx in enumerate(order):
            if rank < n_train:
                split = "train"
            elif rank < n_train + n_val:
                split = "val"
            else:
                split = "test"
            assigned[group[idx].path] = split

    return manifest.with_records(
        replace(rec, split=assigned[rec.path]) for rec in manifest
    )
