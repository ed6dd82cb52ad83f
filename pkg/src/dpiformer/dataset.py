"""Dataset construction: dedup, ground-truth labeling, balancing, splitting.

All randomness comes from :func:`make_rng`, a PCG64 generator (numpy's
documented 64-bit permuted congruential generator) seeded with the caller's
integer, so a given ``(input, seed)`` always yields the same dataset.
"""

from __future__ import annotations

import csv
import io
import ipaddress
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ._io import atomic_write_text
from .errors import (
    DataFormatError,
    FormatError,
    InsufficientBenign,
    TooSmall,
    UnknownClass,
)
from .ingest import FiveTuple, PayloadRecord, Protocol
from .tokenizer import bytes_to_hex, hex_to_bytes

BINARY_CLASSES = ("benign", "malicious")
SPLIT_FRACTIONS = (0.7, 0.2, 0.1)
GROUND_TRUTH_COLUMNS = (
    "src_ip", "dst_ip", "src_port", "dst_port", "protocol", "start_time", "end_time", "attack_name",
)
DATASET_COLUMNS = ("label", "attack_name", "payload_hex")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class AttackWindow:
    five_tuple: FiveTuple
    start_time: float
    end_time: float
    attack_name: str

    def __post_init__(self):
        if self.start_time > self.end_time:
            raise ValueError("start_time must not exceed end_time")
        if not self.attack_name:
            raise ValueError("attack_name must be non-empty")


@dataclass(frozen=True)
class LabeledRecord:
    payload: bytes
    label: int
    attack_name: Optional[str] = None


@dataclass
class DatasetManifest:
    mode: str
    class_names: List[str]
    counts_per_class: List[int]
    seed: int
    source_files: List[str] = field(default_factory=list)
    dedup: bool = True
    time_slack_seconds: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(**d)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def dedup_payloads(records: Iterable[PayloadRecord]) -> List[PayloadRecord]:
    """Keep the first record for each distinct payload, preserving order."""
    seen = set()
    out = []
    for r in records:
        if r.payload not in seen:
            seen.add(r.payload)
            out.append(r)
    return out


def _endpoint_key(t: FiveTuple):
    a = (t.src_ip, t.src_port)
    b = (t.dst_ip, t.dst_port)
    return (t.protocol, min(a, b), max(a, b))


def label_records(records: Sequence[PayloadRecord], windows: Sequence[AttackWindow],
                  slack: float = 1.0) -> List[LabeledRecord]:
    """Binary labels from ground-truth windows.

    A record matches a window when its five-tuple equals the window's in either
    direction and its timestamp lies in ``[start - slack, end + slack]``.
    Among several matches the earliest ``start_time`` wins (file order breaks
    exact ties).
    """
    if slack < 0:
        raise ValueError("slack must be non-negative")
    index = defaultdict(list)
    order = sorted(range(len(windows)), key=lambda i: (windows[i].start_time, i))
    for i in order:
        index[_endpoint_key(windows[i].five_tuple)].append(windows[i])
    out = []
    for r in records:
        hit = None
        for w in index.get(_endpoint_key(r.five_tuple), ()):
            if w.start_time - slack <= r.timestamp <= w.end_time + slack:
                hit = w
                break
        if hit is None:
            out.append(LabeledRecord(r.payload, 0, None))
        else:
            out.append(LabeledRecord(r.payload, 1, hit.attack_name))
    return out


def dedup_label_conflicts(records: Sequence[PayloadRecord], labeled: Sequence[LabeledRecord]) -> int:
    """Number of distinct payloads that occur under more than one label."""
    labels = defaultdict(set)
    for r, lr in zip(records, labeled):
        labels[r.payload].add(lr.attack_name if lr.label else None)
    return sum(1 for s in labels.values() if len(s) > 1)


def balance_binary(labeled: Sequence[LabeledRecord], seed: int) -> List[LabeledRecord]:
    malicious = [r for r in labeled if r.label == 1]
    benign = [r for r in labeled if r.label == 0]
    if not malicious:
        raise DataFormatError("no malicious records to balance against")
    if len(benign) < len(malicious):
        raise InsufficientBenign(len(benign), len(malicious))
    rng = make_rng(seed)
    pick = np.sort(rng.choice(len(benign), size=len(malicious), replace=False))
    combined = malicious + [benign[i] for i in pick]
    return [combined[i] for i in rng.permutation(len(combined))]


def build_multiclass(labeled: Sequence[LabeledRecord], classes: Sequence[str], seed: int,
                     source_files: Sequence[str] = (), dedup: bool = True,
                     time_slack_seconds: float = 1.0):
    """Attack-type dataset over ``classes`` (in order), downsampled to the rarest class."""
    if not classes:
        raise ValueError("classes must be non-empty")
    if len(set(classes)) != len(classes):
        raise ValueError("classes must be distinct")
    by_class = {name: [] for name in classes}
    for r in labeled:
        if r.attack_name in by_class:
            by_class[r.attack_name].append(r)
    available = Counter(r.attack_name for r in labeled if r.attack_name)
    for name in classes:
        if not by_class[name]:
            raise UnknownClass(name, available)
    n = min(len(v) for v in by_class.values())
    rng = make_rng(seed)
    combined = []
    for idx, name in enumerate(classes):
        members = by_class[name]
        pick = np.sort(rng.choice(len(members), size=n, replace=False))
        combined.extend(LabeledRecord(members[i].payload, idx, name) for i in pick)
    out = [combined[i] for i in rng.permutation(len(combined))]
    manifest = DatasetManifest(
        mode="multiclass", class_names=list(classes), counts_per_class=[n] * len(classes),
        seed=int(seed), source_files=list(source_files), dedup=dedup,
        time_slack_seconds=float(time_slack_seconds),
    )
    return out, manifest


def binary_manifest(records: Sequence[LabeledRecord], seed: int, source_files=(), dedup=True,
                    time_slack_seconds: float = 1.0) -> DatasetManifest:
    counts = Counter(r.label for r in records)
    return DatasetManifest(
        mode="binary", class_names=list(BINARY_CLASSES), counts_per_class=[counts[0], counts[1]],
        seed=int(seed), source_files=list(source_files), dedup=dedup,
        time_slack_seconds=float(time_slack_seconds),
    )


def _part_sizes(n: int) -> List[int]:
    # largest-remainder rounding, ties resolved train > test > validation
    exact = [n * f for f in SPLIT_FRACTIONS]
    sizes = [int(np.floor(x)) for x in exact]
    rest = n - sum(sizes)
    order = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split(dataset: Sequence[LabeledRecord], seed: int):
    """Stratified 70/20/10 split into ``(train, test, validation)``."""
    if len(dataset) < 10:
        raise TooSmall(f"need at least 10 records to split, got {len(dataset)}")
    rng = make_rng(seed)
    parts = ([], [], [])
    for label in sorted({r.label for r in dataset}):
        members = [i for i, r in enumerate(dataset) if r.label == label]
        perm = rng.permutation(len(members))
        start = 0
        for part, size in zip(parts, _part_sizes(len(members))):
            part.extend(members[j] for j in perm[start:start + size])
            start += size
    return tuple([dataset[i] for i in rng.permutation(np.array(p, dtype=np.int64))] for p in parts)


def manifest_for_split(records: Sequence[LabeledRecord], parent: DatasetManifest) -> DatasetManifest:
    counts = Counter(r.label for r in records)
    return DatasetManifest(
        mode=parent.mode, class_names=list(parent.class_names),
        counts_per_class=[counts[i] for i in range(parent.n_classes)], seed=parent.seed,
        source_files=list(parent.source_files), dedup=parent.dedup,
        time_slack_seconds=parent.time_slack_seconds,
    )


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def dataset_to_csv(records: Sequence[LabeledRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DATASET_COLUMNS)
    for r in records:
        w.writerow([r.label, r.attack_name or "", bytes_to_hex(r.payload)])
    return buf.getvalue()


def write_dataset(records: Sequence[LabeledRecord], manifest: DatasetManifest, path) -> None:
    """CSV at ``path`` plus its manifest as the sibling ``<stem>.manifest.json``."""
    atomic_write_text(path, dataset_to_csv(records))
    atomic_write_text(manifest_path(path), json.dumps(manifest.to_dict(), indent=2) + "\n")


def read_dataset_records(path) -> List[LabeledRecord]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DATASET_COLUMNS:
            raise FormatError(f"expected header {','.join(DATASET_COLUMNS)}", line=1, path=path)
        out = []
        for row in reader:
            line = reader.line_num
            if len(row) != 3:
                raise FormatError(f"expected 3 fields, got {len(row)}", line=line, path=path)
            try:
                label = int(row[0])
                payload = hex_to_bytes(row[2])
            except (ValueError, DataFormatError) as exc:
                raise FormatError(str(exc), line=line, path=path) from exc
            if label < 0:
                raise FormatError(f"negative label {label}", line=line, path=path)
            if not payload:
                raise FormatError("empty payload", line=line, path=path)
            out.append(LabeledRecord(payload, label, row[1] or None))
    return out


def read_manifest(path) -> DatasetManifest:
    try:
        with open(path) as fh:
            return DatasetManifest.from_dict(json.load(fh))
    except OSError as exc:
        raise DataFormatError(f"cannot read manifest {path}: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise FormatError(f"invalid manifest: {exc}", path=path) from exc


def read_dataset(path):
    """Inverse of :func:`write_dataset`: ``(records, manifest)``."""
    return read_dataset_records(path), read_manifest(manifest_path(path))


def read_ground_truth(path) -> List[AttackWindow]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot read ground truth {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in GROUND_TRUTH_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise FormatError(f"missing ground-truth columns {missing}", line=1, path=path)
        out = []
        for row in reader:
            line = reader.line_num
            try:
                proto = Protocol(row["protocol"].strip().lower())
                tup = FiveTuple(
                    str(ipaddress.ip_address(row["src_ip"].strip())),
                    str(ipaddress.ip_address(row["dst_ip"].strip())),
                    int(row["src_port"]), int(row["dst_port"]), proto,
                )
                out.append(AttackWindow(tup, float(row["start_time"]), float(row["end_time"]),
                                        row["attack_name"].strip()))
            except (ValueError, TypeError, AttributeError) as exc:
                raise FormatError(str(exc), line=line, path=path) from exc
    return out
