"""Object-annotated image corpora and the label presence index.

Annotations are closed-world: a label absent from an image's list means
the object is absent. Labels are compared case-sensitively after
whitespace trimming. A corpus is immutable once loaded.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ._seeds import rng_for
from .errors import CorpusFormatError


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    object_labels: frozenset[str]
    source_path: str = ""


@dataclass
class PresenceIndex:
    """Inverted index label -> ascending-sorted, duplicate-free image ids."""

    by_label: dict[str, list[str]] = field(default_factory=dict)
    label_universe: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, records: dict[str, ImageRecord]) -> "PresenceIndex":
        by_label: dict[str, set[str]] = {}
        for rec in records.values():
            for label in rec.object_labels:
                by_label.setdefault(label, set()).add(rec.image_id)
        return cls(
            by_label={label: sorted(ids) for label, ids in by_label.items()},
            label_universe=sorted(by_label),
        )


class Corpus:
    def __init__(self, records: list[ImageRecord]):
        self.records: dict[str, ImageRecord] = {}
        for rec in records:
            if rec.image_id in self.records:
                raise CorpusFormatError(f"duplicate image_id: {rec.image_id}")
            self.records[rec.image_id] = rec
        self.index = PresenceIndex.build(self.records)
        self.all_ids: list[str] = sorted(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def labels_of(self, image_id: str) -> frozenset[str]:
        return self.records[image_id].object_labels

    def path_of(self, image_id: str) -> str:
        return self.records[image_id].source_path

    @property
    def label_universe(self) -> list[str]:
        return self.index.label_universe

    def digest(self) -> str:
        """sha256 over a canonical serialization, stable across file
        whitespace and record order."""
        canon = [
            {"id": rec.image_id, "labels": sorted(rec.object_labels), "path": rec.source_path}
            for rec in (self.records[i] for i in self.all_ids)
        ]
        payload = json.dumps({"images": canon}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_corpus(path) -> Corpus:
    """Load a corpus JSON file: {"images":[{"id","labels","path"},...]}."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(
            f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    return corpus_from_dict(doc, source=str(path))


def corpus_from_dict(doc, source: str = "<dict>") -> Corpus:
    if not isinstance(doc, dict) or "images" not in doc:
        raise CorpusFormatError(f"{source}: expected top-level object with an 'images' list")
    records = []
    for entry in doc["images"]:
        if "id" not in entry:
            raise CorpusFormatError(f"{source}: image entry missing 'id': {entry!r}")
        labels = frozenset(str(l).strip() for l in entry.get("labels", []))
        labels = frozenset(l for l in labels if l)
        records.append(
            ImageRecord(
                image_id=str(entry["id"]).strip(),
                object_labels=labels,
                source_path=str(entry.get("path", "")),
            )
        )
    return Corpus(records)


def corpus_to_dict(corpus: Corpus) -> dict:
    return {
        "images": [
            {
                "id": rec.image_id,
                "labels": sorted(rec.object_labels),
                "path": rec.source_path,
            }
            for rec in (corpus.records[i] for i in corpus.all_ids)
        ]
    }


def save_corpus(corpus: Corpus, path) -> None:
    Path(path).write_text(
        json.dumps(corpus_to_dict(corpus), indent=1) + "\n", encoding="utf-8"
    )


def images_with(corpus: Corpus, label: str) -> list[str]:
    """Sorted ids of images annotated with the label; unknown label -> []."""
    return list(corpus.index.by_label.get(label, []))


def images_excluding(corpus: Corpus, labels) -> list[str]:
    """Sorted ids of images containing none of the given labels."""
    banned = set(labels)
    if not banned:
        return list(corpus.all_ids)
    out = []
    for image_id in corpus.all_ids:
        if corpus.records[image_id].object_labels.isdisjoint(banned):
            out.append(image_id)
    return out


def synthetic_corpus(
    n_images: int,
    n_labels: int = 50,
    labels_per_image: tuple[int, int] = (1, 4),
    seed: int = 0,
) -> Corpus:
    """Random corpus for tests and desk-scale runs. Deterministic."""
    rng = rng_for(seed, "synthetic_corpus")
    universe = [f"obj{k:02d}" for k in range(n_labels)]
    lo, hi = labels_per_image
    lo, hi = min(lo, n_labels), min(hi, n_labels)
    records = []
    for i in range(n_images):
        count = int(rng.integers(lo, hi + 1))
        chosen = rng.choice(n_labels, size=count, replace=False)
        records.append(
            ImageRecord(
                image_id=f"img{i:06d}",
                object_labels=frozenset(universe[int(c)] for c in chosen),
                source_path=f"images/img{i:06d}.jpg",
            )
        )
    return Corpus(records)
