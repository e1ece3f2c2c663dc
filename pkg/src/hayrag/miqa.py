"""Multi-image instruction-tuning data from single-image QA items.

Items are clustered by shared question keywords (stopword removal plus
light suffix stemming); distractor images are then drawn only from
other clusters, so a distractor can never be topically related to the
question it pollutes. Image order is shuffled so the relevant image
lands at a uniformly random position.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from ._seeds import derive_seed, rng_for

STOPWORDS = frozenset(
    """a an and are as at be by can could did do does for from had has have how i in is it its
    of on or that the their them then there these they this to was were what when where which
    who will with would you your""".split()
)

_WORD = re.compile(r"[a-z]+")
_SUFFIXES = ("ing", "edly", "ed", "es", "ly", "s")


def stem(word: str) -> str:
    """Trim one common suffix; never below three characters."""
    for suf in _SUFFIXES:
        if word.endswith(suf) and len(word) - len(suf) >= 3:
            return word[: -len(suf)]
    return word


def extract_keywords(text: str) -> frozenset[str]:
    words = _WORD.findall(text.lower())
    return frozenset(stem(w) for w in words if w not in STOPWORDS and len(w) > 1)


@dataclass
class QAItem:
    item_id: str
    image_id: str
    question: str
    answer: str
    keywords: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.keywords:
            self.keywords = extract_keywords(self.question)


@dataclass
class MIQAItem:
    item_id: str
    question: str
    answer: str
    images: list[str]
    relevant_mask: list[int]  # 1 per image slot


def cluster_by_keywords(items: list[QAItem], min_overlap: int = 1) -> list[int]:
    """Greedy connected components over the shared-keyword graph.
    Returns a cluster id per item. min_overlap=0 joins everything."""
    if not items:
        raise ValueError("no items to cluster")
    n = len(items)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    if min_overlap == 0:
        for i in range(1, n):
            union(0, i)
    else:
        by_keyword: dict[str, list[int]] = {}
        for i, item in enumerate(items):
            for kw in item.keywords:
                by_keyword.setdefault(kw, []).append(i)
        if min_overlap == 1:
            for members in by_keyword.values():
                for other in members[1:]:
                    union(members[0], other)
        else:
            for i in range(n):
                for j in range(i + 1, n):
                    if len(items[i].keywords & items[j].keywords) >= min_overlap:
                        union(i, j)
    roots = sorted({find(i) for i in range(n)})
    remap = {r: k for k, r in enumerate(roots)}
    return [remap[find(i)] for i in range(n)]


def inject_distractors(
    item: QAItem,
    items: list[QAItem],
    clusters: list[int],
    k_range: tuple[int, int] = (2, 10),
    seed: int = 0,
) -> MIQAItem:
    """k ~ uniform{k_range} distractor images from unrelated clusters,
    then a full shuffle. Deterministic given (seed, item_id)."""
    idx = next(i for i, it in enumerate(items) if it.item_id == item.item_id)
    own = clusters[idx]
    pool = sorted(
        {items[i].image_id for i in range(len(items)) if clusters[i] != own}
        - {item.image_id}
    )
    rng = rng_for(seed, "inject", item.item_id)
    k = int(rng.integers(k_range[0], k_range[1] + 1))
    if len(pool) < k:
        raise ValueError(
            f"{item.item_id}: need {k} unrelated distractor images, only {len(pool)} available"
        )
    picks = rng.choice(len(pool), size=k, replace=False)
    images = [item.image_id] + [pool[int(i)] for i in picks]
    order = rng.permutation(len(images))
    images = [images[int(i)] for i in order]
    mask = [1 if img == item.image_id else 0 for img in images]
    return MIQAItem(
        item_id=item.item_id,
        question=item.question,
        answer=item.answer,
        images=images,
        relevant_mask=mask,
    )


def build_mixture(sources: list[list], weights: list[float], seed: int = 0, n_draws: int | None = None):
    """Interleave sources with per-draw weighted source choice; items
    within a source are consumed in order, cycling when exhausted.
    Returns (items, stats)."""
    if len(sources) != len(weights) or not sources:
        raise ValueError("sources and weights must align and be non-empty")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    for k, src in enumerate(sources):
        if not src:
            raise ValueError(f"source {k} is empty")
    total = sum(weights)
    probs = [w / total for w in weights]
    if n_draws is None:
        n_draws = sum(len(s) for s in sources)
    rng = rng_for(seed, "mixture")
    cursors = [0] * len(sources)
    out = []
    counts = [0] * len(sources)
    for _ in range(n_draws):
        src = int(rng.choice(len(sources), p=probs)) if len(sources) > 1 else 0
        items = sources[src]
        out.append(items[cursors[src] % len(items)])
        cursors[src] += 1
        counts[src] += 1
    rel_counts: dict[int, int] = {}
    for it in out:
        if isinstance(it, MIQAItem):
            n_rel = sum(it.relevant_mask)
            rel_counts[n_rel] = rel_counts.get(n_rel, 0) + 1
    stats = {
        "per_source": counts,
        "n_draws": n_draws,
        "relevant_count_distribution": {str(k): v for k, v in sorted(rel_counts.items())},
    }
    return out, stats


# ---------------------------------------------------------------------------
# JSON-lines serialization


def miqa_to_line(item: MIQAItem) -> str:
    doc = {
        "id": item.item_id,
        "question": item.question,
        "answer": item.answer,
        "images": item.images,
        "relevant": item.relevant_mask,
    }
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":"))


def save_miqa(items: list[MIQAItem], path) -> None:
    Path(path).write_text("\n".join(miqa_to_line(i) for i in items) + "\n", encoding="utf-8")


def load_miqa(path) -> list[MIQAItem]:
    items = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        items.append(
            MIQAItem(
                item_id=doc["id"],
                question=doc["question"],
                answer=doc["answer"],
                images=list(doc["images"]),
                relevant_mask=list(doc["relevant"]),
            )
        )
    return items


def load_qa_items(path) -> list[QAItem]:
    """QA JSON-lines: {"id","image","question","answer"} per line."""
    items = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        items.append(
            QAItem(
                item_id=doc["id"],
                image_id=doc["image"],
                question=doc["question"],
                answer=doc["answer"],
            )
        )
    return items
