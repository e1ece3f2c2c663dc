"""Needle-in-a-haystack benchmark generation.

Every generated set is exactly yes/no balanced: questions are emitted in
pairs, one yes-instance and one no-instance per sampled (anchor, target)
label pair. Distractors never contain the anchor; some may contain the
target, which is what makes them distracting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._seeds import derive_seed
from .corpus import Corpus, images_excluding, images_with
from .errors import GenerationError

MODES = ("single", "multi_all", "multi_any")

TEMPLATES = {
    "single": "For the image with {anchor}, is there {target}?",
    "multi_all": "For all images with {anchor}, do all of them contain {target}?",
    "multi_any": "For all images with {anchor}, do any of them contain {target}?",
}

DEFAULT_SIZE_GRID = (1, 2, 3, 5, 10, 20, 50, 100, 500, 1000, 10000)


@dataclass
class QuestionSpec:
    question_id: str
    mode: str
    anchor: str
    target: str
    answer: str  # "yes" | "no"
    needle_ids: list[str]
    haystack_ids: list[str]
    haystack_size: int
    seed: int


@dataclass
class BenchmarkSet:
    specs: list[QuestionSpec]
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.specs)

    def by_id(self) -> dict[str, QuestionSpec]:
        return {s.question_id: s for s in self.specs}


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations


def render_question(spec: QuestionSpec) -> str:
    return TEMPLATES[spec.mode].format(anchor=spec.anchor, target=spec.target)


def brute_force_answer(mode: str, target: str, relevant_ids, corpus: Corpus) -> str:
    """Ground truth by direct annotation lookup over the relevant images."""
    if not relevant_ids:
        raise ValueError("no relevant images to evaluate")
    has_target = [target in corpus.labels_of(i) for i in relevant_ids]
    if mode == "single":
        if len(relevant_ids) != 1:
            raise ValueError(f"single mode expects one relevant image, got {len(relevant_ids)}")
        verdict = has_target[0]
    elif mode == "multi_all":
        verdict = all(has_target)
    elif mode == "multi_any":
        verdict = any(has_target)
    else:
        raise ValueError(f"unknown mode: {mode}")
    return "yes" if verdict else "no"


def assemble_haystack(
    corpus: Corpus,
    needle_ids: list[str],
    size: int,
    anchor: str,
    rng: np.random.Generator,
    pool: list[str] | None = None,
) -> list[str]:
    """Embed the needles among uniform-without-replacement distractors.

    The distractor pool is every image lacking the anchor; pass `pool`
    to reuse a precomputed one. Needle positions are uniform random.
    """
    if size < len(needle_ids):
        raise GenerationError(f"size {size} smaller than needle count {len(needle_ids)}")
    if pool is None:
        pool = images_excluding(corpus, {anchor})
    n_dis = size - len(needle_ids)
    if n_dis > len(pool):
        raise GenerationError(
            f"anchor {anchor!r}: need {n_dis} distractors, only {len(pool)} available"
        )
    picks = rng.choice(len(pool), size=n_dis, replace=False) if n_dis else []
    distractors = [pool[int(i)] for i in picks]
    positions = sorted(int(p) for p in rng.choice(size, size=len(needle_ids), replace=False))
    haystack: list[str] = []
    needle_iter = iter(needle_ids)
    dis_iter = iter(distractors)
    pos_set = set(positions)
    for slot in range(size):
        haystack.append(next(needle_iter) if slot in pos_set else next(dis_iter))
    return haystack


def place_needle(haystack_ids: list[str], needle_id: str, depth_fraction: float) -> list[str]:
    """Move the needle to index floor(fraction * (N-1)), order otherwise kept."""
    if not 0.0 <= depth_fraction <= 1.0:
        raise ValueError(f"depth_fraction must be in [0, 1], got {depth_fraction}")
    if needle_id not in haystack_ids:
        raise ValueError(f"needle {needle_id!r} not in haystack")
    n = len(haystack_ids)
    idx = min(int(math.floor(depth_fraction * (n - 1))), n - 1)
    rest = [i for i in haystack_ids if i != needle_id]
    rest.insert(idx, needle_id)
    return rest


def _sample_ids(rng: np.random.Generator, ids: list[str], k: int) -> list[str]:
    picks = rng.choice(len(ids), size=k, replace=False)
    return [ids[int(i)] for i in picks]


def _pick_needles(rng, mode, answer, with_both, anchor_only, anchor_all, n_needles):
    """Needle ids satisfying the answer semantics, or None if impossible.

    with_both:  images with anchor and target
    anchor_only: images with anchor but not target
    anchor_all: all images with anchor
    """
    if mode == "single":
        src = with_both if answer == "yes" else anchor_only
        if not src:
            return None
        return _sample_ids(rng, src, 1)
    if mode == "multi_all":
        if answer == "yes":
            if len(with_both) < n_needles:
                return None
            return _sample_ids(rng, with_both, n_needles)
        if not anchor_only or len(anchor_all) < n_needles:
            return None
        lacking = _sample_ids(rng, anchor_only, 1)
        others = [i for i in anchor_all if i != lacking[0]]
        return lacking + _sample_ids(rng, others, n_needles - 1)
    if mode == "multi_any":
        if answer == "yes":
            if not with_both or len(anchor_all) < n_needles:
                return None
            first = _sample_ids(rng, with_both, 1)
            others = [i for i in anchor_all if i != first[0]]
            return first + _sample_ids(rng, others, n_needles - 1)
        if len(anchor_only) < n_needles:
            return None
        return _sample_ids(rng, anchor_only, n_needles)
    raise ValueError(f"unknown mode: {mode}")


def generate(
    corpus: Corpus,
    mode: str,
    n_questions: int,
    size: int,
    n_needles: int = 1,
    seed: int = 0,
    any_fraction: float = 0.5,
    max_attempts_per_pair: int = 60,
) -> BenchmarkSet:
    """Generate an exactly balanced benchmark.

    mode is one of "single", "multi_all", "multi_any", or "multi"
    (mixed ALL/ANY with `any_fraction` of pairs using ANY).
    """
    if mode == "single":
        if n_needles != 1:
            raise GenerationError("single mode requires n_needles=1")
    elif mode in ("multi_all", "multi_any", "multi"):
        if n_needles not in (2, 3):
            raise GenerationError("multi modes require n_needles in {2, 3}")
    else:
        raise GenerationError(f"unknown mode: {mode}")
    if n_questions % 2 != 0:
        raise GenerationError("n_questions must be even for exact yes/no balance")

    n_pairs = n_questions // 2
    pair_modes = []
    if mode == "multi":
        n_any = int(round(n_pairs * any_fraction))
        pair_modes = ["multi_any"] * n_any + ["multi_all"] * (n_pairs - n_any)
    else:
        pair_modes = [mode] * n_pairs

    pair_rng = np.random.default_rng(derive_seed(seed, "pairs"))
    labels = corpus.label_universe
    if len(labels) < 2:
        raise GenerationError("corpus needs at least two labels")

    pool_cache: dict[str, list[str]] = {}
    specs: list[QuestionSpec] = []
    counter = 0
    attempts_budget = max(200, max_attempts_per_pair * n_pairs)
    attempts = 0
    pair_idx = 0
    while pair_idx < n_pairs:
        if attempts >= attempts_budget:
            raise GenerationError(
                f"could not build {n_pairs} balanced pairs after {attempts} attempts "
                f"({pair_idx} built); corpus too constrained for size {size}"
            )
        attempts += 1
        anchor, target = (labels[int(i)] for i in pair_rng.choice(len(labels), 2, replace=False))
        pair_mode = pair_modes[pair_idx]

        anchor_all = images_with(corpus, anchor)
        target_set = set(images_with(corpus, target))
        with_both = [i for i in anchor_all if i in target_set]
        anchor_only = [i for i in anchor_all if i not in target_set]
        if anchor not in pool_cache:
            pool_cache[anchor] = images_excluding(corpus, {anchor})
        pool = pool_cache[anchor]
        if len(pool) < size - n_needles:
            continue

        instance_specs = []
        for answer in ("yes", "no"):
            qseed = derive_seed(seed, "question", pair_idx, answer)
            qrng = np.random.default_rng(qseed)
            needles = _pick_needles(
                qrng, pair_mode, answer, with_both, anchor_only, anchor_all, n_needles
            )
            if needles is None:
                instance_specs = None
                break
            haystack = assemble_haystack(corpus, needles, size, anchor, qrng, pool=pool)
            needle_set = set(needles)
            ordered_needles = [i for i in haystack if i in needle_set]
            instance_specs.append(
                QuestionSpec(
                    question_id=f"q{counter + len(instance_specs):05d}",
                    mode=pair_mode,
                    anchor=anchor,
                    target=target,
                    answer=answer,
                    needle_ids=ordered_needles,
                    haystack_ids=haystack,
                    haystack_size=size,
                    seed=qseed,
                )
            )
        if instance_specs is None:
            continue
        specs.extend(instance_specs)
        counter += 2
        pair_idx += 1

    metadata = {
        "generator_version": __version__,
        "corpus_digest": corpus.digest(),
        "seed": seed,
        "sizes": [size],
        "mode": mode,
        "n_questions": n_questions,
        "n_needles": n_needles,
    }
    if mode == "multi":
        metadata["any_fraction"] = any_fraction
    return BenchmarkSet(specs=specs, metadata=metadata)


def subset_small(benchmark: BenchmarkSet, k: int, seed: int = 0) -> BenchmarkSet:
    """Stratified subsample keeping exact yes/no balance and mode shares."""
    if k % 2 != 0:
        raise GenerationError("k must be even to preserve exact balance")
    if k > len(benchmark.specs):
        raise GenerationError(f"k={k} exceeds benchmark size {len(benchmark.specs)}")

    strata: dict[tuple[str, str], list[QuestionSpec]] = {}
    for spec in benchmark.specs:
        strata.setdefault((spec.mode, spec.answer), []).append(spec)
    modes = sorted({m for m, _ in strata})
    half = k // 2
    n_half = len(benchmark.specs) // 2

    # apportion k/2 yes (and matching no) across modes by largest remainder
    raw = {m: half * len(strata.get((m, "yes"), [])) / n_half for m in modes}
    quota = {m: int(math.floor(raw[m])) for m in modes}
    for m in modes:
        quota[m] = min(quota[m], len(strata.get((m, "yes"), [])), len(strata.get((m, "no"), [])))
    remainders = sorted(modes, key=lambda m: (-(raw[m] - quota[m]), m))
    deficit = half - sum(quota.values())
    i = 0
    while deficit > 0 and i < 10 * len(modes):
        m = remainders[i % len(modes)]
        cap = min(len(strata.get((m, "yes"), [])), len(strata.get((m, "no"), [])))
        if quota[m] < cap:
            quota[m] += 1
            deficit -= 1
        i += 1
    if deficit > 0:
        raise GenerationError("benchmark strata cannot support a balanced subset")

    rng = np.random.default_rng(derive_seed(seed, "subset", k))
    chosen: list[QuestionSpec] = []
    for m in modes:
        for answer in ("yes", "no"):
            group = strata.get((m, answer), [])
            picks = rng.choice(len(group), size=quota[m], replace=False)
            chosen.extend(group[int(i)] for i in picks)
    chosen.sort(key=lambda s: s.question_id)

    metadata = dict(benchmark.metadata)
    metadata.update({"n_questions": k, "subset_seed": seed, "subset_of": len(benchmark.specs)})
    return BenchmarkSet(specs=chosen, metadata=metadata)


def validate_benchmark(benchmark: BenchmarkSet, corpus: Corpus) -> ValidationReport:
    """Check every structural invariant plus distractor meaningfulness."""
    report = ValidationReport()
    v = report.violations
    counts: dict[tuple[str, str], int] = {}
    distractor_total = 0
    distractor_with_target = 0

    for spec in benchmark.specs:
        qid = spec.question_id
        hay = spec.haystack_ids
        if len(hay) != spec.haystack_size:
            v.append(f"{qid}: haystack length {len(hay)} != declared size {spec.haystack_size}")
        if len(set(hay)) != len(hay):
            v.append(f"{qid}: duplicate ids in haystack")
        if spec.anchor == spec.target:
            v.append(f"{qid}: anchor equals target")
        unknown = [i for i in hay if i not in corpus.records]
        if unknown:
            v.append(f"{qid}: unknown image ids {unknown[:3]}")
            continue
        needle_set = set(spec.needle_ids)
        if not needle_set <= set(hay):
            v.append(f"{qid}: needles not contained in haystack")
        expected_needles = 1 if spec.mode == "single" else (2, 3)
        if spec.mode == "single":
            if len(spec.needle_ids) != 1:
                v.append(f"{qid}: single mode with {len(spec.needle_ids)} needles")
        elif len(spec.needle_ids) not in expected_needles:
            v.append(f"{qid}: multi mode with {len(spec.needle_ids)} needles")

        relevant = [i for i in hay if spec.anchor in corpus.labels_of(i)]
        if set(relevant) != needle_set:
            missing = needle_set - set(relevant)
            extra = set(relevant) - needle_set
            if missing:
                v.append(f"{qid}: needle(s) lacking anchor: {sorted(missing)[:3]}")
            if extra:
                v.append(f"{qid}: distractor(s) containing anchor: {sorted(extra)[:3]}")
        if relevant and len(relevant) == len(spec.needle_ids):
            try:
                truth = brute_force_answer(spec.mode, spec.target, relevant, corpus)
                if truth != spec.answer:
                    v.append(f"{qid}: recorded answer {spec.answer} != ground truth {truth}")
            except ValueError as exc:
                v.append(f"{qid}: {exc}")

        counts[(spec.mode, spec.answer)] = counts.get((spec.mode, spec.answer), 0) + 1
        for i in hay:
            if i in needle_set:
                continue
            distractor_total += 1
            if spec.target in corpus.labels_of(i):
                distractor_with_target += 1

    for m in sorted({mode for mode, _ in counts}):
        yes = counts.get((m, "yes"), 0)
        no = counts.get((m, "no"), 0)
        if yes != no:
            v.append(f"mode {m}: unbalanced answers, {yes} yes vs {no} no")

    frac = distractor_with_target / distractor_total if distractor_total else 0.0
    if distractor_total and distractor_with_target == 0:
        report.warnings.append("no meaningful distractors: none contains a target object")
    report.stats = {
        "n_questions": len(benchmark.specs),
        "per_mode": {f"{m}/{a}": c for (m, a), c in sorted(counts.items())},
        "distractor_target_fraction": frac,
    }
    return report


# ---------------------------------------------------------------------------
# serialization

def benchmark_to_dict(benchmark: BenchmarkSet) -> dict:
    questions = []
    for spec in benchmark.specs:
        questions.append(
            {
                "id": spec.question_id,
                "mode": spec.mode,
                "anchor": spec.anchor,
                "target": spec.target,
                "answer": spec.answer,
                "question_text": render_question(spec),
                "needles": list(spec.needle_ids),
                "haystack": list(spec.haystack_ids),
                "seed": spec.seed,
            }
        )
    return {"metadata": dict(benchmark.metadata), "questions": questions}


def benchmark_from_dict(doc: dict) -> BenchmarkSet:
    specs = []
    for q in doc["questions"]:
        specs.append(
            QuestionSpec(
                question_id=q["id"],
                mode=q["mode"],
                anchor=q["anchor"],
                target=q["target"],
                answer=q["answer"],
                needle_ids=list(q["needles"]),
                haystack_ids=list(q["haystack"]),
                haystack_size=len(q["haystack"]),
                seed=int(q["seed"]),
            )
        )
    return BenchmarkSet(specs=specs, metadata=dict(doc.get("metadata", {})))


def save_benchmark(benchmark: BenchmarkSet, path) -> None:
    payload = json.dumps(benchmark_to_dict(benchmark), ensure_ascii=False, separators=(",", ":"))
    Path(path).write_text(payload + "\n", encoding="utf-8")


def load_benchmark(path) -> BenchmarkSet:
    return benchmark_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
