"""Non-LMM baselines and scripted answerers.

The detector oracle pairs per-image detection confidences with simple
control flow; with annotation-perfect detections it is a 100% upper
bound. Caption aggregation is the query-unaware two-stage baseline.
Scripted adapters (always-yes, ground-truth, noisy, positional) close
the evaluation loop without any model and derive their per-question
randomness from (seed, question id) so transcripts are independent of
scheduling order.
"""

from __future__ import annotations

import json
import math
import re
from importlib import resources
from pathlib import Path

from ._seeds import rng_for
from .adapters import AdapterRequest, PROMPT_PREFIX, Transcript, Verdict, normalize_answer
from .corpus import Corpus
from .haystack import BenchmarkSet, QuestionSpec, render_question

CAPTION_PROMPT = "Please provide detailed and concrete captions of the image"
CAPTION_QA_TEMPLATE_ASSET = "caption_qa_prompt_v1.txt"

_Q_PATTERNS = [
    ("single", re.compile(r"For the image with (.+), is there (.+)\?\s*$")),
    ("multi_all", re.compile(r"For all images with (.+), do all of them contain (.+)\?\s*$")),
    ("multi_any", re.compile(r"For all images with (.+), do any of them contain (.+)\?\s*$")),
]


def parse_question(text: str) -> tuple[str, str, str]:
    """Recover (mode, anchor, target) from rendered question text."""
    if text.startswith(PROMPT_PREFIX):
        text = text[len(PROMPT_PREFIX):]
    for mode, pat in _Q_PATTERNS:
        m = pat.match(text.strip())
        if m:
            return mode, m.group(1), m.group(2)
    raise ValueError(f"unrecognized question template: {text!r}")


# ---------------------------------------------------------------------------
# detector oracle


class DetectionTable:
    """Sparse (image_id, label) -> confidence; missing entries are 0."""

    def __init__(self, entries: dict[tuple[str, str], float] | None = None):
        self.entries = dict(entries or {})

    def conf(self, image_id: str, label: str) -> float:
        return self.entries.get((image_id, label), 0.0)

    @classmethod
    def perfect(cls, corpus: Corpus) -> "DetectionTable":
        entries = {}
        for image_id in corpus.all_ids:
            for label in corpus.labels_of(image_id):
                entries[(image_id, label)] = 1.0
        return cls(entries)

    def degraded(self, tpr: float, seed: int = 0) -> "DetectionTable":
        """Keep each true detection with probability tpr (no false positives)."""
        rng = rng_for(seed, "degrade_detections", tpr)
        entries = {}
        for key in sorted(self.entries):
            if rng.random() < tpr:
                entries[key] = self.entries[key]
        return DetectionTable(entries)

    def save(self, path) -> None:
        doc = {
            "detections": [
                {"image": img, "label": label, "conf": conf}
                for (img, label), conf in sorted(self.entries.items())
            ]
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DetectionTable":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({(d["image"], d["label"]): float(d["conf"]) for d in doc["detections"]})


def detector_oracle_single(
    detections: DetectionTable, spec: QuestionSpec, target_threshold: float = 0.5
) -> str:
    if spec.mode != "single":
        raise ValueError("detector_oracle_single requires a single-needle spec")
    if not spec.haystack_ids:
        raise ValueError("empty haystack")
    best = spec.haystack_ids[0]
    best_conf = detections.conf(best, spec.anchor)
    for image_id in spec.haystack_ids[1:]:
        c = detections.conf(image_id, spec.anchor)
        if c > best_conf:  # strict: ties keep the earliest position
            best, best_conf = image_id, c
    return "yes" if detections.conf(best, spec.target) >= target_threshold else "no"


def detector_oracle_multi(
    detections: DetectionTable,
    spec: QuestionSpec,
    anchor_threshold: float = 0.5,
    target_threshold: float = 0.5,
) -> str:
    if spec.mode not in ("multi_all", "multi_any"):
        raise ValueError("detector_oracle_multi requires a multi-needle spec")
    candidates = [
        i for i in spec.haystack_ids if detections.conf(i, spec.anchor) >= anchor_threshold
    ]
    if not candidates:
        return "no"
    hits = [detections.conf(i, spec.target) >= target_threshold for i in candidates]
    verdict = all(hits) if spec.mode == "multi_all" else any(hits)
    return "yes" if verdict else "no"


def detector_oracle_answer(
    detections: DetectionTable,
    spec: QuestionSpec,
    anchor_threshold: float = 0.5,
    target_threshold: float = 0.5,
) -> str:
    if spec.mode == "single":
        return detector_oracle_single(detections, spec, target_threshold)
    return detector_oracle_multi(detections, spec, anchor_threshold, target_threshold)


def oracle_transcript(
    benchmark: BenchmarkSet,
    detections: DetectionTable,
    anchor_threshold: float = 0.5,
    target_threshold: float = 0.5,
) -> Transcript:
    transcript = Transcript(meta={"adapter": "detector_oracle"})
    for spec in benchmark.specs:
        answer = detector_oracle_answer(detections, spec, anchor_threshold, target_threshold)
        transcript.verdicts[spec.question_id] = Verdict(
            raw_text=answer.capitalize(), normalized=answer
        )
    return transcript


# ---------------------------------------------------------------------------
# caption aggregation


def load_caption_template() -> str:
    ref = resources.files("hayrag.assets").joinpath(CAPTION_QA_TEMPLATE_ASSET)
    return ref.read_text(encoding="utf-8")


def assemble_caption_prompt(captions: list[str], question_text: str) -> str:
    blocks = []
    for k, caption in enumerate(captions, start=1):
        blocks.append(f"# Caption ({k})\n{caption}")
    return load_caption_template().format(captions="\n".join(blocks), question=question_text)


def caption_aggregate(spec: QuestionSpec, captioner, llm, corpus: Corpus | None = None) -> Verdict:
    """Caption every haystack image, then answer from the aggregate."""
    if not spec.haystack_ids:
        raise ValueError("empty haystack")
    captions = []
    for k, image_id in enumerate(spec.haystack_ids):
        path = corpus.path_of(image_id) if corpus is not None else ""
        req = AdapterRequest(
            id=f"{spec.question_id}:cap{k}",
            question=CAPTION_PROMPT,
            images=[{"id": image_id, "path": path}],
            meta={"mode": "caption", "haystack_size": 1},
        )
        try:
            captions.append(str(captioner.answer(req)))
        except Exception as exc:
            return Verdict(raw_text="", normalized="noncompliant", error=f"captioner: {exc}")
    prompt = assemble_caption_prompt(captions, render_question(spec))
    req = AdapterRequest(
        id=f"{spec.question_id}:qa",
        question=prompt,
        images=[],
        meta={"mode": spec.mode, "haystack_size": spec.haystack_size},
    )
    try:
        reply = str(llm.answer(req))
    except Exception as exc:
        return Verdict(raw_text="", normalized="noncompliant", error=f"llm: {exc}")
    return normalize_answer(reply)


class LabelListCaptioner:
    """Scripted captioner: emits the image's annotated labels verbatim."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus

    def answer(self, req: AdapterRequest) -> str:
        image_id = req.images[0]["id"]
        labels = sorted(self.corpus.labels_of(image_id))
        if not labels:
            return "This image contains no annotated objects."
        return "This image contains: " + ", ".join(labels) + "."


class CaptionReasonerStub:
    """Scripted caption parser standing in for the aggregation LLM."""

    _caption_labels = re.compile(r"This image contains: (.+)\.")
    _question = re.compile(
        r"please answer the following question: (.+?)\. Please assume", re.DOTALL
    )
    _caption_block = re.compile(r"# Caption \(\d+\)\n(.*?)(?=\n# Caption \(|\n\nBased)", re.DOTALL)

    def answer(self, req: AdapterRequest) -> str:
        captions = self._caption_block.findall(req.question)
        qm = self._question.search(req.question)
        if qm is None:
            return "I could not find the question."
        question = qm.group(1).strip()
        if not question.endswith("?"):
            question += "?"
        mode, anchor, target = parse_question(question)
        label_sets = []
        for cap in captions:
            m = self._caption_labels.search(cap)
            label_sets.append(set(s.strip() for s in m.group(1).split(",")) if m else set())
        relevant = [ls for ls in label_sets if anchor in ls]
        if not relevant:
            return "No"
        hits = [target in ls for ls in relevant]
        if mode == "single":
            verdict = hits[0]
        elif mode == "multi_all":
            verdict = all(hits)
        else:
            verdict = any(hits)
        return "Yes" if verdict else "No"


# ---------------------------------------------------------------------------
# scripted adapters


def mid_dip_curve(f: float) -> float:
    """Accuracy curve with a pronounced mid-context dip."""
    return 0.9 - 0.4 * math.exp(-((f - 0.5) ** 2) / 0.02)


class _ScriptedBase:
    def __init__(self, corpus: Corpus, seed: int = 0, max_images: int | None = None):
        self.corpus = corpus
        self.seed = seed
        self.max_images = max_images

    def _truth(self, req: AdapterRequest) -> tuple[str, list[int]]:
        """Ground-truth answer and the positions of anchor-bearing images."""
        mode, anchor, target = parse_question(req.question)
        positions = []
        hits = []
        for pos, image in enumerate(req.images):
            labels = self.corpus.labels_of(image["id"])
            if anchor in labels:
                positions.append(pos)
                hits.append(target in labels)
        if not positions:
            return "no", positions
        if mode == "single":
            verdict = hits[0]
        elif mode == "multi_all":
            verdict = all(hits)
        else:
            verdict = any(hits)
        return ("yes" if verdict else "no"), positions


class AlwaysYesAdapter:
    max_images = None

    def answer(self, req: AdapterRequest) -> str:
        return "Yes"


class GroundTruthAdapter(_ScriptedBase):
    def answer(self, req: AdapterRequest) -> str:
        truth, _ = self._truth(req)
        return truth.capitalize()


class NoisyAdapter(_ScriptedBase):
    def __init__(self, corpus, p_correct: float, seed: int = 0, max_images=None):
        super().__init__(corpus, seed, max_images)
        self.p_correct = p_correct

    def answer(self, req: AdapterRequest) -> str:
        truth, _ = self._truth(req)
        rng = rng_for(self.seed, "noisy", req.id)
        if rng.random() < self.p_correct:
            return truth.capitalize()
        return "No" if truth == "yes" else "Yes"


class PositionalAdapter(_ScriptedBase):
    """Correct with probability curve(depth_fraction of the first needle)."""

    def __init__(self, corpus, curve=mid_dip_curve, seed: int = 0, max_images=None):
        super().__init__(corpus, seed, max_images)
        self.curve = curve

    def answer(self, req: AdapterRequest) -> str:
        truth, positions = self._truth(req)
        n = len(req.images)
        frac = 0.0 if n <= 1 or not positions else positions[0] / (n - 1)
        rng = rng_for(self.seed, "positional", req.id)
        if rng.random() < self.curve(frac):
            return truth.capitalize()
        return "No" if truth == "yes" else "Yes"


def scripted_adapter(
    profile: str,
    corpus: Corpus | None = None,
    seed: int = 0,
    p_correct: float = 0.5,
    curve=mid_dip_curve,
    max_images: int | None = None,
):
    """Factory for the desk-scale test adapters."""
    if profile == "always_yes":
        return AlwaysYesAdapter()
    if corpus is None:
        raise ValueError(f"profile {profile!r} requires a corpus")
    if profile == "ground_truth":
        return GroundTruthAdapter(corpus, seed, max_images)
    if profile == "noisy":
        return NoisyAdapter(corpus, p_correct, seed, max_images)
    if profile == "positional":
        return PositionalAdapter(corpus, curve, seed, max_images)
    raise ValueError(f"unknown scripted profile: {profile}")
