"""Learned-query token compression plus a query-aware relevance filter.

An image's T patch-feature rows are compressed to exactly K tokens by a
small stack of cross-attention blocks driven by K learned query vectors
(no positional encoding, so the output is invariant to patch order).
A relevance head runs self-attention blocks over the concatenation of
the projected question feature and the compressed tokens and emits one
sigmoid score per (image, question) pair. Images scoring below the
threshold are dropped before any downstream reader sees them.

Training is plain SGD on a positively-weighted binary cross-entropy.
The first `schedule_split` fraction of steps draws balanced batches of
relevant pairs and easy negatives from the same question; the remaining
steps inject 2 to 10 sampled distractors per batch to harden the filter.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._seeds import derive_seed, rng_for
from .adapters import Transcript, Verdict
from .corpus import Corpus
from .errors import TrainingDiverged
from .haystack import BenchmarkSet
from .kernels import filter_select
from .neural import (
    ParamStore,
    block_backward,
    block_forward,
    gelu_backward,
    gelu_forward,
    init_block,
    init_linear,
    linear_backward,
    linear_forward,
    sigmoid_backward,
    sigmoid_forward,
)

FEATURE_MAGIC = b"VHF1"
BCE_CLAMP = 1e-12


@dataclass
class RetrieverConfig:
    threshold: float = 0.5
    top_k_cap: int | None = None
    positive_weight: float = 5.0
    schedule_split: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.positive_weight <= 0:
            raise ValueError("positive_weight must be positive")
        if not 0.0 < self.schedule_split < 1.0:
            raise ValueError("schedule_split must lie in (0, 1)")
        if self.top_k_cap is not None and self.top_k_cap < 1:
            raise ValueError("top_k_cap must be a positive integer")


@dataclass
class ModelConfig:
    dim: int
    out_dim: int | None = None
    n_queries: int = 32
    compressor_blocks: int = 2
    head_blocks: int = 2
    n_heads: int = 1
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.out_dim is None:
            self.out_dim = self.dim


def build_retriever(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Fresh parameters. Attention and projection maps start near the
    identity so feature similarity is visible to the attention from step
    one; plain uniform init leaves the match signal second-order and SGD
    takes far longer to find it."""
    store = ParamStore()
    rng = rng_for(seed, "retriever_init")
    store.add("queries", rng.standard_normal((cfg.n_queries, cfg.dim)))
    for b in range(cfg.compressor_blocks):
        init_block(store, f"comp{b}", cfg.dim, rng, mlp_ratio=cfg.mlp_ratio, attn_style="near_identity")
    init_linear(store, "proj.fc1", cfg.dim, cfg.out_dim, rng, style="near_identity")
    init_linear(store, "proj.fc2", cfg.out_dim, cfg.out_dim, rng, style="near_identity")
    init_linear(store, "qproj", cfg.dim, cfg.out_dim, rng, style="near_identity")
    for b in range(cfg.head_blocks):
        init_block(store, f"head{b}", cfg.out_dim, rng, mlp_ratio=cfg.mlp_ratio, attn_style="near_identity")
    init_linear(store, "readout", cfg.out_dim, 1, rng)
    store.add("_meta", np.array([[float(cfg.n_heads), float(cfg.mlp_ratio)]]))
    return store


def model_config_from_store(store: ParamStore) -> ModelConfig:
    n_queries, dim = store["queries"].shape
    out_dim = store["proj.fc2.w"].shape[1]
    comp = len({m.group(1) for m in (re.match(r"(comp\d+)\.", n) for n in store.tensors) if m})
    head = len({m.group(1) for m in (re.match(r"(head\d+)\.", n) for n in store.tensors) if m})
    n_heads, mlp_ratio = (int(v) for v in store["_meta"].ravel())
    return ModelConfig(
        dim=dim,
        out_dim=out_dim,
        n_queries=n_queries,
        compressor_blocks=comp,
        head_blocks=head,
        n_heads=n_heads,
        mlp_ratio=mlp_ratio,
    )


# ---------------------------------------------------------------------------
# forward / backward


def compress_forward(store: ParamStore, cfg: ModelConfig, patches: np.ndarray):
    if patches.ndim != 2 or patches.shape[1] != cfg.dim:
        raise ValueError(f"patch features must be (T, {cfg.dim}), got {patches.shape}")
    x = store["queries"]
    caches = []
    for b in range(cfg.compressor_blocks):
        x, c = block_forward(store, f"comp{b}", x, context=patches, n_heads=cfg.n_heads)
        caches.append(c)
    h, c1 = linear_forward(store, "proj.fc1", x)
    a, cg = gelu_forward(h)
    out, c2 = linear_forward(store, "proj.fc2", a)
    return out, (caches, c1, cg, c2, patches.shape)


def compress_backward(store: ParamStore, cfg: ModelConfig, dout: np.ndarray, cache):
    caches, c1, cg, c2, patch_shape = cache
    da = linear_backward(store, "proj.fc2", dout, c2)
    dh = gelu_backward(da, cg)
    dx = linear_backward(store, "proj.fc1", dh, c1)
    dpatches = np.zeros(patch_shape)
    for b in reversed(range(cfg.compressor_blocks)):
        dx, dctx = block_backward(store, f"comp{b}", dx, caches[b])
        dpatches += dctx
    store.accumulate("queries", dx)
    return dpatches


def compress(patches: np.ndarray, store: ParamStore, cfg: ModelConfig) -> np.ndarray:
    """K output tokens for any T >= 1 input rows."""
    out, _ = compress_forward(store, cfg, np.ascontiguousarray(patches, dtype=np.float64))
    return out


def head_forward(store: ParamStore, cfg: ModelConfig, compressed: np.ndarray, query: np.ndarray):
    """Self-attention over [query token; compressed tokens]; the scalar
    readout reads the query token's final state."""
    q2d = np.ascontiguousarray(query, dtype=np.float64).reshape(1, -1)
    if q2d.shape[1] != cfg.dim:
        raise ValueError(f"query feature must have dim {cfg.dim}, got {q2d.shape[1]}")
    qtok, cq = linear_forward(store, "qproj", q2d)
    x = np.concatenate([qtok, compressed], axis=0)
    caches = []
    for b in range(cfg.head_blocks):
        x, c = block_forward(store, f"head{b}", x, context=None, n_heads=cfg.n_heads)
        caches.append(c)
    logit, cr = linear_forward(store, "readout", x[:1])
    r, cs = sigmoid_forward(logit)
    return float(r[0, 0]), (cq, caches, x.shape[0], cr, cs)


def head_backward(store: ParamStore, cfg: ModelConfig, dr: float, cache):
    cq, caches, n_tokens, cr, cs = cache
    dlogit = sigmoid_backward(np.array([[dr]]), cs)
    dreadout_in = linear_backward(store, "readout", dlogit, cr)
    dx = np.zeros((n_tokens, dreadout_in.shape[1]))
    dx[0] = dreadout_in[0]
    for b in reversed(range(cfg.head_blocks)):
        dx, _ = block_backward(store, f"head{b}", dx, caches[b])
    dqtok, dcompressed = dx[:1], dx[1:]
    dquery = linear_backward(store, "qproj", dqtok, cq)
    return dcompressed, dquery


def encode_image(
    image_features: np.ndarray, query_features: np.ndarray, store: ParamStore, cfg: ModelConfig
):
    """(compressed tokens F, relevance score R) for one image and query."""
    f, _ = compress_forward(store, cfg, np.ascontiguousarray(image_features, dtype=np.float64))
    r, _ = head_forward(store, cfg, f, query_features)
    return f, r


def relevance_of_compressed(
    compressed: np.ndarray, query_features: np.ndarray, store: ParamStore, cfg: ModelConfig
) -> float:
    r, _ = head_forward(store, cfg, compressed, query_features)
    return r


# ---------------------------------------------------------------------------
# loss and filtering


def weighted_bce(pred: float, label: int, w_pos: float):
    """loss = -(w_pos * y * ln p + (1 - y) * ln(1 - p)); returns
    (loss, dloss/dpred, clamped)."""
    clamped = not (BCE_CLAMP <= pred <= 1.0 - BCE_CLAMP)
    p = min(max(pred, BCE_CLAMP), 1.0 - BCE_CLAMP)
    y = float(label)
    loss = -(w_pos * y * math.log(p) + (1.0 - y) * math.log(1.0 - p))
    grad = -(w_pos * y / p) + (1.0 - y) / (1.0 - p)
    return loss, grad, clamped


def filter_relevant(scores, config: RetrieverConfig) -> list[int]:
    """Indices scoring >= threshold, best first; never empty (argmax
    fallback keeps at least one image flowing to the reader)."""
    arr = np.ascontiguousarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot filter an empty score list")
    cap = -1 if config.top_k_cap is None else int(config.top_k_cap)
    return [int(i) for i in filter_select(arr, float(config.threshold), cap)]


# ---------------------------------------------------------------------------
# synthetic features


@dataclass
class FeatureQuestion:
    qid: str
    anchor: str
    query: np.ndarray  # (d,)
    candidate_idx: np.ndarray  # int64 indices into FeatureSet.patches
    labels: np.ndarray  # uint8, 1 iff candidate image contains the anchor


@dataclass
class FeatureSet:
    image_ids: list[str]
    patches: np.ndarray  # (n_images, T, d)
    questions: list[FeatureQuestion] = field(default_factory=list)

    @property
    def t(self) -> int:
        return self.patches.shape[1]

    @property
    def dim(self) -> int:
        return self.patches.shape[2]

    def index_of(self) -> dict[str, int]:
        return {image_id: i for i, image_id in enumerate(self.image_ids)}


def label_prototype(label: str, d: int, seed: int) -> np.ndarray:
    return rng_for(seed, "proto", label).standard_normal(d)


def synth_features(
    corpus: Corpus,
    d: int = 64,
    t: int = 576,
    noise_sigma: float = 0.1,
    seed: int = 0,
    benchmark: BenchmarkSet | None = None,
) -> FeatureSet:
    """Stand-in for a frozen vision encoder.

    Each image's T rows repeat its label prototypes round-robin (sorted
    label order, so equal label sets give equal noise-free features)
    plus Gaussian noise. Query features are the anchor prototype.
    Relevance labels come straight from the annotations.
    """
    if d < 8:
        raise ValueError("feature dim must be >= 8")
    protos = {label: label_prototype(label, d, seed) for label in corpus.label_universe}
    image_ids = list(corpus.all_ids)
    patches = np.zeros((len(image_ids), t, d))
    for i, image_id in enumerate(image_ids):
        labels = sorted(corpus.labels_of(image_id))
        if labels:
            for r in range(t):
                patches[i, r] = protos[labels[r % len(labels)]]
        if noise_sigma > 0:
            patches[i] += noise_sigma * rng_for(seed, "imgnoise", image_id).standard_normal((t, d))

    idx = {image_id: i for i, image_id in enumerate(image_ids)}
    questions = []
    if benchmark is not None:
        for spec in benchmark.specs:
            cand = np.array([idx[i] for i in spec.haystack_ids], dtype=np.int64)
            labels = np.array(
                [1 if spec.anchor in corpus.labels_of(i) else 0 for i in spec.haystack_ids],
                dtype=np.uint8,
            )
            questions.append(
                FeatureQuestion(
                    qid=spec.question_id,
                    anchor=spec.anchor,
                    query=protos[spec.anchor].copy(),
                    candidate_idx=cand,
                    labels=labels,
                )
            )
    else:
        all_idx = np.arange(len(image_ids), dtype=np.int64)
        for anchor in corpus.label_universe:
            labels = np.array(
                [1 if anchor in corpus.labels_of(i) else 0 for i in image_ids], dtype=np.uint8
            )
            if labels.sum() == 0:
                continue
            questions.append(
                FeatureQuestion(
                    qid=f"label:{anchor}",
                    anchor=anchor,
                    query=protos[anchor].copy(),
                    candidate_idx=all_idx.copy(),
                    labels=labels,
                )
            )
    return FeatureSet(image_ids=image_ids, patches=patches, questions=questions)


# ---------------------------------------------------------------------------
# feature file IO (one question per file)


def _write_question_file(fs: FeatureSet, q: FeatureQuestion, path: Path) -> None:
    t, d = fs.t, fs.dim
    chunks = [FEATURE_MAGIC, struct.pack("<III", len(q.candidate_idx), t, d)]
    for local, img_idx in enumerate(q.candidate_idx):
        image_id = fs.image_ids[int(img_idx)]
        raw = image_id.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(np.ascontiguousarray(fs.patches[int(img_idx)], dtype="<f8").tobytes())
        chunks.append(struct.pack("<B", int(q.labels[local])))
    # trailing query record: id bytes then a 1 x d payload
    qid_raw = f"{q.qid}\x1f{q.anchor}".encode("utf-8")
    chunks.append(struct.pack("<I", len(qid_raw)))
    chunks.append(qid_raw)
    chunks.append(np.ascontiguousarray(q.query, dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))


def save_featureset(fs: FeatureSet, path) -> list[Path]:
    """Single question -> one file; several questions -> a directory of
    files named by question index."""
    path = Path(path)
    if len(fs.questions) == 1 and not path.is_dir() and path.suffix:
        _write_question_file(fs, fs.questions[0], path)
        return [path]
    path.mkdir(parents=True, exist_ok=True)
    written = []
    for i, q in enumerate(fs.questions):
        safe = re.sub(r"[^A-Za-z0-9_.-]", "_", q.qid)
        p = path / f"{i:05d}_{safe}.vhf"
        _write_question_file(fs, q, p)
        written.append(p)
    return written


def _read_question_file(blob: bytes):
    if blob[:4] != FEATURE_MAGIC:
        raise ValueError(f"bad feature magic: {blob[:4]!r}")
    count, t, d = struct.unpack_from("<III", blob, 4)
    off = 16
    ids, payloads, labels = [], [], []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        ids.append(blob[off : off + nlen].decode("utf-8"))
        off += nlen
        payloads.append(
            np.frombuffer(blob, dtype="<f8", count=t * d, offset=off).astype(np.float64).reshape(t, d)
        )
        off += 8 * t * d
        labels.append(blob[off])
        off += 1
    qid, anchor, query = "", "", np.zeros(d)
    if off < len(blob):
        (qlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        tag = blob[off : off + qlen].decode("utf-8")
        off += qlen
        qid, _, anchor = tag.partition("\x1f")
        query = np.frombuffer(blob, dtype="<f8", count=d, offset=off).astype(np.float64)
    return ids, payloads, np.array(labels, dtype=np.uint8), qid, anchor, query


def load_featureset(path) -> FeatureSet:
    path = Path(path)
    files = sorted(path.glob("*.vhf")) if path.is_dir() else [path]
    if not files:
        raise ValueError(f"no .vhf files under {path}")
    image_ids: list[str] = []
    index: dict[str, int] = {}
    patch_list: list[np.ndarray] = []
    questions: list[FeatureQuestion] = []
    for f in files:
        ids, payloads, labels, qid, anchor, query = _read_question_file(f.read_bytes())
        cand = np.empty(len(ids), dtype=np.int64)
        for k, image_id in enumerate(ids):
            if image_id not in index:
                index[image_id] = len(image_ids)
                image_ids.append(image_id)
                patch_list.append(payloads[k])
            cand[k] = index[image_id]
        questions.append(
            FeatureQuestion(
                qid=qid or f.stem,
                anchor=anchor,
                query=query,
                candidate_idx=cand,
                labels=labels,
            )
        )
    return FeatureSet(image_ids=image_ids, patches=np.stack(patch_list), questions=questions)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingLog:
    entries: list[dict] = field(default_factory=list)
    diverged: bool = False

    def to_dict(self) -> dict:
        return {"diverged": self.diverged, "entries": self.entries}


def _score_pairs(store, cfg, fs, pairs) -> np.ndarray:
    scores = np.empty(len(pairs))
    cache: dict[int, np.ndarray] = {}
    for k, (img_idx, q_idx) in enumerate(pairs):
        if img_idx not in cache:
            cache[img_idx] = compress(fs.patches[img_idx], store, cfg)
        scores[k] = relevance_of_compressed(cache[img_idx], fs.questions[q_idx].query, store, cfg)
    return scores


def eval_retrieval(store, cfg, fs: FeatureSet, threshold: float, pairs=None) -> dict:
    if pairs is None:
        pairs = [
            (int(img), qi)
            for qi, q in enumerate(fs.questions)
            for img in q.candidate_idx
        ]
    labels = np.array(
        [fs.questions[qi].labels[list(fs.questions[qi].candidate_idx).index(img)] for img, qi in pairs]
    )
    scores = _score_pairs(store, cfg, fs, pairs)
    pred = scores >= threshold
    tp = int((pred & (labels == 1)).sum())
    pos = int((labels == 1).sum())
    recall = tp / pos if pos else float("nan")
    precision = tp / int(pred.sum()) if pred.sum() else 0.0
    return {"recall": recall, "precision": precision, "n_pairs": len(pairs)}


def train(
    features: FeatureSet,
    config: RetrieverConfig,
    steps: int,
    seed: int = 0,
    model_cfg: ModelConfig | None = None,
    lr: float = 0.05,
    batch_positives: int = 4,
    eval_interval: int = 200,
    eval_pair_cap: int = 512,
    init_store: ParamStore | None = None,
):
    """SGD on weighted BCE with the two-phase distractor schedule."""
    if not features.questions:
        raise ValueError("feature set has no questions")
    if model_cfg is None:
        model_cfg = ModelConfig(dim=features.dim)
    store = init_store if init_store is not None else build_retriever(model_cfg, seed=seed)
    log = TrainingLog()
    if steps == 0:
        return store, log

    has_pos = [qi for qi, q in enumerate(features.questions) if q.labels.sum() > 0]
    has_neg_lookup = {qi: (features.questions[qi].labels == 0).sum() for qi in has_pos}
    if not has_pos:
        raise ValueError("training needs at least one positive pair")

    rng = rng_for(seed, "train")
    eval_rng = rng_for(seed, "train_eval")
    all_pairs = [
        (int(img), qi) for qi, q in enumerate(features.questions) for img in q.candidate_idx
    ]
    if len(all_pairs) > eval_pair_cap:
        picks = eval_rng.choice(len(all_pairs), size=eval_pair_cap, replace=False)
        eval_pairs = [all_pairs[int(i)] for i in sorted(picks)]
    else:
        eval_pairs = all_pairs

    phase1_steps = int(round(config.schedule_split * steps))
    last_good = store.copy()
    recent_losses: list[float] = []

    for step in range(steps):
        qi = has_pos[int(rng.integers(0, len(has_pos)))]
        q = features.questions[qi]
        pos_idx = q.candidate_idx[q.labels == 1]
        neg_idx = q.candidate_idx[q.labels == 0]
        n_pos = min(batch_positives, len(pos_idx))
        batch = [(int(i), 1) for i in rng.choice(pos_idx, size=n_pos, replace=False)]
        if step < phase1_steps:
            n_neg = min(n_pos, len(neg_idx))
        else:
            n_neg = min(int(rng.integers(2, 11)), len(neg_idx))
        if n_neg:
            batch += [(int(i), 0) for i in rng.choice(neg_idx, size=n_neg, replace=False)]

        store.zero_grads()
        total = 0.0
        for img_idx, label in batch:
            f, cc = compress_forward(store, model_cfg, features.patches[img_idx])
            r, hc = head_forward(store, model_cfg, f, q.query)
            loss, dpred, _ = weighted_bce(r, label, config.positive_weight)
            total += loss
            df, _ = head_backward(store, model_cfg, dpred / len(batch), hc)
            compress_backward(store, model_cfg, df, cc)
        mean_loss = total / len(batch)
        if not math.isfinite(mean_loss):
            log.diverged = True
            raise TrainingDiverged(
                f"non-finite loss at step {step}", params=last_good, log=log
            )
        store.sgd_step(lr)
        recent_losses.append(mean_loss)

        if (step + 1) % eval_interval == 0 or step + 1 == steps:
            stats = eval_retrieval(store, model_cfg, features, config.threshold, eval_pairs)
            log.entries.append(
                {
                    "step": step + 1,
                    "phase": 1 if step < phase1_steps else 2,
                    "loss": float(np.mean(recent_losses)),
                    "recall": stats["recall"],
                    "precision": stats["precision"],
                }
            )
            recent_losses.clear()
            last_good = store.copy()
    return store, log


# ---------------------------------------------------------------------------
# recall sweep and baselines


@dataclass
class RecallCurve:
    rows: list[dict]
    flagged: bool = False  # true when no positives exist


def recall_sweep(scores, labels, thresholds) -> RecallCurve:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels must align")
    pos = int((y == 1).sum())
    rows = []
    for th in thresholds:
        pred = s >= th
        tp = int((pred & (y == 1)).sum())
        rows.append(
            {
                "threshold": float(th),
                "recall": (tp / pos) if pos else None,
                "precision": (tp / int(pred.sum())) if pred.sum() else None,
                "predicted": int(pred.sum()),
            }
        )
    return RecallCurve(rows=rows, flagged=pos == 0)


def pooled_feature(patches: np.ndarray) -> np.ndarray:
    return patches.mean(axis=0)


def cosine_scores(features: FeatureSet, question: FeatureQuestion) -> np.ndarray:
    """Raw cosine-similarity baseline mapped to [0, 1]."""
    q = question.query
    qn = np.linalg.norm(q) or 1.0
    out = np.empty(len(question.candidate_idx))
    for k, img_idx in enumerate(question.candidate_idx):
        p = pooled_feature(features.patches[int(img_idx)])
        pn = np.linalg.norm(p) or 1.0
        out[k] = (float(np.dot(q, p) / (qn * pn)) + 1.0) / 2.0
    return out


# ---------------------------------------------------------------------------
# reader stub


def reader_answer(mode: str, anchor: str, target: str, retained_ids, corpus: Corpus) -> str:
    """Scripted reader consuming only the retained images."""
    relevant = [i for i in retained_ids if anchor in corpus.labels_of(i)]
    if not relevant:
        return "no"
    hits = [target in corpus.labels_of(i) for i in relevant]
    if mode == "single":
        verdict = hits[0]
    elif mode == "multi_all":
        verdict = all(hits)
    elif mode == "multi_any":
        verdict = any(hits)
    else:
        raise ValueError(f"unknown mode: {mode}")
    return "yes" if verdict else "no"


def retrieve_then_read(
    benchmark: BenchmarkSet,
    corpus: Corpus,
    features: FeatureSet,
    store: ParamStore,
    config: RetrieverConfig,
    model_cfg: ModelConfig | None = None,
) -> Transcript:
    """Score each haystack image, filter, then read from the survivors."""
    if model_cfg is None:
        model_cfg = model_config_from_store(store)
    idx = features.index_of()
    protos: dict[str, np.ndarray] = {q.anchor: q.query for q in features.questions}
    compressed: dict[int, np.ndarray] = {}
    transcript = Transcript(meta={"adapter": "retriever+reader"})
    for spec in benchmark.specs:
        query = protos.get(spec.anchor)
        if query is None:
            query = label_prototype(spec.anchor, features.dim, 0)
        scores = np.empty(len(spec.haystack_ids))
        for k, image_id in enumerate(spec.haystack_ids):
            i = idx[image_id]
            if i not in compressed:
                compressed[i] = compress(features.patches[i], store, model_cfg)
            scores[k] = relevance_of_compressed(compressed[i], query, store, model_cfg)
        retained = [spec.haystack_ids[i] for i in filter_relevant(scores, config)]
        answer = reader_answer(spec.mode, spec.anchor, spec.target, retained, corpus)
        transcript.verdicts[spec.question_id] = Verdict(
            raw_text=answer.capitalize(), normalized=answer
        )
    return transcript


def capped_random_read(
    benchmark: BenchmarkSet, corpus: Corpus, cap: int = 10, seed: int = 0
) -> Transcript:
    """Unfiltered baseline: the reader sees `cap` random haystack images."""
    transcript = Transcript(meta={"adapter": f"random[{cap}]+reader"})
    for spec in benchmark.specs:
        rng = rng_for(seed, "capped_read", spec.question_id)
        n = len(spec.haystack_ids)
        keep = list(range(n))
        if n > cap:
            keep = sorted(int(i) for i in rng.choice(n, size=cap, replace=False))
        retained = [spec.haystack_ids[i] for i in keep]
        answer = reader_answer(spec.mode, spec.anchor, spec.target, retained, corpus)
        transcript.verdicts[spec.question_id] = Verdict(
            raw_text=answer.capitalize(), normalized=answer
        )
    return transcript
