import math

import numpy as np
import pytest

from hayrag import neural as N
from hayrag.corpus import synthetic_corpus
from hayrag.errors import TrainingDiverged
from hayrag.haystack import generate
from hayrag.kernels import filter_select_nb, filter_select_np
from hayrag.retriever import (
    FeatureSet,
    ModelConfig,
    RetrieverConfig,
    build_retriever,
    capped_random_read,
    compress,
    compress_backward,
    compress_forward,
    cosine_scores,
    encode_image,
    eval_retrieval,
    filter_relevant,
    head_backward,
    head_forward,
    load_featureset,
    model_config_from_store,
    pooled_feature,
    reader_answer,
    recall_sweep,
    relevance_of_compressed,
    retrieve_then_read,
    save_featureset,
    synth_features,
    train,
    weighted_bce,
)


@pytest.fixture(scope="module")
def toy_model():
    cfg = ModelConfig(dim=16)
    return cfg, build_retriever(cfg, seed=1)


class TestCompression:
    def test_fixed_output_count(self, toy_model):
        cfg, store = toy_model
        rng = np.random.default_rng(0)
        for t in (1, 32, 576):
            out = compress(rng.standard_normal((t, 16)), store, cfg)
            assert out.shape == (32, 16)
        assert 576 // 32 == 18  # token reduction of the default setup

    def test_permutation_invariance(self, toy_model):
        cfg, store = toy_model
        rng = np.random.default_rng(1)
        patches = rng.standard_normal((64, 16))
        base = compress(patches, store, cfg)
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(64)
            assert np.abs(compress(patches[perm], store, cfg) - base).max() < 1e-9

    def test_dim_mismatch(self, toy_model):
        cfg, store = toy_model
        with pytest.raises(ValueError, match="patch features"):
            compress(np.zeros((4, 8)), store, cfg)

    def test_deterministic(self, toy_model):
        cfg, store = toy_model
        rng = np.random.default_rng(2)
        patches = rng.standard_normal((10, 16))
        assert np.array_equal(compress(patches, store, cfg), compress(patches, store, cfg))


class TestEncodeImage:
    def test_untrained_zeroed_readout_scores_half(self):
        cfg = ModelConfig(dim=16)
        store = build_retriever(cfg, seed=0)
        store.tensors["readout.w"][:] = 0.0
        store.tensors["readout.b"][:] = 0.0
        rng = np.random.default_rng(3)
        _, r = encode_image(rng.standard_normal((12, 16)), rng.standard_normal(16), store, cfg)
        assert r == 0.5

    def test_query_changes_score(self, toy_model):
        cfg, store = toy_model
        rng = np.random.default_rng(4)
        f = compress(rng.standard_normal((12, 16)), store, cfg)
        r1 = relevance_of_compressed(f, rng.standard_normal(16), store, cfg)
        r2 = relevance_of_compressed(f, rng.standard_normal(16), store, cfg)
        assert r1 != r2

    def test_score_in_open_interval(self, toy_model):
        cfg, store = toy_model
        rng = np.random.default_rng(5)
        for _ in range(20):
            _, r = encode_image(rng.standard_normal((6, 16)), rng.standard_normal(16), store, cfg)
            assert 0.0 < r < 1.0

    def test_full_model_gradients(self):
        cfg = ModelConfig(dim=8, n_queries=4)
        store = build_retriever(cfg, seed=3)
        rng = np.random.default_rng(6)
        store.add("_patches", rng.standard_normal((6, 8)))
        query = rng.standard_normal(8)

        def loss():
            f, cc = compress_forward(store, cfg, store["_patches"])
            r, hc = head_forward(store, cfg, f, query)
            value, dpred, _ = weighted_bce(r, 1, 5.0)
            df, _ = head_backward(store, cfg, dpred, hc)
            store.accumulate("_patches", compress_backward(store, cfg, df, cc))
            return value

        err = N.grad_check(loss, store, rng=np.random.default_rng(7), max_coords_per_tensor=20)
        assert err < 1e-4


class TestFilter:
    def test_spec_examples(self):
        cfg = RetrieverConfig(threshold=0.5)
        assert filter_relevant([0.9, 0.2, 0.7], cfg) == [0, 2]
        assert filter_relevant([0.1, 0.4, 0.2], cfg) == [1]  # argmax fallback
        capped = RetrieverConfig(threshold=0.5, top_k_cap=1)
        assert filter_relevant([0.9, 0.8], capped) == [0]

    def test_tie_order(self):
        cfg = RetrieverConfig(threshold=0.5)
        assert filter_relevant([0.7, 0.9, 0.7, 0.9], cfg) == [1, 3, 0, 2]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            filter_relevant([], RetrieverConfig())

    def test_fallback_first_argmax(self):
        cfg = RetrieverConfig(threshold=0.9)
        assert filter_relevant([0.3, 0.5, 0.5], cfg) == [1]

    def brute_force(self, scores, theta, cap):
        kept = [i for i, s in enumerate(scores) if s >= theta]
        if not kept:
            best = max(range(len(scores)), key=lambda i: (scores[i], -i))
            return [best]
        kept.sort(key=lambda i: (-scores[i], i))
        if cap is not None:
            kept = kept[:cap]
        return kept

    @pytest.mark.parametrize("cap", [None, 1, 3])
    def test_matches_brute_force_exhaustive_short(self, cap):
        lattice = [round(0.1 * k, 1) for k in range(11)]
        cfg = RetrieverConfig(threshold=0.5, top_k_cap=cap)
        from itertools import product

        for length in (1, 2, 3):
            for combo in product(lattice, repeat=length):
                scores = list(combo)
                assert filter_relevant(scores, cfg) == self.brute_force(scores, 0.5, cap), scores

    def test_matches_brute_force_sampled(self):
        rng = np.random.default_rng(8)
        cfg = RetrieverConfig(threshold=0.5)
        for _ in range(3000):
            n = int(rng.integers(1, 9))
            scores = np.round(rng.integers(0, 11, size=n) * 0.1, 1).tolist()
            assert filter_relevant(scores, cfg) == self.brute_force(scores, 0.5, None)

    def test_kernel_builds_agree(self):
        rng = np.random.default_rng(9)
        for _ in range(2000):
            n = int(rng.integers(1, 40))
            scores = np.round(rng.integers(0, 11, size=n) * 0.1, 1)
            a = filter_select_np(scores, 0.5, -1)
            b = filter_select_nb(scores, 0.5, -1)
            assert np.array_equal(a, b)


class TestWeightedBCE:
    def test_closed_forms(self):
        loss, _, _ = weighted_bce(0.5, 1, 5.0)
        assert loss == pytest.approx(5 * math.log(2), abs=1e-12)
        loss0, _, _ = weighted_bce(0.5, 0, 5.0)
        assert loss0 == pytest.approx(math.log(2), abs=1e-12)
        near_one, _, _ = weighted_bce(1 - 1e-9, 1, 5.0)
        assert near_one < 1e-7

    def test_clamp_flagged(self):
        _, _, clamped = weighted_bce(0.0, 1, 5.0)
        assert clamped
        _, _, ok = weighted_bce(0.5, 1, 5.0)
        assert not ok

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(100):
            p = float(rng.uniform(0.02, 0.98))
            y = int(rng.integers(0, 2))
            w = float(rng.uniform(0.5, 6.0))
            _, grad, _ = weighted_bce(p, y, w)
            eps = 1e-7
            lp, _, _ = weighted_bce(p + eps, y, w)
            lm, _, _ = weighted_bce(p - eps, y, w)
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(grad - fd) / max(abs(grad), abs(fd), 1e-8))
        assert worst < 1e-6


class TestSynthFeatures:
    def test_equal_label_sets_equal_pooled(self):
        corpus = synthetic_corpus(40, n_labels=5, labels_per_image=(1, 2), seed=13)
        fs = synth_features(corpus, d=16, t=8, noise_sigma=0.0, seed=1)
        by_labels = {}
        for i, image_id in enumerate(fs.image_ids):
            key = tuple(sorted(corpus.labels_of(image_id)))
            by_labels.setdefault(key, []).append(i)
        for key, idxs in by_labels.items():
            if len(idxs) > 1:
                base = pooled_feature(fs.patches[idxs[0]])
                for j in idxs[1:]:
                    assert np.allclose(pooled_feature(fs.patches[j]), base)

    def test_disjoint_label_sets_near_orthogonal(self):
        cosines = []
        for seed in range(10):
            corpus = synthetic_corpus(30, n_labels=10, labels_per_image=(1, 2), seed=seed)
            fs = synth_features(corpus, d=64, t=8, noise_sigma=0.0, seed=seed)
            ids = fs.image_ids
            for i in range(0, 10):
                for j in range(i + 1, 10):
                    if corpus.labels_of(ids[i]).isdisjoint(corpus.labels_of(ids[j])):
                        a, b = pooled_feature(fs.patches[i]), pooled_feature(fs.patches[j])
                        na, nb = np.linalg.norm(a), np.linalg.norm(b)
                        if na > 0 and nb > 0:
                            cosines.append(abs(float(a @ b / (na * nb))))
        assert cosines and float(np.mean(cosines)) < 0.1

    def test_same_seed_identical(self):
        corpus = synthetic_corpus(20, n_labels=5, seed=3)
        a = synth_features(corpus, d=16, t=8, noise_sigma=0.2, seed=7)
        b = synth_features(corpus, d=16, t=8, noise_sigma=0.2, seed=7)
        assert np.array_equal(a.patches, b.patches)
        for qa, qb in zip(a.questions, b.questions):
            assert np.array_equal(qa.query, qb.query)
            assert np.array_equal(qa.labels, qb.labels)

    def test_labels_match_annotations(self):
        corpus = synthetic_corpus(25, n_labels=6, seed=5)
        fs = synth_features(corpus, d=16, t=4, seed=2)
        for q in fs.questions:
            for k, img_idx in enumerate(q.candidate_idx):
                image_id = fs.image_ids[int(img_idx)]
                assert q.labels[k] == (1 if q.anchor in corpus.labels_of(image_id) else 0)

    def test_benchmark_mode_candidates(self):
        corpus = synthetic_corpus(100, n_labels=8, seed=6)
        bench = generate(corpus, "single", 6, 10, seed=1)
        fs = synth_features(corpus, d=16, t=4, seed=2, benchmark=bench)
        assert len(fs.questions) == 6
        for q, spec in zip(fs.questions, bench.specs):
            assert q.qid == spec.question_id
            assert [fs.image_ids[int(i)] for i in q.candidate_idx] == spec.haystack_ids

    def test_min_dim(self):
        corpus = synthetic_corpus(10, n_labels=3, seed=1)
        with pytest.raises(ValueError):
            synth_features(corpus, d=4)


class TestFeatureIO:
    def test_roundtrip_byte_identical(self, tmp_path):
        corpus = synthetic_corpus(15, n_labels=4, seed=9)
        fs = synth_features(corpus, d=16, t=4, noise_sigma=0.1, seed=3)
        d1 = tmp_path / "a"
        files1 = save_featureset(fs, d1)
        loaded = load_featureset(d1)
        d2 = tmp_path / "b"
        files2 = save_featureset(loaded, d2)
        assert [p.name for p in files1] == [p.name for p in files2]
        for p1, p2 in zip(files1, files2):
            assert p1.read_bytes() == p2.read_bytes()

    def test_single_file_magic(self, tmp_path):
        corpus = synthetic_corpus(10, n_labels=3, seed=9)
        fs = synth_features(corpus, d=16, t=4, seed=3)
        fs.questions = fs.questions[:1]
        path = tmp_path / "one.vhf"
        save_featureset(fs, path)
        assert path.read_bytes()[:4] == b"VHF1"
        loaded = load_featureset(path)
        assert len(loaded.questions) == 1
        assert loaded.questions[0].qid == fs.questions[0].qid


class TestTraining:
    def test_zero_steps_params_unchanged(self):
        corpus = synthetic_corpus(30, n_labels=5, seed=2)
        fs = synth_features(corpus, d=16, t=4, seed=1)
        cfg = ModelConfig(dim=16)
        fresh = build_retriever(cfg, seed=4)
        store, log = train(fs, RetrieverConfig(), steps=0, seed=4, model_cfg=cfg)
        assert store.to_bytes() == fresh.to_bytes()
        assert log.entries == []

    def test_same_seed_identical_checkpoints(self):
        corpus = synthetic_corpus(30, n_labels=5, seed=2)
        fs = synth_features(corpus, d=16, t=4, seed=1)
        a, _ = train(fs, RetrieverConfig(), steps=40, seed=8, eval_interval=40)
        b, _ = train(fs, RetrieverConfig(), steps=40, seed=8, eval_interval=40)
        assert a.to_bytes() == b.to_bytes()

    def test_divergence_keeps_last_good(self):
        corpus = synthetic_corpus(30, n_labels=5, seed=2)
        fs = synth_features(corpus, d=16, t=4, seed=1)
        with pytest.raises(TrainingDiverged) as exc_info:
            with np.errstate(all="ignore"):
                train(fs, RetrieverConfig(), steps=50, seed=0, lr=1e150, eval_interval=10)
        assert exc_info.value.params is not None
        assert exc_info.value.log.diverged

    def test_trained_separation_sharp(self):
        # clean one-label images: anchors should score near 1, distractors near 0
        corpus = synthetic_corpus(60, n_labels=6, labels_per_image=(1, 1), seed=11)
        fs = synth_features(corpus, d=16, t=8, noise_sigma=0.05, seed=2)
        cfg = ModelConfig(dim=16)
        store, _ = train(fs, RetrieverConfig(), steps=1500, seed=3, model_cfg=cfg, eval_interval=1500)
        compressed = {}
        pos, neg = [], []
        for q in fs.questions:
            for k, img in enumerate(q.candidate_idx):
                img = int(img)
                if img not in compressed:
                    compressed[img] = compress(fs.patches[img], store, cfg)
                r = relevance_of_compressed(compressed[img], q.query, store, cfg)
                (pos if q.labels[k] else neg).append(r)
        assert float(np.mean(pos)) > 0.9
        assert float(np.mean(neg)) < 0.1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RetrieverConfig(threshold=1.5)
        with pytest.raises(ValueError):
            RetrieverConfig(positive_weight=0)
        with pytest.raises(ValueError):
            RetrieverConfig(schedule_split=1.0)
        with pytest.raises(ValueError):
            RetrieverConfig(top_k_cap=0)

    def test_model_config_roundtrip(self):
        cfg = ModelConfig(dim=16, n_queries=8, compressor_blocks=1, head_blocks=3, n_heads=2)
        store = build_retriever(cfg, seed=0)
        assert model_config_from_store(store) == cfg


class TestRecallSweep:
    def test_perfect_scorer(self):
        scores = [0.9, 0.95, 0.1, 0.2]
        labels = [1, 1, 0, 0]
        curve = recall_sweep(scores, labels, [0.0, 0.5, 0.89])
        assert not curve.flagged
        assert all(row["recall"] == 1.0 for row in curve.rows)

    def test_zero_threshold_full_recall(self):
        rng = np.random.default_rng(11)
        scores = rng.random(50)
        labels = (rng.random(50) < 0.3).astype(int)
        curve = recall_sweep(scores, labels, [0.0])
        assert curve.rows[0]["recall"] == 1.0

    def test_monotone_non_increasing(self):
        rng = np.random.default_rng(12)
        scores = rng.random(200)
        labels = (rng.random(200) < 0.4).astype(int)
        curve = recall_sweep(scores, labels, np.linspace(0, 1, 21))
        recalls = [row["recall"] for row in curve.rows]
        assert all(a >= b for a, b in zip(recalls, recalls[1:]))

    def test_no_positives_flagged(self):
        curve = recall_sweep([0.5, 0.7], [0, 0], [0.5])
        assert curve.flagged
        assert curve.rows[0]["recall"] is None

    def test_misaligned_rejected(self):
        with pytest.raises(ValueError):
            recall_sweep([0.5], [0, 1], [0.5])

    def test_trained_vs_cosine_at_matched_precision(self):
        corpus = synthetic_corpus(150, n_labels=15, labels_per_image=(1, 2), seed=12)
        fs = synth_features(corpus, d=16, t=16, noise_sigma=0.3, seed=6)
        cfg = ModelConfig(dim=16)
        store, _ = train(fs, RetrieverConfig(), steps=3000, seed=0, model_cfg=cfg, eval_interval=3000)
        compressed = {}
        scores, labels, baseline = [], [], []
        for q in fs.questions:
            cos = cosine_scores(fs, q)
            for k, img in enumerate(q.candidate_idx):
                img = int(img)
                if img not in compressed:
                    compressed[img] = compress(fs.patches[img], store, cfg)
                scores.append(relevance_of_compressed(compressed[img], q.query, store, cfg))
                labels.append(int(q.labels[k]))
                baseline.append(cos[k])
        s, y, c = np.array(scores), np.array(labels), np.array(baseline)

        def point(v, th):
            pred = v >= th
            tp = int((pred & (y == 1)).sum())
            recall = tp / max(int((y == 1).sum()), 1)
            precision = tp / int(pred.sum()) if pred.sum() else 1.0
            return recall, precision

        rec_r, prec_r = point(s, 0.5)
        best_cosine = max(
            (point(c, th)[0] for th in np.linspace(0, 1, 201) if point(c, th)[1] >= prec_r),
            default=0.0,
        )
        assert rec_r >= best_cosine


class TestReader:
    def test_reader_logic(self, tiny_corpus):
        assert reader_answer("single", "truck", "dog", ["B"], tiny_corpus) == "yes"
        assert reader_answer("single", "cat", "dog", ["C"], tiny_corpus) == "no"
        assert reader_answer("single", "dog", "cat", [], tiny_corpus) == "no"
        assert reader_answer("multi_any", "dog", "truck", ["A", "B"], tiny_corpus) == "yes"
        assert reader_answer("multi_all", "dog", "truck", ["A", "B"], tiny_corpus) == "no"

    def test_capped_random_read_deterministic(self, small_corpus):
        bench = generate(small_corpus, "single", 10, 20, seed=14)
        a = capped_random_read(bench, small_corpus, cap=5, seed=3)
        b = capped_random_read(bench, small_corpus, cap=5, seed=3)
        assert {q: v.normalized for q, v in a.verdicts.items()} == {
            q: v.normalized for q, v in b.verdicts.items()
        }

    def test_retrieve_then_read_with_perfect_filter(self, small_corpus):
        # untrained store but threshold 0 keeps everything: reader sees the
        # whole haystack and answers like ground truth
        bench = generate(small_corpus, "single", 6, 8, seed=15)
        fs = synth_features(small_corpus, d=16, t=4, seed=1, benchmark=bench)
        cfg = ModelConfig(dim=16)
        store = build_retriever(cfg, seed=2)
        transcript = retrieve_then_read(
            bench, small_corpus, fs, store, RetrieverConfig(threshold=0.0), cfg
        )
        for spec in bench.specs:
            assert transcript.verdicts[spec.question_id].normalized == spec.answer
