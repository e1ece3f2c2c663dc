import http.server
import json
import threading

import pytest

from hayrag.adapters import (
    PROMPT_PREFIX,
    StdioAdapterPool,
    Transcript,
    build_request,
    dispatch,
    make_pool,
    normalize_answer,
)
from hayrag.errors import DispatchError
from hayrag.haystack import generate
from hayrag.oracles import scripted_adapter

from conftest import STDIO_ADAPTER


class TestNormalize:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("Yes, there is a dog.", "yes"),
            ("  NO", "no"),
            ("I cannot determine this.", "noncompliant"),
            ("yes", "yes"),
            ("No.", "no"),
            ("1. Yes", "yes"),
            ("???", "noncompliant"),
            ("", "noncompliant"),
            ("Yesterday it rained", "noncompliant"),
            ("nothing to see", "noncompliant"),
        ],
    )
    def test_rule(self, raw, expected):
        assert normalize_answer(raw).normalized == expected

    def test_raw_text_kept(self):
        v = normalize_answer("Yes indeed")
        assert v.raw_text == "Yes indeed"


def test_request_prompt_prefix(small_corpus):
    bench = generate(small_corpus, "single", 2, 4, seed=0)
    req = build_request(bench.specs[0], small_corpus)
    assert req.question.startswith(
        "You are given a set of images. Please answer the following question in Yes or No: "
    )
    assert req.question.endswith("?")
    assert [img["id"] for img in req.images] == bench.specs[0].haystack_ids
    assert req.meta == {"mode": "single", "haystack_size": 4}
    line = json.loads(req.to_json_line())
    assert list(line) == ["id", "question", "images", "meta"]


def test_dispatch_always_yes(small_corpus):
    bench = generate(small_corpus, "single", 4, 3, seed=1)
    transcript = dispatch(bench, scripted_adapter("always_yes"), corpus=small_corpus)
    assert len(transcript.verdicts) == 4
    assert all(v.normalized == "yes" for v in transcript.verdicts.values())


def _strip_latency(transcript: Transcript) -> str:
    doc = transcript.to_dict()
    for entry in doc["verdicts"]:
        entry["latency"] = 0.0
    doc["meta"] = {}
    return json.dumps(doc, sort_keys=True)


def test_parallel_matches_serial(small_corpus):
    bench = generate(small_corpus, "single", 30, 5, seed=2)
    adapter = scripted_adapter("noisy", corpus=small_corpus, p_correct=0.7, seed=5)
    serial = dispatch(bench, adapter, corpus=small_corpus, parallelism=1)
    parallel = dispatch(bench, adapter, corpus=small_corpus, parallelism=8)
    assert _strip_latency(serial) == _strip_latency(parallel)


def test_transcript_roundtrip(small_corpus, tmp_path):
    bench = generate(small_corpus, "single", 4, 3, seed=1)
    transcript = dispatch(bench, scripted_adapter("ground_truth", corpus=small_corpus), corpus=small_corpus)
    path = tmp_path / "t.json"
    transcript.save(path)
    loaded = Transcript.load(path)
    assert _strip_latency(loaded) == _strip_latency(transcript)


class TestStdioTransport:
    def test_ground_truth_adapter(self, small_corpus, small_corpus_file):
        bench = generate(small_corpus, "single", 10, 6, seed=3)
        pool = StdioAdapterPool(
            STDIO_ADAPTER + ["--mode", "ground_truth", "--corpus", str(small_corpus_file)]
        )
        try:
            transcript = dispatch(bench, pool, corpus=small_corpus)
        finally:
            pool.close()
        for spec in bench.specs:
            assert transcript.verdicts[spec.question_id].normalized == spec.answer

    def test_handshake_capacity(self):
        pool = StdioAdapterPool(STDIO_ADAPTER + ["--max-images", "7"])
        try:
            assert pool.max_images == 7
        finally:
            pool.close()

    def test_timeout_marks_noncompliant(self, small_corpus):
        bench = generate(small_corpus, "single", 4, 3, seed=4)
        hang_id = bench.specs[1].question_id
        pool = StdioAdapterPool(STDIO_ADAPTER + ["--hang-id", hang_id])
        try:
            transcript = dispatch(bench, pool, corpus=small_corpus, timeout=1.0)
        finally:
            pool.close()
        hung = transcript.verdicts[hang_id]
        assert hung.normalized == "noncompliant"
        assert hung.timeout
        others = [v for qid, v in transcript.verdicts.items() if qid != hang_id]
        assert all(v.normalized == "yes" for v in others)

    def test_malformed_reply_noncompliant(self, small_corpus):
        bench = generate(small_corpus, "single", 2, 3, seed=5)
        pool = StdioAdapterPool(STDIO_ADAPTER + ["--mode", "garbage"])
        try:
            transcript = dispatch(bench, pool, corpus=small_corpus)
        finally:
            pool.close()
        for v in transcript.verdicts.values():
            assert v.normalized == "noncompliant"
            assert v.error

    def test_too_many_images_error_reply(self, small_corpus):
        bench = generate(small_corpus, "single", 2, 5, seed=6)
        pool = StdioAdapterPool(STDIO_ADAPTER + ["--max-images", "3"])
        try:
            transcript = dispatch(bench, pool, corpus=small_corpus)
        finally:
            pool.close()
        for v in transcript.verdicts.values():
            assert v.normalized == "noncompliant"
            assert v.error == "too_many_images"

    def test_unreachable_endpoint(self):
        with pytest.raises(DispatchError):
            StdioAdapterPool(["/nonexistent/adapter/binary"])

    def test_parallel_stdio_workers(self, small_corpus, small_corpus_file):
        bench = generate(small_corpus, "single", 12, 4, seed=7)
        pool = StdioAdapterPool(
            STDIO_ADAPTER + ["--mode", "ground_truth", "--corpus", str(small_corpus_file)],
            parallelism=3,
        )
        try:
            transcript = dispatch(bench, pool, corpus=small_corpus, parallelism=3)
        finally:
            pool.close()
        assert len(transcript.verdicts) == 12
        assert all(
            transcript.verdicts[s.question_id].normalized == s.answer for s in bench.specs
        )


class _YesHandler(http.server.BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        req = json.loads(self.rfile.read(length))
        body = json.dumps({"id": req["id"], "answer": "Yes"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


def test_http_transport(small_corpus):
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _YesHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        bench = generate(small_corpus, "single", 4, 3, seed=8)
        pool = make_pool(f"http://127.0.0.1:{server.server_port}/", "http")
        transcript = dispatch(bench, pool, corpus=small_corpus, parallelism=2, timeout=5.0)
        assert all(v.normalized == "yes" for v in transcript.verdicts.values())
    finally:
        server.shutdown()


def test_http_unreachable(small_corpus):
    bench = generate(small_corpus, "single", 2, 3, seed=9)
    pool = make_pool("http://127.0.0.1:9/", "http")
    with pytest.raises(DispatchError):
        dispatch(bench, pool, corpus=small_corpus, timeout=2.0)


def test_mid_run_failure_keeps_partial_transcript(small_corpus):
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _YesHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_port}/"
    bench = generate(small_corpus, "single", 6, 3, seed=10)

    class DiesAfterTwo:
        """Proxy pool that kills the server after two replies."""

        max_images = None

        def __init__(self):
            self.pool = make_pool(url, "http")
            self.served = 0

        def answer_raw(self, req, timeout):
            if self.served == 2:
                server.shutdown()
                server.server_close()
            self.served += 1
            return self.pool.answer_raw(req, timeout)

        def close(self):
            self.pool.close()

    with pytest.raises(DispatchError) as exc_info:
        dispatch(bench, DiesAfterTwo(), corpus=small_corpus, timeout=2.0)
    partial = exc_info.value.partial
    assert partial is not None
    assert 1 <= len(partial.verdicts) < 6
