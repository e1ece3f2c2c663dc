"""Protocol conformance suite for external stdio adapters.

Runs the same checks against every adapter command available: the
in-repo Python fixture and, when built, the reference TypeScript
adapter under adapter/dist. Every check is driven by primary-component
fixtures (generated benchmarks plus the dispatch/score path).
"""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from hayrag.adapters import StdioAdapterPool, build_request, dispatch
from hayrag.haystack import generate
from hayrag.metrics import score

from conftest import STDIO_ADAPTER, record_criterion

TS_MAIN = Path(__file__).parent.parent / "adapter" / "dist" / "main.js"


def adapter_commands(corpus_file, max_images=None):
    cap = ["--max-images", str(max_images)] if max_images else []
    commands = {
        "python-fixture": STDIO_ADAPTER
        + ["--mode", "ground_truth", "--corpus", str(corpus_file)]
        + cap,
    }
    node = shutil.which("node")
    if node and TS_MAIN.exists():
        commands["ts-adapter"] = [
            node, str(TS_MAIN), "--mode", "stub", "--corpus", str(corpus_file),
        ] + cap
    return commands


def available_names():
    names = ["python-fixture"]
    if shutil.which("node") and TS_MAIN.exists():
        names.append("ts-adapter")
    return names


@pytest.fixture(params=available_names())
def adapter_name(request):
    return request.param


def spawn_raw(cmd):
    return subprocess.Popen(
        cmd,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
        bufsize=1,
    )


class TestWireConformance:
    def test_handshake_first_line(self, adapter_name, small_corpus_file):
        cmd = adapter_commands(small_corpus_file, max_images=9)[adapter_name]
        proc = spawn_raw(cmd)
        try:
            handshake = json.loads(proc.stdout.readline())
            assert handshake["capabilities"]["max_images"] == 9
        finally:
            proc.kill()

    def test_one_response_per_request_with_matching_ids(
        self, adapter_name, small_corpus, small_corpus_file
    ):
        bench = generate(small_corpus, "single", 8, 4, seed=21)
        cmd = adapter_commands(small_corpus_file)[adapter_name]
        proc = spawn_raw(cmd)
        try:
            proc.stdout.readline()  # handshake
            expected_ids = []
            for spec in bench.specs:
                req = build_request(spec, small_corpus)
                proc.stdin.write(req.to_json_line() + "\n")
                expected_ids.append(spec.question_id)
            proc.stdin.flush()
            got = [json.loads(proc.stdout.readline()) for _ in expected_ids]
            assert [g["id"] for g in got] == expected_ids
            assert all("answer" in g for g in got)
        finally:
            proc.kill()

    def test_too_many_images_error_shape(self, adapter_name, small_corpus, small_corpus_file):
        bench = generate(small_corpus, "single", 2, 5, seed=22)
        cmd = adapter_commands(small_corpus_file, max_images=3)[adapter_name]
        pool = StdioAdapterPool(cmd)
        try:
            req_reply, timed_out = pool.answer_raw(
                build_request(bench.specs[0], small_corpus), timeout=10.0
            )
            assert not timed_out
            assert req_reply["id"] == bench.specs[0].question_id
            assert req_reply["error"] == "too_many_images"
            assert "answer" not in req_reply
        finally:
            pool.close()

    def test_malformed_request_gets_error_and_loop_survives(
        self, adapter_name, small_corpus, small_corpus_file
    ):
        cmd = adapter_commands(small_corpus_file)[adapter_name]
        proc = spawn_raw(cmd)
        try:
            proc.stdout.readline()  # handshake
            proc.stdin.write("this is not json\n")
            proc.stdin.flush()
            reply = json.loads(proc.stdout.readline())
            assert "error" in reply
            # the loop must still serve the next well-formed request
            bench = generate(small_corpus, "single", 2, 3, seed=23)
            req = build_request(bench.specs[0], small_corpus)
            proc.stdin.write(req.to_json_line() + "\n")
            proc.stdin.flush()
            reply = json.loads(proc.stdout.readline())
            assert reply["id"] == bench.specs[0].question_id
            assert "answer" in reply
        finally:
            proc.kill()

    def test_ground_truth_stub_scores_100(self, adapter_name, small_corpus, small_corpus_file):
        bench = generate(small_corpus, "multi", 20, 8, n_needles=2, seed=24)
        cmd = adapter_commands(small_corpus_file)[adapter_name]
        pool = StdioAdapterPool(cmd, parallelism=2)
        try:
            transcript = dispatch(bench, pool, corpus=small_corpus, parallelism=2, timeout=30.0)
        finally:
            pool.close()
        result = score(transcript, bench)
        ok = result.accuracy == 1.0 and result.compliance_rate == 1.0
        if adapter_name == "ts-adapter":
            record_criterion(
                "secondary-adapter-conformance",
                ok,
                "TypeScript adapter: handshake, id matching, error shapes, and "
                f"harness accuracy {result.accuracy:.0%} in ground-truth stub mode",
            )
        assert ok, (result.accuracy, result.compliance_rate)
