"""Answerer wire protocol and the dispatch harness.

Three transports carry the same message schema:

  * in-process: any object with answer(request) -> raw text
  * stdio: one JSON request per line on a child process's stdin, one
    JSON response per line on stdout; the child announces
    {"capabilities":{"max_images":N}} before its first response
  * http: POST the request JSON to a single endpoint

Adapters are stateless per request; the harness gets parallelism by
running several in-flight requests (one per child process for stdio).
"""

from __future__ import annotations

import json
import queue
import re
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus
from .errors import DispatchError
from .haystack import BenchmarkSet, QuestionSpec, render_question

PROMPT_PREFIX = "You are given a set of images. Please answer the following question in Yes or No: "

YES = "yes"
NO = "no"
NONCOMPLIANT = "noncompliant"

_FIRST_WORD = re.compile(r"[a-z]+")


@dataclass
class AdapterRequest:
    id: str
    question: str
    images: list[dict]  # [{"id": ..., "path": ...}, ...] in haystack order
    meta: dict

    def to_json_line(self) -> str:
        doc = {"id": self.id, "question": self.question, "images": self.images, "meta": self.meta}
        return json.dumps(doc, ensure_ascii=False, separators=(",", ":"))


@dataclass
class Verdict:
    raw_text: str
    normalized: str
    timeout: bool = False
    error: str | None = None
    latency: float = 0.0


@dataclass
class Transcript:
    verdicts: dict[str, Verdict] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def ordered_ids(self) -> list[str]:
        return sorted(self.verdicts)

    def to_dict(self) -> dict:
        entries = []
        for qid in self.ordered_ids():
            v = self.verdicts[qid]
            entries.append(
                {
                    "id": qid,
                    "raw_text": v.raw_text,
                    "normalized": v.normalized,
                    "timeout": v.timeout,
                    "error": v.error,
                    "latency": round(v.latency, 6),
                }
            )
        return {"meta": dict(self.meta), "verdicts": entries}

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "Transcript":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        verdicts = {
            e["id"]: Verdict(
                raw_text=e["raw_text"],
                normalized=e["normalized"],
                timeout=e.get("timeout", False),
                error=e.get("error"),
                latency=e.get("latency", 0.0),
            )
            for e in doc["verdicts"]
        }
        return cls(verdicts=verdicts, meta=doc.get("meta", {}))


def normalize_answer(raw_text: str) -> Verdict:
    """First alphabetic token decides: yes, no, else noncompliant."""
    lowered = raw_text.strip().lower()
    match = _FIRST_WORD.search(lowered)
    token = match.group(0) if match else ""
    if token == "yes":
        return Verdict(raw_text=raw_text, normalized=YES)
    if token == "no":
        return Verdict(raw_text=raw_text, normalized=NO)
    return Verdict(raw_text=raw_text, normalized=NONCOMPLIANT)


def build_request(spec: QuestionSpec, corpus: Corpus | None = None) -> AdapterRequest:
    images = []
    for image_id in spec.haystack_ids:
        path = corpus.path_of(image_id) if corpus is not None and image_id in corpus.records else ""
        images.append({"id": image_id, "path": path})
    return AdapterRequest(
        id=spec.question_id,
        question=PROMPT_PREFIX + render_question(spec),
        images=images,
        meta={"mode": spec.mode, "haystack_size": spec.haystack_size},
    )


# ---------------------------------------------------------------------------
# transports


class StdioWorker:
    """One child process, one request in flight."""

    def __init__(self, cmd: list[str]):
        self.cmd = cmd
        self.proc: subprocess.Popen | None = None
        self.lines: queue.Queue = queue.Queue()
        self.max_images: int | None = None
        self._spawn()

    def _spawn(self) -> None:
        try:
            self.proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise DispatchError(f"cannot start adapter {self.cmd!r}: {exc}")
        self.lines = queue.Queue()
        reader = threading.Thread(target=self._pump, args=(self.proc,), daemon=True)
        reader.start()
        handshake = self._read_line(timeout=30.0)
        if handshake is None:
            raise DispatchError(f"adapter {self.cmd!r} produced no handshake line")
        try:
            caps = json.loads(handshake).get("capabilities", {})
            self.max_images = caps.get("max_images")
        except (json.JSONDecodeError, AttributeError) as exc:
            raise DispatchError(f"adapter handshake is not valid JSON: {handshake!r} ({exc})")

    def _pump(self, proc) -> None:
        for line in proc.stdout:
            self.lines.put(line)
        self.lines.put(None)  # EOF marker

    def _read_line(self, timeout: float | None):
        try:
            return self.lines.get(timeout=timeout)
        except queue.Empty:
            return None

    def request(self, req: AdapterRequest, timeout: float | None):
        """Returns (raw_reply_dict | None, timed_out: bool)."""
        if self.proc.poll() is not None:
            self._spawn()
        try:
            self.proc.stdin.write(req.to_json_line() + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise DispatchError(f"adapter pipe closed: {exc}")
        line = self._read_line(timeout)
        if line is None:
            # timed out or EOF; kill so a wedged child cannot poison later requests
            self.kill()
            self._spawn()
            return None, True
        try:
            return json.loads(line), False
        except json.JSONDecodeError:
            return {"id": req.id, "error": f"malformed reply: {line.strip()[:200]}"}, False

    def kill(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()

    def close(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class StdioAdapterPool:
    def __init__(self, cmd, parallelism: int = 1):
        if isinstance(cmd, str):
            import shlex

            cmd = shlex.split(cmd)
        self.workers = [StdioWorker(list(cmd)) for _ in range(parallelism)]
        self._free: queue.Queue = queue.Queue()
        for w in self.workers:
            self._free.put(w)
        self.max_images = self.workers[0].max_images if self.workers else None

    def answer_raw(self, req: AdapterRequest, timeout: float | None):
        worker = self._free.get()
        try:
            return worker.request(req, timeout)
        finally:
            self._free.put(worker)

    def close(self) -> None:
        for w in self.workers:
            w.close()


class HttpAdapter:
    def __init__(self, url: str, max_images: int | None = None):
        self.url = url
        self.max_images = max_images

    def answer_raw(self, req: AdapterRequest, timeout: float | None):
        import requests

        try:
            resp = requests.post(self.url, json=json.loads(req.to_json_line()), timeout=timeout)
        except requests.Timeout:
            return None, True
        except requests.RequestException as exc:
            raise DispatchError(f"endpoint {self.url} unreachable: {exc}")
        try:
            return resp.json(), False
        except ValueError:
            return {"id": req.id, "error": f"malformed reply: {resp.text[:200]}"}, False

    def close(self) -> None:
        pass


class InProcessPool:
    """Wraps an object exposing answer(request) -> str."""

    def __init__(self, adapter):
        self.adapter = adapter
        self.max_images = getattr(adapter, "max_images", None)

    def answer_raw(self, req: AdapterRequest, timeout: float | None):
        return {"id": req.id, "answer": self.adapter.answer(req)}, False

    def close(self) -> None:
        pass


def make_pool(endpoint, transport: str = "stdio", parallelism: int = 1):
    if transport == "stdio":
        return StdioAdapterPool(endpoint, parallelism=parallelism)
    if transport == "http":
        return HttpAdapter(endpoint)
    raise ValueError(f"unknown transport: {transport}")


# ---------------------------------------------------------------------------
# dispatch


def dispatch(
    benchmark: BenchmarkSet,
    adapter,
    corpus: Corpus | None = None,
    parallelism: int = 1,
    timeout: float | None = None,
    retries: int = 0,
) -> Transcript:
    """Run every question through the adapter; one verdict per question.

    `adapter` is an in-process adapter (answer(req) -> str), an
    already-built pool, or is built externally via make_pool. Timeouts
    become noncompliant verdicts with the timeout flag set. Endpoint
    failure aborts with the partial transcript attached to the error.
    """
    if hasattr(adapter, "answer_raw"):
        pool = adapter
    elif hasattr(adapter, "answer"):
        pool = InProcessPool(adapter)
    else:
        raise TypeError("adapter must expose answer() or answer_raw()")

    requests_ = [build_request(spec, corpus) for spec in benchmark.specs]
    transcript = Transcript(
        meta={
            "parallelism": parallelism,
            "timeout": timeout,
            "n_questions": len(requests_),
            "max_images": pool.max_images,
        }
    )
    lock = threading.Lock()
    abort: list[DispatchError] = []

    def run_one(req: AdapterRequest) -> None:
        if abort:
            return
        start = time.perf_counter()
        verdict = None
        for attempt in range(retries + 1):
            try:
                reply, timed_out = pool.answer_raw(req, timeout)
            except DispatchError as exc:
                with lock:
                    abort.append(exc)
                return
            if timed_out:
                verdict = Verdict(raw_text="", normalized=NONCOMPLIANT, timeout=True)
                continue  # a retry may still succeed
            if not isinstance(reply, dict) or reply.get("id") != req.id or "error" in reply:
                err = reply.get("error", "mismatched or malformed reply") if isinstance(reply, dict) else "malformed reply"
                verdict = Verdict(raw_text="", normalized=NONCOMPLIANT, error=str(err))
                continue
            verdict = normalize_answer(str(reply.get("answer", "")))
            break
        verdict.latency = time.perf_counter() - start
        with lock:
            transcript.verdicts[req.id] = verdict

    if parallelism <= 1:
        for req in requests_:
            run_one(req)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallelism) as ex:
            list(ex.map(run_one, requests_))

    if abort:
        raise DispatchError(str(abort[0]), partial=transcript)
    return transcript
