#!/usr/bin/env python3
"""Minimal stdio adapter used by the dispatcher and conformance tests.

Speaks one JSON object per line: a capabilities handshake first, then
one response per request. Modes:

  ground_truth  answer from the corpus annotations (requires --corpus)
  always_yes    constant "Yes"
  hang          block forever on --hang-id (timeout testing)
  garbage       emit a non-JSON line for every request
"""

import argparse
import json
import sys
import time


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--mode", default="always_yes")
    ap.add_argument("--corpus", default=None)
    ap.add_argument("--max-images", type=int, default=10000)
    ap.add_argument("--hang-id", default=None)
    args = ap.parse_args()

    labels = {}
    if args.corpus:
        with open(args.corpus, encoding="utf-8") as f:
            doc = json.load(f)
        labels = {img["id"]: set(img.get("labels", [])) for img in doc["images"]}

    print(json.dumps({"capabilities": {"max_images": args.max_images}}), flush=True)

    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            print(json.dumps({"id": None, "error": "malformed_request"}), flush=True)
            continue
        rid = req.get("id", "")
        images = req.get("images", [])
        if args.hang_id and rid == args.hang_id:
            time.sleep(3600)
        if len(images) > args.max_images:
            print(json.dumps({"id": rid, "error": "too_many_images"}), flush=True)
            continue
        if args.mode == "garbage":
            print("this is not json", flush=True)
            continue
        if args.mode == "ground_truth":
            answer = answer_from_annotations(req["question"], images, labels)
        else:
            answer = "Yes"
        print(json.dumps({"id": rid, "answer": answer}), flush=True)
    return 0


def answer_from_annotations(question: str, images, labels) -> str:
    prefix = "You are given a set of images. Please answer the following question in Yes or No: "
    if question.startswith(prefix):
        question = question[len(prefix):]
    question = question.strip()
    if question.startswith("For the image with "):
        body = question[len("For the image with "):-1]
        anchor, _, target = body.partition(", is there ")
        mode = "single"
    elif ", do all of them contain " in question:
        body = question[len("For all images with "):-1]
        anchor, _, target = body.partition(", do all of them contain ")
        mode = "all"
    else:
        body = question[len("For all images with "):-1]
        anchor, _, target = body.partition(", do any of them contain ")
        mode = "any"
    hits = [target in labels.get(img["id"], set()) for img in images if anchor in labels.get(img["id"], set())]
    if not hits:
        return "No"
    if mode == "single":
        verdict = hits[0]
    elif mode == "all":
        verdict = all(hits)
    else:
        verdict = any(hits)
    return "Yes" if verdict else "No"


if __name__ == "__main__":
    sys.exit(main())
