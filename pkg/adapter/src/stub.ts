/**
 * Stub mode: answers from an annotation file, no network, no model.
 *
 * Ground truth parses the three question templates and checks object
 * presence against the corpus labels; an optional noise level flips
 * the answer with a fixed per-question probability, deterministically
 * derived from (seed, question id).
 */

import { createHash } from "node:crypto";
import { readFileSync } from "node:fs";

import type { AdapterRequest, Answerer } from "./protocol.js";

interface CorpusImage {
  id: string;
  labels?: string[];
  path?: string;
}

export type LabelIndex = Map<string, Set<string>>;

export function loadCorpusLabels(path: string): LabelIndex {
  const doc = JSON.parse(readFileSync(path, "utf-8")) as { images: CorpusImage[] };
  const index: LabelIndex = new Map();
  for (const image of doc.images) {
    index.set(image.id, new Set(image.labels ?? []));
  }
  return index;
}

const PROMPT_PREFIX =
  "You are given a set of images. Please answer the following question in Yes or No: ";

const TEMPLATES: [string, RegExp][] = [
  ["single", /^For the image with (.+), is there (.+)\?$/],
  ["multi_all", /^For all images with (.+), do all of them contain (.+)\?$/],
  ["multi_any", /^For all images with (.+), do any of them contain (.+)\?$/],
];

export function parseQuestion(text: string): { mode: string; anchor: string; target: string } {
  let body = text.trim();
  if (body.startsWith(PROMPT_PREFIX)) {
    body = body.slice(PROMPT_PREFIX.length).trim();
  }
  for (const [mode, pattern] of TEMPLATES) {
    const match = body.match(pattern);
    if (match) {
      return { mode, anchor: match[1], target: match[2] };
    }
  }
  throw new Error(`unrecognized question template: ${body}`);
}

export function groundTruth(req: AdapterRequest, labels: LabelIndex): string {
  const { mode, anchor, target } = parseQuestion(req.question);
  const hits: boolean[] = [];
  for (const image of req.images) {
    const imageLabels = labels.get(image.id);
    if (imageLabels && imageLabels.has(anchor)) {
      hits.push(imageLabels.has(target));
    }
  }
  if (hits.length === 0) return "No";
  let verdict: boolean;
  if (mode === "single") verdict = hits[0];
  else if (mode === "multi_all") verdict = hits.every(Boolean);
  else verdict = hits.some(Boolean);
  return verdict ? "Yes" : "No";
}

/** Uniform [0,1) derived from (seed, question id); stable across runs. */
export function unitHash(seed: number, id: string): number {
  const digest = createHash("sha256").update(`${seed}${id}`).digest();
  return digest.readUInt32LE(0) / 0x1_0000_0000;
}

export function makeStubAnswerer(corpusPath: string, noise: number, seed: number): Answerer {
  const labels = loadCorpusLabels(corpusPath);
  return (req: AdapterRequest): string => {
    const truth = groundTruth(req, labels);
    if (noise > 0 && unitHash(seed, req.id) < noise) {
      return truth === "Yes" ? "No" : "Yes";
    }
    return truth;
  };
}
