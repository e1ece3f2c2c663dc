/**
 * Wire protocol types and the line loop.
 *
 * One JSON object per line in both directions. The adapter announces
 * {"capabilities":{"max_images":N}} before anything else, then answers
 * every request line with exactly one response line carrying the same
 * id. Malformed input never kills the loop; it yields an error
 * response instead.
 */

import * as readline from "node:readline";

export interface AdapterRequest {
  id: string;
  question: string;
  images: { id: string; path: string }[];
  meta?: { mode?: string; haystack_size?: number };
}

export interface AdapterResponse {
  id: string | null;
  answer?: string;
  error?: string;
}

export type Answerer = (req: AdapterRequest) => Promise<string> | string;

export interface LoopOptions {
  maxImages: number;
  answer: Answerer;
  input?: NodeJS.ReadableStream;
  output?: NodeJS.WritableStream;
}

function emit(out: NodeJS.WritableStream, doc: unknown): void {
  out.write(JSON.stringify(doc) + "\n");
}

export async function runLoop(opts: LoopOptions): Promise<void> {
  const input = opts.input ?? process.stdin;
  const output = opts.output ?? process.stdout;
  emit(output, { capabilities: { max_images: opts.maxImages } });

  const rl = readline.createInterface({ input, terminal: false });
  for await (const line of rl) {
    if (!line.trim()) continue;
    let req: AdapterRequest;
    try {
      req = JSON.parse(line);
    } catch {
      emit(output, { id: null, error: "malformed_request" } satisfies AdapterResponse);
      continue;
    }
    const id = typeof req.id === "string" ? req.id : null;
    if (id === null || typeof req.question !== "string" || !Array.isArray(req.images)) {
      emit(output, { id, error: "malformed_request" } satisfies AdapterResponse);
      continue;
    }
    if (req.images.length > opts.maxImages) {
      emit(output, { id, error: "too_many_images" } satisfies AdapterResponse);
      continue;
    }
    try {
      const answer = await opts.answer(req);
      emit(output, { id, answer } satisfies AdapterResponse);
    } catch (err) {
      emit(output, { id, error: String(err) } satisfies AdapterResponse);
    }
  }
}
