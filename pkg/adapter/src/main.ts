#!/usr/bin/env node
/**
 * hayrag-adapter: reference answerer for the JSON-lines wire protocol.
 *
 *   hayrag-adapter --mode stub --corpus corpus.json [--noise 0.5] [--seed 0]
 *   hayrag-adapter --mode chat --endpoint http://host/v1/chat/completions [--model m]
 *   hayrag-adapter --mode caption --endpoint http://host/v1/chat/completions
 *
 * Common flags: --max-images N (capacity announced in the handshake,
 * default 10000). Environment variables HAYRAG_ADAPTER_ENDPOINT and
 * HAYRAG_ADAPTER_MODEL supply defaults for the HTTP modes.
 */

import { makeChatAnswerer } from "./chat.js";
import { runLoop } from "./protocol.js";
import { makeStubAnswerer } from "./stub.js";

interface Flags {
  mode: string;
  corpus: string | null;
  noise: number;
  seed: number;
  maxImages: number;
  endpoint: string | null;
  model: string;
  temperature: number;
  timeoutMs: number;
}

const USAGE = `usage: hayrag-adapter --mode {stub|chat|caption} [options]
  --corpus FILE     annotation file for stub mode
  --noise P         stub: flip the ground-truth answer with probability P
  --seed N          stub: seed for the per-question noise draw (default 0)
  --max-images N    capacity announced in the handshake (default 10000)
  --endpoint URL    chat/caption: chat-completions endpoint
  --model NAME      chat/caption: model identifier (default from env)
  --temperature T   chat/caption sampling temperature (default 0)
  --timeout-ms N    chat/caption request timeout (default 60000)`;

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {
    mode: "stub",
    corpus: null,
    noise: 0,
    seed: 0,
    maxImages: 10000,
    endpoint: process.env.HAYRAG_ADAPTER_ENDPOINT ?? null,
    model: process.env.HAYRAG_ADAPTER_MODEL ?? "default",
    temperature: 0,
    timeoutMs: 60000,
  };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      i += 1;
      if (i >= argv.length) throw new Error(`${flag} needs a value`);
      return argv[i];
    };
    switch (flag) {
      case "--mode":
        flags.mode = next();
        break;
      case "--corpus":
        flags.corpus = next();
        break;
      case "--noise":
        flags.noise = Number(next());
        break;
      case "--seed":
        flags.seed = Number(next());
        break;
      case "--max-images":
        flags.maxImages = Number(next());
        break;
      case "--endpoint":
        flags.endpoint = next();
        break;
      case "--model":
        flags.model = next();
        break;
      case "--temperature":
        flags.temperature = Number(next());
        break;
      case "--timeout-ms":
        flags.timeoutMs = Number(next());
        break;
      case "--help":
      case "-h":
        console.error(USAGE);
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag: ${flag}`);
    }
  }
  return flags;
}

async function main(): Promise<void> {
  let flags: Flags;
  try {
    flags = parseFlags(process.argv.slice(2));
  } catch (err) {
    console.error(String(err));
    console.error(USAGE);
    process.exit(1);
  }

  let answer;
  if (flags.mode === "stub") {
    if (!flags.corpus) {
      console.error("stub mode requires --corpus");
      process.exit(1);
    }
    answer = makeStubAnswerer(flags.corpus, flags.noise, flags.seed);
  } else if (flags.mode === "chat" || flags.mode === "caption") {
    if (!flags.endpoint) {
      console.error(`${flags.mode} mode requires --endpoint`);
      process.exit(1);
    }
    answer = makeChatAnswerer({
      endpoint: flags.endpoint,
      model: flags.model,
      temperature: flags.temperature,
      timeoutMs: flags.timeoutMs,
      includePaths: flags.mode === "caption",
    });
  } else {
    console.error(`unknown mode: ${flags.mode}`);
    console.error(USAGE);
    process.exit(1);
  }

  await runLoop({ maxImages: flags.maxImages, answer });
}

main().catch((err) => {
  console.error("fatal:", err);
  process.exit(1);
});
