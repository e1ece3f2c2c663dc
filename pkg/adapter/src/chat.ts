/**
 * Chat and caption modes: forward each request to an OpenAI-style
 * chat-completions endpoint and pass the reply text back verbatim.
 * The adapter owns no decoding choices beyond what the flags set.
 */

import type { AdapterRequest, Answerer } from "./protocol.js";

export interface ChatOptions {
  endpoint: string;
  model: string;
  temperature: number;
  timeoutMs: number;
  includePaths: boolean;
}

interface ChatReply {
  choices?: { message?: { content?: string }; text?: string }[];
  answer?: string;
}

export function makeChatAnswerer(opts: ChatOptions): Answerer {
  return async (req: AdapterRequest): Promise<string> => {
    let content = req.question;
    if (opts.includePaths && req.images.length > 0) {
      const paths = req.images.map((img, k) => `Image (${k + 1}): ${img.path || img.id}`);
      content = `${paths.join("\n")}\n\n${req.question}`;
    }
    const body = {
      model: opts.model,
      temperature: opts.temperature,
      messages: [{ role: "user", content }],
    };
    const controller = new AbortController();
    const timer = setTimeout(() => controller.abort(), opts.timeoutMs);
    try {
      const resp = await fetch(opts.endpoint, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
        signal: controller.signal,
      });
      if (!resp.ok) {
        throw new Error(`endpoint returned ${resp.status}`);
      }
      const doc = (await resp.json()) as ChatReply;
      const text =
        doc.choices?.[0]?.message?.content ?? doc.choices?.[0]?.text ?? doc.answer;
      if (typeof text !== "string") {
        throw new Error("endpoint reply carried no text");
      }
      return text;
    } finally {
      clearTimeout(timer);
    }
  };
}
