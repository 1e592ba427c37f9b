/**
 * Line loop and request dispatch. Requests are handled synchronously in
 * arrival order, which is what makes the reply stream strictly FIFO.
 */

import readline from "node:readline";
import {
  Capabilities,
  PROTOCOL_VERSION,
  Reply,
  RequestFrame,
  err,
  ok,
} from "./protocol.js";
import {
  EMBEDDING_DIM,
  EMBED_MODEL_ID,
  SHOT_MODEL_ID,
  decodeFrame,
  embedFrame,
  shotScore,
} from "./models.js";

function capabilities(): Capabilities {
  return {
    version: PROTOCOL_VERSION,
    embedding_dim: EMBEDDING_DIM,
    supports_shot_scores: true,
    supports_transcribe: false,
    model_ids: { embed: EMBED_MODEL_ID, shot: SHOT_MODEL_ID },
  };
}

function framesOf(payload: Record<string, unknown> | undefined): string[] {
  const frames = payload?.["frames_b64"];
  if (!Array.isArray(frames) || frames.some((f) => typeof f !== "string")) {
    return [];
  }
  return frames as string[];
}

export function handleFrame(frame: RequestFrame): Reply {
  const { op, id, payload } = frame;
  switch (op) {
    case "hello": {
      const version = payload?.["version"];
      if (version !== PROTOCOL_VERSION) {
        return err(id, "version_mismatch",
          `this sidecar speaks ${PROTOCOL_VERSION}, client sent ${String(version)}`);
      }
      return ok(id, capabilities() as unknown as Record<string, unknown>);
    }
    case "embed": {
      const frames = framesOf(payload);
      if (frames.length === 0) {
        return err(id, "inference_error", "embed needs at least one frame");
      }
      try {
        const vectors = frames.map((b64) => embedFrame(decodeFrame(b64)));
        return ok(id, { vectors });
      } catch (e) {
        return err(id, "inference_error", `frame decode failed: ${String(e)}`);
      }
    }
    case "shot_scores": {
      const frames = framesOf(payload);
      if (frames.length < 2) {
        return err(id, "need_two_frames", "shot scoring needs >= 2 frames");
      }
      try {
        const decoded = frames.map(decodeFrame);
        const scores: number[] = [];
        for (let i = 1; i < decoded.length; i++) {
          scores.push(shotScore(decoded[i - 1], decoded[i]));
        }
        return ok(id, { scores });
      } catch (e) {
        return err(id, "inference_error", `frame decode failed: ${String(e)}`);
      }
    }
    case "transcribe":
      return err(id, "unsupported_op", "no speech model loaded");
    default:
      return err(id, "unsupported_op", `unknown op ${String(op)}`);
  }
}

function parseRequest(line: string): RequestFrame | null {
  let value: unknown;
  try {
    value = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof value !== "object" || value === null) return null;
  const frame = value as Partial<RequestFrame>;
  if (typeof frame.op !== "string" || typeof frame.id !== "number") return null;
  return frame as RequestFrame;
}

export function serve(input = process.stdin, output = process.stdout): Promise<void> {
  const rl = readline.createInterface({ input, terminal: false });
  const write = (reply: Reply) => {
    output.write(JSON.stringify(reply) + "\n");
  };
  rl.on("line", (line: string) => {
    const trimmed = line.trim();
    if (!trimmed) return;
    const request = parseRequest(trimmed);
    if (request === null) {
      write(err(null, "bad_frame", "unparseable request frame"));
      return;
    }
    write(handleFrame(request));
  });
  return new Promise((resolve) => rl.on("close", resolve));
}
