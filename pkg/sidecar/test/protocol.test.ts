/**
 * End-to-end protocol tests against the built sidecar process: handshake,
 * FIFO pipelining under load, error replies, and crash containment.
 */

import { afterEach, beforeAll, describe, expect, it } from "vitest";
import { ChildProcessWithoutNullStreams, spawn } from "node:child_process";
import { createInterface } from "node:readline";
import { fileURLToPath } from "node:url";
import path from "node:path";
import jpeg from "jpeg-js";

const MAIN = path.join(path.dirname(fileURLToPath(import.meta.url)), "..", "dist", "main.js");

function solidJpegB64(r: number, g: number, b: number): string {
  const w = 24, h = 18;
  const data = Buffer.alloc(w * h * 4);
  for (let i = 0; i < data.length; i += 4) {
    data[i] = r; data[i + 1] = g; data[i + 2] = b; data[i + 3] = 255;
  }
  return jpeg.encode({ data, width: w, height: h }, 92).data.toString("base64");
}

const RED = solidJpegB64(230, 20, 20);
const BLUE = solidJpegB64(20, 20, 230);

class SidecarHandle {
  proc: ChildProcessWithoutNullStreams;
  private replies: unknown[] = [];
  private waiters: Array<(v: unknown) => void> = [];
  closed = false;

  constructor(args: string[] = ["--stdio"]) {
    this.proc = spawn("node", [MAIN, ...args], { stdio: ["pipe", "pipe", "ignore"] });
    const rl = createInterface({ input: this.proc.stdout });
    rl.on("line", (line) => {
      let value: unknown;
      try {
        value = JSON.parse(line);
      } catch {
        return;
      }
      const waiter = this.waiters.shift();
      if (waiter) waiter(value);
      else this.replies.push(value);
    });
    this.proc.on("close", () => {
      this.closed = true;
      for (const waiter of this.waiters.splice(0)) waiter(null);
    });
  }

  send(frame: unknown): void {
    this.proc.stdin.write(JSON.stringify(frame) + "\n");
  }

  sendRaw(line: string): void {
    this.proc.stdin.write(line + "\n");
  }

  next(timeoutMs = 5000): Promise<any> {
    const queued = this.replies.shift();
    if (queued !== undefined) return Promise.resolve(queued);
    if (this.closed) return Promise.resolve(null);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new Error("timed out waiting for a reply")), timeoutMs);
      this.waiters.push((v) => {
        clearTimeout(timer);
        resolve(v);
      });
    });
  }

  kill(): void {
    this.proc.kill("SIGKILL");
  }

  stop(): void {
    if (!this.closed) this.proc.kill();
  }
}

let handle: SidecarHandle | null = null;

afterEach(() => {
  handle?.stop();
  handle = null;
});

async function handshake(h: SidecarHandle): Promise<any> {
  h.send({ op: "hello", id: 1, payload: { version: "vps/1" } });
  return h.next();
}

describe("vps/1 protocol", () => {
  beforeAll(() => {
    // dist/main.js must exist; `npm test` builds before running vitest
  });

  it("answers the handshake with capabilities", async () => {
    handle = new SidecarHandle();
    const reply = await handshake(handle);
    expect(reply.id).toBe(1);
    expect(reply.ok).toBe(true);
    expect(reply.payload.version).toBe("vps/1");
    expect(reply.payload.embedding_dim).toBeGreaterThan(0);
    expect(reply.payload.supports_shot_scores).toBe(true);
    expect(reply.payload.model_ids.embed).toBeTruthy();
  });

  it("rejects an alien protocol version", async () => {
    handle = new SidecarHandle();
    handle.send({ op: "hello", id: 1, payload: { version: "vps/0" } });
    const reply = await handle.next();
    expect(reply.ok).toBe(false);
    expect(reply.error.code).toBe("version_mismatch");
  });

  it("embeds frames with the advertised dimension", async () => {
    handle = new SidecarHandle();
    const caps = (await handshake(handle)).payload;
    handle.send({ op: "embed", id: 2, payload: { frames_b64: [RED, RED] } });
    const reply = await handle.next();
    expect(reply.ok).toBe(true);
    expect(reply.payload.vectors).toHaveLength(2);
    expect(reply.payload.vectors[0]).toHaveLength(caps.embedding_dim);
    expect(reply.payload.vectors[0]).toEqual(reply.payload.vectors[1]);
  });

  it("scores shot transitions and enforces the two-frame precondition", async () => {
    handle = new SidecarHandle();
    await handshake(handle);
    handle.send({ op: "shot_scores", id: 2, payload: { frames_b64: [RED, BLUE] } });
    const cut = await handle.next();
    expect(cut.payload.scores[0]).toBeGreaterThan(0.9);
    handle.send({ op: "shot_scores", id: 3, payload: { frames_b64: [RED] } });
    const short = await handle.next();
    expect(short.ok).toBe(false);
    expect(short.error.code).toBe("need_two_frames");
  });

  it("keeps FIFO id correlation across 100 pipelined requests", async () => {
    handle = new SidecarHandle();
    await handshake(handle);
    const ids: number[] = [];
    for (let i = 0; i < 100; i++) {
      const id = i + 2;
      ids.push(id);
      if (i % 2 === 0) {
        handle.send({ op: "embed", id, payload: { frames_b64: [RED] } });
      } else {
        handle.send({ op: "shot_scores", id, payload: { frames_b64: [RED, BLUE] } });
      }
    }
    for (let i = 0; i < 100; i++) {
      const reply = await handle.next(10000);
      expect(reply.id).toBe(ids[i]); // replies arrive in request order
      expect(reply.ok).toBe(true);
      if (i % 2 === 0) expect(reply.payload.vectors).toBeTruthy();
      else expect(reply.payload.scores[0]).toBeGreaterThan(0.9);
    }
  }, 30000);

  it("answers unparseable lines with bad_frame", async () => {
    handle = new SidecarHandle();
    await handshake(handle);
    handle.sendRaw("{definitely not json");
    const reply = await handle.next();
    expect(reply.ok).toBe(false);
    expect(reply.error.code).toBe("bad_frame");
  });

  it("reports transcription as unsupported", async () => {
    handle = new SidecarHandle();
    await handshake(handle);
    handle.send({ op: "transcribe", id: 2, payload: { pcm_b64: "" } });
    const reply = await handle.next();
    expect(reply.error.code).toBe("unsupported_op");
  });

  it("being killed mid-stream surfaces as stream end, not a hang", async () => {
    handle = new SidecarHandle();
    await handshake(handle);
    handle.send({ op: "embed", id: 2, payload: { frames_b64: [RED] } });
    handle.kill();
    const started = Date.now();
    let sawEnd = false;
    for (let i = 0; i < 10; i++) {
      const reply = await handle.next(5000);
      if (reply === null) {
        sawEnd = true;
        break;
      }
    }
    expect(sawEnd).toBe(true);
    expect(Date.now() - started).toBeLessThan(5000);
  });

  it("refuses to start without --stdio", async () => {
    const proc = spawn("node", [MAIN], { stdio: ["pipe", "pipe", "pipe"] });
    const code = await new Promise<number | null>((resolve) =>
      proc.on("close", resolve));
    expect(code).toBe(1);
  });
});
