/**
 * Wire types for the vps/1 stdio protocol.
 *
 * Newline-delimited JSON frames; one reply per request, strictly FIFO.
 * See docs/sidecar-protocol.md in the consuming repository for the full
 * grammar and failure semantics.
 */

export const PROTOCOL_VERSION = "vps/1";

export type Op = "hello" | "embed" | "shot_scores" | "transcribe";

export type ErrorCode =
  | "version_mismatch"
  | "model_unavailable"
  | "need_two_frames"
  | "inference_error"
  | "unsupported_op"
  | "bad_frame";

export interface RequestFrame {
  op: Op;
  id: number;
  payload?: Record<string, unknown>;
}

export interface OkReply {
  id: number | null;
  ok: true;
  payload: Record<string, unknown>;
}

export interface ErrorReply {
  id: number | null;
  ok: false;
  error: { code: ErrorCode; message: string };
}

export type Reply = OkReply | ErrorReply;

export interface Capabilities {
  version: string;
  embedding_dim: number;
  supports_shot_scores: boolean;
  supports_transcribe: boolean;
  model_ids: Record<string, string>;
}

export function ok(id: number | null, payload: Record<string, unknown>): OkReply {
  return { id, ok: true, payload };
}

export function err(id: number | null, code: ErrorCode, message: string): ErrorReply {
  return { id, ok: false, error: { code, message } };
}
