/**
 * Teleop wire protocol, browser side: one JSON object per text frame.
 *
 * Mirrors the server's validation so a malformed frame is caught before
 * it goes out (client to server) and a malformed server frame never
 * reaches the renderer. Quaternions are scalar-first [w, x, y, z].
 */

export const PROTOCOL_VERSION = 1;

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];
export type Wrench6 = [number, number, number, number, number, number];
export type Mode = "low" | "mid" | "high";

export type Buttons = { menu: boolean; grip: boolean };

export type HelloMsg = { type: "hello"; arm: string; protocol: number };
export type InputMsg = {
  type: "input";
  seq: number;
  t_ms: number;
  pos: Vec3;
  quat: Quat;
  trigger: number;
  buttons: Buttons;
};
export type ClutchMsg = { type: "clutch"; seq: number; t_ms: number };
export type ModeToggleMsg = { type: "mode_toggle"; seq: number; t_ms: number };
export type ClientMsg = HelloMsg | InputMsg | ClutchMsg | ModeToggleMsg;

export type StateMsg = {
  type: "state";
  t: number;
  ee_pos: Vec3;
  ee_quat: Quat;
  wrench: Wrench6;
  gripper: number;
  mode: Mode;
  haptic: number;
  clutch: boolean;
};
export type ErrorMsg = { type: "error"; code: string; message: string };
export type ServerMsg = StateMsg | ErrorMsg;

export class WireError extends Error {
  constructor(public code: string, message: string) {
    super(message);
    this.name = "WireError";
  }
}

export const IDENTITY_QUAT: Quat = [1, 0, 0, 0];

function finiteVector(v: unknown, key: string, n: number): number[] {
  if (!Array.isArray(v) || v.length !== n ||
      !v.every((x) => typeof x === "number" && Number.isFinite(x))) {
    throw new WireError("bad_field", `${key} must be ${n} finite numbers`);
  }
  return v as number[];
}

function finiteNumber(v: unknown, key: string, lo?: number, hi?: number):
    number {
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new WireError("bad_field", `${key} must be a finite number`);
  }
  if (lo !== undefined && hi !== undefined && (v < lo || v > hi)) {
    throw new WireError("bad_field", `${key} out of range [${lo}, ${hi}]`);
  }
  return v;
}

export function quatNorm(q: Quat): number {
  return Math.hypot(q[0], q[1], q[2], q[3]);
}

/** Decode and validate one server frame; throws WireError on anything off. */
export function parseServerMessage(text: string): ServerMsg {
  let msg: unknown;
  try {
    msg = JSON.parse(text);
  } catch (exc) {
    throw new WireError("bad_json", `frame is not valid JSON: ${exc}`);
  }
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    throw new WireError("bad_json", "frame must be a JSON object");
  }
  const m = msg as Record<string, unknown>;
  if (m.type === "state") {
    finiteVector(m.ee_pos, "ee_pos", 3);
    finiteVector(m.ee_quat, "ee_quat", 4);
    finiteVector(m.wrench, "wrench", 6);
    finiteNumber(m.t, "t");
    finiteNumber(m.gripper, "gripper", 0, 1);
    finiteNumber(m.haptic, "haptic", 0, 1);
    if (m.mode !== "low" && m.mode !== "mid" && m.mode !== "high") {
      throw new WireError("bad_field", "mode must be low|mid|high");
    }
    if (typeof m.clutch !== "boolean") {
      throw new WireError("bad_field", "clutch must be boolean");
    }
    return m as StateMsg;
  }
  if (m.type === "error") {
    if (typeof m.code !== "string" || typeof m.message !== "string") {
      throw new WireError("bad_field", "code and message must be strings");
    }
    return m as ErrorMsg;
  }
  throw new WireError("bad_type", `unexpected server message ${m.type}`);
}

/** Validate an outgoing frame through the same gate, then serialize. */
export function encodeClientMessage(msg: ClientMsg): string {
  if (msg.type === "hello") {
    if (!msg.arm) throw new WireError("bad_field", "arm must be non-empty");
    if (msg.protocol !== PROTOCOL_VERSION) {
      throw new WireError("bad_protocol",
                          `protocol ${msg.protocol} unsupported`);
    }
  } else {
    finiteNumber(msg.seq, "seq");
    finiteNumber(msg.t_ms, "t_ms");
  }
  if (msg.type === "input") {
    finiteVector(msg.pos, "pos", 3);
    const q = finiteVector(msg.quat, "quat", 4) as Quat;
    if (Math.abs(quatNorm(q) - 1) > 1e-3) {
      throw new WireError("bad_field", "quat must be unit length");
    }
    finiteNumber(msg.trigger, "trigger", 0, 1);
    if (typeof msg.buttons.menu !== "boolean" ||
        typeof msg.buttons.grip !== "boolean") {
      throw new WireError("bad_field",
                          "buttons must carry boolean menu and grip");
    }
  }
  return JSON.stringify(msg);
}

/**
 * Strictly increasing sequence numbers across ALL message kinds of a
 * session — the server drops anything <= the highest seen.
 */
export class SeqCounter {
  private last = 0;

  next(): number {
    this.last += 1;
    return this.last;
  }

  get current(): number {
    return this.last;
  }
}
