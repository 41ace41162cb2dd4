/**
 * One WebSocket session driving one arm.
 *
 * Owns the connection lifecycle (hello handshake, retry with backoff,
 * permanent stop on protocol mismatch), the strictly increasing sequence
 * counter, and the server-state mirror the UI renders from. Input frames
 * are only sent while the socket is open; attempts in any other state
 * are counted and surfaced rather than queued, because a stale input is
 * worse than a missing one.
 */
import type { DeviceSample } from "./input.js";
import type { ServerMsg, StateMsg } from "./protocol.js";
import {
  encodeClientMessage,
  parseServerMessage,
  PROTOCOL_VERSION,
  SeqCounter,
  WireError,
} from "./protocol.js";

export type SessionStatus =
  | "connecting"
  | "open"
  | "retrying"
  | "closed"
  | "failed";

const WS_OPEN = 1;

export type WebSocketLike = {
  readyState: number;
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
};
export type WebSocketCtor = new (url: string) => WebSocketLike;

export type SessionOptions = {
  url: string;
  arm: string;
  /** Browser default; node tests pass the `ws` implementation. */
  webSocket?: WebSocketCtor;
  /** Timestamp source for t_ms; defaults to performance.now. */
  now?: () => number;
  backoffMs?: number;
  maxBackoffMs?: number;
  onState?: (state: StateMsg) => void;
  onError?: (code: string, message: string) => void;
  onStatus?: (status: SessionStatus) => void;
  /** Tap on every outgoing frame (the round-trip tests record the log). */
  onSend?: (text: string) => void;
};

export class ClientSession {
  readonly arm: string;
  status: SessionStatus = "closed";
  lastState: StateMsg | null = null;
  statesReceived = 0;
  droppedInputs = 0;

  private readonly opts: SessionOptions;
  private readonly makeSocket: WebSocketCtor;
  private readonly now: () => number;
  private readonly seq = new SeqCounter();
  private socket: WebSocketLike | null = null;
  private backoff: number;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;
  private failed = false;

  constructor(opts: SessionOptions) {
    this.opts = opts;
    this.arm = opts.arm;
    const ctor = opts.webSocket ??
      (globalThis as { WebSocket?: WebSocketCtor }).WebSocket;
    if (!ctor) throw new Error("no WebSocket implementation available");
    this.makeSocket = ctor;
    this.now = opts.now ?? (() => performance.now());
    this.backoff = opts.backoffMs ?? 500;
  }

  connect(): void {
    if (this.stopped) return;
    this.setStatus("connecting");
    const sock = new this.makeSocket(this.opts.url);
    this.socket = sock;
    sock.onopen = () => {
      this.sendRaw(encodeClientMessage({
        type: "hello", arm: this.arm, protocol: PROTOCOL_VERSION,
      }));
      this.backoff = this.opts.backoffMs ?? 500;
      this.setStatus("open");
    };
    sock.onmessage = (ev) => this.receive(ev.data);
    sock.onerror = () => { /* the close event carries the retry */ };
    sock.onclose = () => {
      if (this.socket !== sock) return; // superseded
      this.socket = null;
      if (this.failed) {
        this.setStatus("failed");
      } else if (this.stopped) {
        this.setStatus("closed");
      } else {
        this.scheduleRetry();
      }
    };
  }

  /** Sample out, provided the socket is open; returns whether it went. */
  sendInput(sample: DeviceSample): boolean {
    if (!this.isOpen()) {
      this.droppedInputs += 1;
      return false;
    }
    this.sendRaw(encodeClientMessage({
      type: "input",
      seq: this.seq.next(),
      t_ms: this.now(),
      pos: sample.pos,
      quat: sample.quat,
      trigger: sample.trigger,
      buttons: sample.buttons,
    }));
    return true;
  }

  sendClutch(): boolean {
    return this.sendCommand("clutch");
  }

  sendModeToggle(): boolean {
    return this.sendCommand("mode_toggle");
  }

  close(): void {
    this.stopped = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    if (this.socket) {
      this.socket.close();
    } else {
      this.setStatus("closed");
    }
  }

  isOpen(): boolean {
    return this.socket !== null && this.socket.readyState === WS_OPEN;
  }

  private sendCommand(type: "clutch" | "mode_toggle"): boolean {
    if (!this.isOpen()) return false;
    this.sendRaw(encodeClientMessage({
      type, seq: this.seq.next(), t_ms: this.now(),
    }));
    return true;
  }

  private sendRaw(text: string): void {
    this.socket!.send(text);
    this.opts.onSend?.(text);
  }

  private receive(data: unknown): void {
    let msg: ServerMsg;
    try {
      msg = parseServerMessage(String(data));
    } catch (exc) {
      if (exc instanceof WireError) {
        this.opts.onError?.(exc.code, exc.message);
        return;
      }
      throw exc;
    }
    if (msg.type === "state") {
      this.lastState = msg;
      this.statesReceived += 1;
      this.opts.onState?.(msg);
    } else {
      this.opts.onError?.(msg.code, msg.message);
      if (msg.code === "bad_protocol" || msg.code === "arm_taken") {
        this.stopped = true; // retrying cannot fix these
        this.failed = true;
      }
    }
  }

  private scheduleRetry(): void {
    this.setStatus("retrying");
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      this.connect();
    }, this.backoff);
    this.backoff = Math.min(this.backoff * 2,
                            this.opts.maxBackoffMs ?? 8000);
  }

  private setStatus(status: SessionStatus): void {
    this.status = status;
    this.opts.onStatus?.(status);
  }
}
