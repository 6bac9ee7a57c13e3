// Wire protocol of the chat service: every message, both directions, is a
// 4-byte big-endian length prefix followed by UTF-8 JSON. One connection
// carries any number of request/response pairs.

import * as net from "node:net";

export type Json = Record<string, unknown>;

export interface ServiceEvent {
  kind: "move" | "pick" | "place" | "toggle" | "speak";
  payload: Record<string, string>;
  seq: number;
}

export interface PendingQuestion {
  kind: string;
  subject: string;
  text: string;
  expected: "binary" | "value" | "choice-list";
  choices: string[];
  slot: string | null;
}

export interface WorldView {
  locations: Record<string, string[]>;
  robot: string;
  gripper: string | null;
  objects: Record<string, string>;
  devices: Record<string, { location: string; state: string }>;
  persons: Record<string, string>;
}

export function encodeMessage(obj: Json): Buffer {
  const body = Buffer.from(JSON.stringify(obj), "utf-8");
  const header = Buffer.alloc(4);
  header.writeUInt32BE(body.length, 0);
  return Buffer.concat([header, body]);
}

/** Incremental decoder for the length-prefixed stream. */
export class FrameDecoder {
  private buf = Buffer.alloc(0);

  push(chunk: Buffer): Json[] {
    this.buf = Buffer.concat([this.buf, chunk]);
    const out: Json[] = [];
    for (;;) {
      if (this.buf.length < 4) break;
      const len = this.buf.readUInt32BE(0);
      if (this.buf.length < 4 + len) break;
      const body = this.buf.subarray(4, 4 + len);
      this.buf = this.buf.subarray(4 + len);
      out.push(JSON.parse(body.toString("utf-8")) as Json);
    }
    return out;
  }
}

export interface Connection {
  call(request: Json): Promise<Json>;
  close(): void;
}

/**
 * Blocking-style client: requests are serialized, each resolved by the
 * next framed response.
 */
export class TcpConnection implements Connection {
  private sock: net.Socket;
  private decoder = new FrameDecoder();
  private waiters: Array<(msg: Json) => void> = [];
  private failure: Error | null = null;

  private constructor(sock: net.Socket) {
    this.sock = sock;
    sock.on("data", (chunk) => {
      for (const msg of this.decoder.push(chunk)) {
        const w = this.waiters.shift();
        if (w) w(msg);
      }
    });
    const fail = (err: Error) => {
      this.failure = err;
      while (this.waiters.length) this.waiters.shift()!(errorReply(err));
    };
    sock.on("error", fail);
    sock.on("close", () => fail(new Error("connection closed")));
  }

  static connect(host: string, port: number): Promise<TcpConnection> {
    return new Promise((resolve, reject) => {
      const sock = net.createConnection({ host, port });
      sock.once("connect", () => resolve(new TcpConnection(sock)));
      sock.once("error", reject);
    });
  }

  call(request: Json): Promise<Json> {
    if (this.failure) return Promise.resolve(errorReply(this.failure));
    return new Promise((resolve) => {
      this.waiters.push(resolve);
      this.sock.write(encodeMessage(request));
    });
  }

  close(): void {
    this.sock.destroy();
  }
}

function errorReply(err: Error): Json {
  return { ok: false, error: "connection", message: String(err.message) };
}
