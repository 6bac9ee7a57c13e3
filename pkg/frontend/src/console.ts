// Console orchestration: one session against the chat service, a local
// transcript, and a world view folded from the event feed. Thin client:
// it never interprets the user's words, it only ships them.

import {
  Connection,
  Json,
  PendingQuestion,
  ServiceEvent,
  TcpConnection,
  WorldView,
} from "./protocol.js";
import { foldEvents } from "./worldState.js";
import {
  ConsoleState,
  affordanceFor,
  appendBubble,
  initialState,
  terminatedNotice,
} from "./view.js";

export type Connector = () => Promise<Connection>;

export class OperatorConsole {
  readonly state: ConsoleState = initialState();
  private conn: Connection | null = null;
  private sessionId: string | null = null;
  private seen = new Set<number>();
  private connector: Connector;
  private worldName: string;

  constructor(connector: Connector, worldName = "home") {
    this.connector = connector;
    this.worldName = worldName;
  }

  static tcp(host: string, port: number, worldName = "home"): OperatorConsole {
    return new OperatorConsole(() => TcpConnection.connect(host, port), worldName);
  }

  async connect(): Promise<boolean> {
    try {
      this.conn = await this.connector();
    } catch (err) {
      this.state.banner = `Cannot reach the service: ${String(
        (err as Error).message ?? err,
      )}`;
      this.state.inputEnabled = false;
      return false;
    }
    const created = await this.conn.call({
      op: "create_session",
      world: this.worldName,
    });
    if (created["ok"] !== true) {
      this.state.banner = String(created["message"] ?? "session refused");
      return false;
    }
    this.sessionId = String(created["session"]);
    appendBubble(this.state, "agent", String(created["greeting"]));
    this.state.inputEnabled = true;
    this.state.banner = null;
    await this.refresh();
    return true;
  }

  /** Re-establish the connection and resume the feed; already-applied
   * events are skipped by sequence number, so the view is unchanged by
   * duplicates. */
  async reconnect(): Promise<boolean> {
    if (this.sessionId === null) return this.connect();
    try {
      this.conn = await this.connector();
    } catch (err) {
      this.state.banner = `Cannot reach the service: ${String(
        (err as Error).message ?? err,
      )}`;
      return false;
    }
    this.state.banner = null;
    await this.pollEvents();
    await this.refresh();
    return true;
  }

  async send(text: string): Promise<void> {
    if (!this.conn || this.sessionId === null || !this.state.inputEnabled)
      return;
    appendBubble(this.state, "user", text);
    const reply = await this.conn.call({
      op: "post_utterance",
      session: this.sessionId,
      text,
    });
    if (reply["ok"] !== true) {
      this.state.banner = String(reply["message"] ?? "request failed");
      this.state.inputEnabled = false;
      return;
    }
    appendBubble(this.state, "agent", String(reply["response"]));
    this.applyEvents((reply["events"] as ServiceEvent[]) ?? []);
    const terminal = reply["terminal"];
    if (typeof terminal === "string") {
      this.state.inputEnabled = false;
      this.state.banner = terminatedNotice(terminal);
      this.state.affordance = { type: "text" };
      return;
    }
    await this.refresh();
  }

  answerYes(): Promise<void> {
    return this.send("yes");
  }

  answerNo(): Promise<void> {
    return this.send("no");
  }

  choose(option: string): Promise<void> {
    return this.send(option);
  }

  async pollEvents(): Promise<void> {
    if (!this.conn || this.sessionId === null) return;
    const reply = await this.conn.call({
      op: "get_events",
      session: this.sessionId,
      since: this.state.lastSeq + 1,
    });
    if (reply["ok"] === true)
      this.applyEvents((reply["events"] as ServiceEvent[]) ?? []);
  }

  /** Pull pending-question state and, on first call, the world snapshot. */
  private async refresh(): Promise<void> {
    if (!this.conn || this.sessionId === null) return;
    const snap = await this.conn.call({
      op: "snapshot",
      session: this.sessionId,
    });
    if (snap["ok"] !== true) return;
    if (this.state.world === null)
      this.state.world = snap["world"] as WorldView;
    this.state.affordance = affordanceFor(
      (snap["pending"] as PendingQuestion | null) ?? null,
    );
  }

  private applyEvents(events: ServiceEvent[]): void {
    for (const ev of events) {
      if (ev.kind === "speak" && !this.seen.has(ev.seq))
        appendBubble(this.state, "agent", String(ev.payload["text"]));
      if (ev.seq > this.state.lastSeq) this.state.lastSeq = ev.seq;
    }
    if (this.state.world !== null)
      this.state.world = foldEvents(this.state.world, events, this.seen);
    else for (const ev of events) this.seen.add(ev.seq);
  }

  close(): void {
    this.conn?.close();
  }
}
