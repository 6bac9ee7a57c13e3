// View model for the console: chat bubbles, answer affordances, banner.
// No DOM here — rendering is a straight projection of this state, which
// keeps every interpretation decision on the service side and the client
// testable without a browser.

import type { PendingQuestion, WorldView } from "./protocol.js";

export interface Bubble {
  who: "user" | "agent";
  text: string;
}

export type Affordance =
  | { type: "buttons"; options: ["yes", "no"] }
  | { type: "choices"; options: string[] }
  | { type: "text" };

export interface ConsoleState {
  bubbles: Bubble[];
  affordance: Affordance;
  inputEnabled: boolean;
  banner: string | null;
  world: WorldView | null;
  lastSeq: number; // highest applied sequence number, -1 before any event
}

export function initialState(): ConsoleState {
  return {
    bubbles: [],
    affordance: { type: "text" },
    inputEnabled: false,
    banner: null,
    world: null,
    lastSeq: -1,
  };
}

/** Binary questions get yes/no buttons that send the literal words;
 * grounding questions get the option list; everything else is free text. */
export function affordanceFor(pending: PendingQuestion | null): Affordance {
  if (pending === null) return { type: "text" };
  if (pending.expected === "binary")
    return { type: "buttons", options: ["yes", "no"] };
  if (pending.expected === "choice-list")
    return { type: "choices", options: [...pending.choices] };
  return { type: "text" };
}

export function appendBubble(
  state: ConsoleState,
  who: Bubble["who"],
  text: string,
): void {
  state.bubbles.push({ who, text });
}

export function terminatedNotice(terminal: string): string {
  return `Session ended (${terminal}). Reload to start a new one.`;
}
