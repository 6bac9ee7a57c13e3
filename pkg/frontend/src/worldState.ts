// World view = fold of received events over the initial snapshot,
// deduplicated by sequence number. Pure functions; replaying the same
// stream twice yields an identical view.

import type { ServiceEvent, WorldView } from "./protocol.js";

export function cloneWorld(world: WorldView): WorldView {
  return JSON.parse(JSON.stringify(world)) as WorldView;
}

export function applyEvent(world: WorldView, ev: ServiceEvent): WorldView {
  const next = cloneWorld(world);
  switch (ev.kind) {
    case "move":
      next.robot = ev.payload["to"] ?? next.robot;
      break;
    case "pick":
      next.objects[ev.payload["object"] ?? ""] = "gripper";
      next.gripper = ev.payload["object"] ?? null;
      break;
    case "place":
      next.objects[ev.payload["object"] ?? ""] = ev.payload["location"] ?? "";
      next.gripper = null;
      break;
    case "toggle": {
      const dev = next.devices[ev.payload["device"] ?? ""];
      if (dev) dev.state = ev.payload["state"] ?? dev.state;
      break;
    }
    case "speak":
      break; // rendered in the transcript, not the world
  }
  return next;
}

/**
 * Fold events into the world, skipping any sequence number already in
 * `seen` (the feed is at-least-once). Mutates `seen`.
 */
export function foldEvents(
  world: WorldView,
  events: ServiceEvent[],
  seen: Set<number>,
): WorldView {
  let out = world;
  for (const ev of events) {
    if (seen.has(ev.seq)) continue;
    seen.add(ev.seq);
    out = applyEvent(out, ev);
  }
  return out;
}

// -- node-graph projection for rendering ----------------------------------

export interface GraphNode {
  id: string;
  robot: boolean;
  objects: string[];
  devices: Array<{ name: string; state: string }>;
  persons: string[];
}

export interface Graph {
  nodes: GraphNode[];
  edges: Array<[string, string]>;
  carrying: string | null;
}

export function toGraph(world: WorldView): Graph {
  const nodes: GraphNode[] = Object.keys(world.locations)
    .sort()
    .map((id) => ({
      id,
      robot: world.robot === id,
      objects: Object.entries(world.objects)
        .filter(([, loc]) => loc === id)
        .map(([name]) => name)
        .sort(),
      devices: Object.entries(world.devices)
        .filter(([, d]) => d.location === id)
        .map(([name, d]) => ({ name, state: d.state }))
        .sort((a, b) => a.name.localeCompare(b.name)),
      persons: Object.entries(world.persons)
        .filter(([, loc]) => loc === id)
        .map(([name]) => name)
        .sort(),
    }));
  const edges: Array<[string, string]> = [];
  for (const [a, adj] of Object.entries(world.locations)) {
    for (const b of adj) {
      if (a < b) edges.push([a, b]);
    }
  }
  edges.sort((x, y) => (x[0] + x[1]).localeCompare(y[0] + y[1]));
  return { nodes, edges, carrying: world.gripper };
}
