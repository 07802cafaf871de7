// Network map renderer. Pure string/data functions so tests run without
// a DOM; the shell drops the SVG into the page via innerHTML.
//
// Visual language: hubs are squares, terminals are circles. Active
// terminals carry a second ring, a filled core and a "*" label suffix,
// so the distinction survives without color. Flows are directed edges:
// source-to-user entangled-photon streams solid, user-to-detector
// returns dashed.

import type { StatusFrame, Topology } from "./types";

export interface NodeView {
  id: string;
  x: number;
  y: number;
  shape: "hub" | "terminal";
  active: boolean;
  state: string;
  label: string;
}

export interface FlowView {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
  kind: string;
}

const WIDTH = 640;
const HEIGHT = 520;
const PAD = 40;

function scaler(topology: Topology) {
  const xs = topology.nodes.map((n) => n.position[0]);
  const ys = topology.nodes.map((n) => n.position[1]);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMin = Math.min(...ys);
  const yMax = Math.max(...ys);
  const sx = (WIDTH - 2 * PAD) / Math.max(xMax - xMin, 1e-9);
  const sy = (HEIGHT - 2 * PAD) / Math.max(yMax - yMin, 1e-9);
  return (x: number, y: number): [number, number] => [
    PAD + (x - xMin) * sx,
    HEIGHT - PAD - (y - yMin) * sy,
  ];
}

export function nodeViews(topology: Topology, frame: StatusFrame | null): NodeView[] {
  const states = new Map((frame ? frame.nodes : []).map((n) => [n.id, n.state]));
  const toPx = scaler(topology);
  return topology.nodes.map((n) => {
    const [x, y] = toPx(n.position[0], n.position[1]);
    const state = states.get(n.id) ?? (n.kind === "terminal" ? "inactive" : "hub");
    const active = state.startsWith("active");
    return {
      id: n.id,
      x,
      y,
      shape: n.kind === "terminal" ? "terminal" : "hub",
      active,
      state,
      label: active ? `${n.id}*` : n.id,
    };
  });
}

export function flowViews(topology: Topology, frame: StatusFrame): FlowView[] {
  const toPx = scaler(topology);
  const at = new Map(topology.nodes.map((n) => [n.id, toPx(n.position[0], n.position[1])]));
  const views: FlowView[] = [];
  for (const flow of frame.flows) {
    const from = at.get(flow.source);
    const to = at.get(flow.dest);
    if (!from || !to) continue;
    views.push({ x1: from[0], y1: from[1], x2: to[0], y2: to[1], kind: flow.kind });
  }
  return views;
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function renderNetworkMap(
  topology: Topology,
  frame: StatusFrame | null,
  stale: boolean,
): string {
  const toPx = scaler(topology);
  const at = new Map(topology.nodes.map((n) => [n.id, toPx(n.position[0], n.position[1])]));
  const parts: string[] = [];
  parts.push(
    `<svg class="network-map" viewBox="0 0 ${WIDTH} ${HEIGHT}" xmlns="http://www.w3.org/2000/svg">`,
    `<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="7" markerHeight="7" orient="auto-start-reverse"><path d="M 0 0 L 10 5 L 0 10 z"/></marker></defs>`,
  );
  for (const link of topology.links) {
    const a = at.get(link.a);
    const b = at.get(link.b);
    if (!a || !b) continue;
    parts.push(
      `<line class="fiber" x1="${a[0].toFixed(1)}" y1="${a[1].toFixed(1)}" x2="${b[0].toFixed(1)}" y2="${b[1].toFixed(1)}"/>`,
    );
  }
  if (frame) {
    for (const f of flowViews(topology, frame)) {
      const dash = f.kind === "single_photons_to_detector" ? ` stroke-dasharray="6 4"` : "";
      parts.push(
        `<line class="flow ${f.kind}" x1="${f.x1.toFixed(1)}" y1="${f.y1.toFixed(1)}" ` +
          `x2="${f.x2.toFixed(1)}" y2="${f.y2.toFixed(1)}" marker-end="url(#arrow)"${dash}>` +
          `<title>${esc(f.kind)}</title></line>`,
      );
    }
  }
  for (const n of nodeViews(topology, frame)) {
    const cls = `node ${n.shape} ${n.active ? "active" : n.state}`;
    if (n.shape === "hub") {
      parts.push(
        `<rect class="${cls}" data-node="${esc(n.id)}" data-state="${esc(n.state)}" ` +
          `x="${(n.x - 9).toFixed(1)}" y="${(n.y - 9).toFixed(1)}" width="18" height="18"/>`,
      );
    } else {
      if (n.active) {
        parts.push(`<circle class="halo" cx="${n.x.toFixed(1)}" cy="${n.y.toFixed(1)}" r="13"/>`);
      }
      parts.push(
        `<circle class="${cls}" data-node="${esc(n.id)}" data-state="${esc(n.state)}" ` +
          `cx="${n.x.toFixed(1)}" cy="${n.y.toFixed(1)}" r="7"/>`,
      );
    }
    parts.push(
      `<text class="node-label${n.active ? " active" : ""}" x="${(n.x + 11).toFixed(1)}" ` +
        `y="${(n.y + 4).toFixed(1)}">${esc(n.label)}</text>`,
    );
  }
  if (stale) {
    parts.push(
      `<rect class="stale-banner" x="0" y="0" width="${WIDTH}" height="26"/>`,
      `<text class="stale-text" x="${WIDTH / 2}" y="18" text-anchor="middle">connection lost — data may be stale</text>`,
    );
  }
  parts.push("</svg>");
  return parts.join("\n");
}
