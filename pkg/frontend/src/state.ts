// View-model reducer. All state derives from API responses; frames apply
// in timestamp order and out-of-order stragglers are dropped.

import type { Rejection, Reservation, StatusFrame, Topology } from "./types";

export interface ViewModel {
  topology: Topology | null;
  frame: StatusFrame | null;
  reservations: Reservation[];
  lastRejection: Rejection | null;
  connectionLive: boolean;
  lastFrameAtMs: number | null; // wall clock of last received frame
}

export function initialViewModel(): ViewModel {
  return {
    topology: null,
    frame: null,
    reservations: [],
    lastRejection: null,
    connectionLive: false,
    lastFrameAtMs: null,
  };
}

export function applyFrame(vm: ViewModel, frame: StatusFrame, receivedAtMs: number): ViewModel {
  if (vm.frame && frame.timestamp_ms < vm.frame.timestamp_ms) {
    return vm; // out-of-order: ignore
  }
  return { ...vm, frame, connectionLive: true, lastFrameAtMs: receivedAtMs };
}

export function markConnectionDown(vm: ViewModel): ViewModel {
  return vm.connectionLive ? { ...vm, connectionLive: false } : vm;
}

// Stale when the stream is down or nothing arrived for a while; the map
// shows a banner instead of silently freezing.
export const STALE_AFTER_MS = 5000;

export function isStale(vm: ViewModel, nowMs: number): boolean {
  if (!vm.frame) return false;
  if (!vm.connectionLive) return true;
  return vm.lastFrameAtMs !== null && nowMs - vm.lastFrameAtMs > STALE_AFTER_MS;
}

export function activeNodeIds(frame: StatusFrame): Set<string> {
  return new Set(frame.nodes.filter((n) => n.state.startsWith("active")).map((n) => n.id));
}
