// Reservation form logic: client-side pre-validation mirrors the server's
// per-user capacity (5 EPS / 4 SPD) so over-capacity requests never leave
// the browser, and conflict responses render the blocking reservation so
// the user can pick a different window or channel.

import type { Rejection } from "./types";

export interface ReservationDraft {
  epsChannels: number[];
  spdChannels: number[];
  startMs: number;
  endMs: number;
}

export const EPS_CAPACITY = 5;
export const SPD_CAPACITY = 4;

export function validateDraft(draft: ReservationDraft): string[] {
  const errors: string[] = [];
  if (draft.epsChannels.length === 0 && draft.spdChannels.length === 0) {
    errors.push("select at least one channel");
  }
  if (draft.epsChannels.length > EPS_CAPACITY) {
    errors.push(`at most ${EPS_CAPACITY} EPS channels per user`);
  }
  if (draft.spdChannels.length > SPD_CAPACITY) {
    errors.push(`at most ${SPD_CAPACITY} SPD channels per user`);
  }
  if (new Set(draft.epsChannels).size !== draft.epsChannels.length ||
      new Set(draft.spdChannels).size !== draft.spdChannels.length) {
    errors.push("channels must be distinct");
  }
  if (!(draft.endMs > draft.startMs)) {
    errors.push("window end must be after start");
  }
  if (draft.endMs <= Date.now()) {
    errors.push("window lies in the past");
  }
  return errors;
}

export function draftToRequestBody(draft: ReservationDraft): unknown {
  return {
    resources: [
      ...draft.epsChannels.map((channel) => ({ kind: "eps", channel })),
      ...draft.spdChannels.map((channel) => ({ kind: "spd", channel })),
    ],
    start_ms: draft.startMs,
    end_ms: draft.endMs,
  };
}

export function rejectionMessage(rejection: Rejection): string {
  if (rejection.reason === "conflict" && rejection.conflicts.length > 0) {
    return `rejected: conflicts with reservation ${rejection.conflicts.join(", ")}`;
  }
  if (rejection.reason === "capacity") {
    return "rejected: over the per-user channel capacity in that window";
  }
  if (rejection.reason === "unreachable") {
    return "rejected: a requested channel is not reachable from your ports";
  }
  return `rejected: ${rejection.reason}`;
}
