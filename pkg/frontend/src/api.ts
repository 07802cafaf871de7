// Thin fetch client for the control-plane API. The bearer token lives in
// memory only; a page reload means logging in again.

import type { Measurement, Rejection, Reservation, StatusFrame, Topology } from "./types";

let baseUrl = "";
let token: string | null = null;

export function configure(url: string, bearer: string) {
  baseUrl = url.replace(/\/$/, "");
  token = bearer;
}

export function clearToken() {
  token = null;
}

export class ApiError extends Error {
  constructor(public status: number, public body: string) {
    super(`API error ${status}: ${body}`);
  }
}

async function apiFetch<T>(path: string, options: RequestInit = {}): Promise<T> {
  const headers: Record<string, string> = {
    "Content-Type": "application/json",
    ...(options.headers as Record<string, string>),
  };
  if (token) {
    headers["Authorization"] = `Bearer ${token}`;
  }
  const resp = await fetch(baseUrl + path, { ...options, headers });
  if (!resp.ok) {
    throw new ApiError(resp.status, await resp.text());
  }
  return resp.json() as Promise<T>;
}

export function getTopology(): Promise<Topology> {
  return apiFetch<Topology>("/api/topology");
}

export function getStatus(): Promise<StatusFrame> {
  return apiFetch<StatusFrame>("/api/status");
}

export function listReservations(): Promise<Reservation[]> {
  return apiFetch<Reservation[]>("/api/reservations");
}

export function cancelReservation(id: string): Promise<Reservation> {
  return apiFetch<Reservation>(`/api/reservations/${id}`, { method: "DELETE" });
}

export type SubmitOutcome =
  | { ok: true; reservation: Reservation }
  | { ok: false; rejection: Rejection };

export async function createReservation(body: unknown): Promise<SubmitOutcome> {
  try {
    const reservation = await apiFetch<Reservation>("/api/reservations", {
      method: "POST",
      body: JSON.stringify(body),
    });
    return { ok: true, reservation };
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      return { ok: false, rejection: JSON.parse(err.body) as Rejection };
    }
    throw err;
  }
}

export function createMeasurement(body: unknown): Promise<{ id: string; kind: string; state: string }> {
  return apiFetch("/api/measurements", { method: "POST", body: JSON.stringify(body) });
}

export function getMeasurement(id: string): Promise<Measurement> {
  return apiFetch<Measurement>(`/api/measurements/${id}`);
}

export function streamUrl(): string {
  return baseUrl + "/api/status/stream";
}

export function authHeader(): Record<string, string> {
  return token ? { Authorization: `Bearer ${token}` } : {};
}
