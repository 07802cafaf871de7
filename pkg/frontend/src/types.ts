// Shapes of the control-plane API payloads. Everything the UI shows is
// traceable to one of these fields — no client-side derived truth.

export type NodeActivity = "hub" | "inactive" | "active_eps" | "active_spd" | "active_both";

export interface NodeState {
  id: string;
  user: number | null;
  state: NodeActivity;
}

export interface Flow {
  source: string;
  dest: string;
  kind: "entangled_photons" | "single_photons_to_detector";
}

export interface StatusFrame {
  timestamp_ms: number;
  nodes: NodeState[];
  flows: Flow[];
  fabric: { eps: Record<string, number | null>; spd: Record<string, number | null> };
  reservations: Record<string, number>;
}

export interface TopologyNode {
  id: string;
  kind: "central_hub" | "building_hub" | "terminal";
  building: string;
  position: [number, number];
  user: number | null;
}

export interface Topology {
  nodes: TopologyNode[];
  links: { a: string; b: string; length_km: number }[];
  terminal_users: Record<string, string>;
}

export interface ResourceRef {
  kind: "eps" | "spd";
  channel: number;
}

export interface Reservation {
  id: string;
  user: number;
  resources: ResourceRef[];
  start_ms: number;
  end_ms: number;
  status: string;
}

export interface Rejection {
  reason: string;
  conflicts: string[];
}

export interface FitResult {
  amplitude: number;
  center_ps: number;
  sigma_ps: number;
  baseline: number;
  fwhm_ps: number;
  fwhm_uncertainty_ps: number;
  converged: boolean;
  residual_norm: number;
}

export interface HistogramResult {
  histogram: {
    bin_width_ps: number;
    lo_ps: number;
    hi_ps: number;
    counts: number[];
    total_pairs_examined: number;
  };
  fit: FitResult | null;
  fit_error: string | null;
  metrics: {
    coincidence_rate: number;
    accidental_rate: number;
    car: number | null;
    car_infinite: boolean;
  } | null;
}

export interface SweepPoint {
  compensation_ps_nm: number;
  fwhm_ps: number | null;
  fwhm_err_ps: number | null;
  center_ps: number | null;
  converged: boolean;
}

export interface SweepResult {
  points: SweepPoint[];
  argmin_compensation_ps_nm: number | null;
}

export interface Measurement {
  id: string;
  kind: string;
  owner: number;
  state: "queued" | "running" | "done" | "failed";
  created_ms: number;
  result: HistogramResult | SweepResult | null;
  error: string | null;
}
