// Wire types mirroring docs/api-schema.json (the service is the source of
// truth; the console never computes model math of its own).

export interface CvDetectorInfo {
  m: number;
  m_d: number;
  window_fill: number;
  rejects: { corr: boolean; ks: boolean; var: boolean; mean: boolean } | null;
  retrain_flagged: boolean;
}

export interface DetectorInfo {
  active: boolean;
  errors?: { y1: number; y2: number };
  y1?: CvDetectorInfo;
  y2?: CvDetectorInfo;
}

export interface TwinInfo {
  y_hat: number[][];
  u_hat: number[][];
  usp_hat: number[][];
  nowcast: number[];
}

export interface Snapshot {
  step: number;
  time_s: number;
  u: number[];
  usp: number[];
  y: number[];
  ylim: { y1: number; y2: number };
  twin: TwinInfo | null;
  detector: DetectorInfo;
  retrained: string[];
  disturbance_factors: number[];
  mode: string;
}

export interface SessionEvent {
  step: number;
  event: string;
  [key: string]: unknown;
}

export interface SessionInfo {
  id: string;
  warmup_steps: number;
  ylim: { y1_lim: number; y2_lim: number };
  ylim_box: number[][];
  m_d: { y1: number; y2: number };
  horizon: number;
}

export interface YlimResponse {
  accepted: boolean;
  y1_lim?: number;
  y2_lim?: number;
  applies_at_step?: number;
  detail?: string;
  field?: string;
  bound?: number[];
}
