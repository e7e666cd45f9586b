// Shapes mirror the v1 API responses exactly.

export const COMPLICATION_ORDER = [
  "AKI", "ICU", "MV", "WND", "CV", "NEU", "SEP", "VTE",
] as const;

export type ComplicationCode = (typeof COMPLICATION_ORDER)[number];

export interface ContributorEntry {
  variable: string;
  contribution: number;
}

export interface ComplicationRisk {
  code: ComplicationCode;
  display_name: string;
  probability: number;
  cutoff: number | null;
  risk_class: "Low" | "High";
  contributors: ContributorEntry[];
}

export interface FeedbackView {
  author: string;
  adjusted: Partial<Record<ComplicationCode, number>>;
  note: string;
  submitted_at: string;
}

export interface RiskResponse {
  patient_id: string;
  admission_id: string;
  admitted_at: string;
  scored_at: string;
  model_version: string;
  complications: ComplicationRisk[];
  feedback: FeedbackView | null;
}

export interface PatientListEntry {
  patient_id: string;
  admission_id: string;
  scored_at: string;
  high_risk_count: number;
}

export interface UpdateEvent {
  patient_id: string;
  admission_id: string;
  scored_at: string;
  seq: number;
}

export interface UpdatesResponse {
  events: UpdateEvent[];
  next_cursor: number;
}

export interface FeedbackPostResponse {
  version: number;
  submitted_at: string;
}
