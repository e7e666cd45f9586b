// Thin v1 API client. `fetch` is injectable so tests can run without a
// server; the bearer token is whatever the login prompt captured.

import type {
  FeedbackPostResponse,
  PatientListEntry,
  RiskResponse,
  UpdatesResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`API ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      ...init,
      headers: {
        Authorization: `Bearer ${this.token}`,
        "Content-Type": "application/json",
        ...(init?.headers ?? {}),
      },
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep statusText
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listPatients(limit = 50, since?: string): Promise<PatientListEntry[]> {
    const query = new URLSearchParams({ limit: String(limit) });
    if (since) query.set("since", since);
    return this.request(`/v1/patients?${query}`);
  }

  getRisk(patientId: string, admissionId: string): Promise<RiskResponse> {
    return this.request(
      `/v1/patients/${encodeURIComponent(patientId)}/${encodeURIComponent(admissionId)}/risk`,
    );
  }

  postFeedback(
    patientId: string,
    admissionId: string,
    adjusted: Record<string, number>,
    note = "",
  ): Promise<FeedbackPostResponse> {
    return this.request(
      `/v1/patients/${encodeURIComponent(patientId)}/${encodeURIComponent(admissionId)}/feedback`,
      { method: "POST", body: JSON.stringify({ adjusted, note }) },
    );
  }

  pollUpdates(cursor: number, timeoutMs: number): Promise<UpdatesResponse> {
    return this.request(`/v1/updates?cursor=${cursor}&timeout_ms=${timeoutMs}`);
  }
}
