// Headless application controller: owns state, drives the polling loop,
// fetches cards, submits feedback with optimistic update + rollback.
// The DOM layer subscribes and re-renders on every change.

import { ApiClient, ApiError } from "./api.js";
import {
  AppState,
  applyUpdateEvents,
  beginEdit,
  cardKey,
  commitEdit,
  initialState,
  markSubmitting,
  mergePatients,
  rollbackEdit,
  setCard,
} from "./state.js";
import { clampProbability } from "./pie.js";

export type Listener = (state: AppState) => void;

export class DashboardController {
  state: AppState = initialState();
  private listeners: Listener[] = [];
  private stopped = false;

  constructor(
    private api: ApiClient,
    private pollTimeoutMs = 20_000,
    private sleep: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
  ) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private setState(next: AppState): void {
    this.state = next;
    for (const listener of this.listeners) listener(next);
  }

  /** Initial sync: patient list plus a card per admission. */
  async bootstrap(limit = 50): Promise<void> {
    try {
      const patients = await this.api.listPatients(limit);
      this.setState({
        ...mergePatients(this.state, patients),
        connected: true,
        authFailed: false,
      });
      for (const entry of patients) {
        await this.refreshCard(entry.patient_id, entry.admission_id);
      }
    } catch (error) {
      this.handleError(error);
    }
  }

  async refreshCard(patientId: string, admissionId: string): Promise<void> {
    try {
      const card = await this.api.getRisk(patientId, admissionId);
      this.setState(setCard(this.state, card));
    } catch (error) {
      this.handleError(error);
    }
  }

  /** One long-poll cycle; new scores pull their cards immediately. */
  async pollOnce(): Promise<number> {
    try {
      const body = await this.api.pollUpdates(this.state.cursor, this.pollTimeoutMs);
      this.setState({
        ...applyUpdateEvents(this.state, body.events, body.next_cursor),
        connected: true,
      });
      for (const event of body.events) {
        await this.refreshCard(event.patient_id, event.admission_id);
      }
      return body.events.length;
    } catch (error) {
      this.handleError(error);
      return 0;
    }
  }

  async runPollLoop(): Promise<void> {
    while (!this.stopped) {
      const got = await this.pollOnce();
      if (!got) await this.sleep(this.state.authFailed ? 2000 : 250);
    }
  }

  stop(): void {
    this.stopped = true;
  }

  /** Stage a slice adjustment (clamped in the control itself). */
  edit(patientId: string, admissionId: string, code: string, value: number): void {
    const key = cardKey(patientId, admissionId);
    this.setState(beginEdit(this.state, key, code, clampProbability(value)));
  }

  /** Submit staged adjustments: optimistic with rollback on 4xx. */
  async submitFeedback(patientId: string, admissionId: string): Promise<boolean> {
    const key = cardKey(patientId, admissionId);
    const edit = this.state.edits[key];
    if (!edit || Object.keys(edit.adjusted).length === 0 || edit.inFlight) {
      return false;
    }
    this.setState(markSubmitting(this.state, key));
    try {
      const response = await this.api.postFeedback(
        patientId, admissionId, edit.adjusted,
      );
      this.setState(commitEdit(
        this.state, key, this.state.cards[key]?.feedback?.author ?? "me",
        response.submitted_at,
      ));
      // authoritative copy (author id, history) comes from the server
      await this.refreshCard(patientId, admissionId);
      return true;
    } catch (error) {
      const message = error instanceof ApiError ? error.detail : String(error);
      this.setState(rollbackEdit(this.state, key, message));
      return false;
    }
  }

  private handleError(error: unknown): void {
    if (error instanceof ApiError && error.status === 401) {
      // show the token prompt, never stale data
      this.setState({ ...initialState(), authFailed: true });
      return;
    }
    this.setState({ ...this.state, connected: false });
  }
}
