// Dashboard state transitions, kept pure so they are testable headless.
// The store here is disposable: a hard reload rebuilds everything from
// the API, and all writes go through POST /feedback.

import type {
  PatientListEntry,
  RiskResponse,
  UpdateEvent,
} from "./types.js";

export interface CardEdit {
  adjusted: Record<string, number>;
  inFlight: boolean;
  error: string | null;
}

export interface AppState {
  patients: PatientListEntry[];
  cards: Record<string, RiskResponse>; // key = pid|aid
  edits: Record<string, CardEdit>;
  cursor: number;
  connected: boolean;
  authFailed: boolean;
}

export function initialState(): AppState {
  return {
    patients: [],
    cards: {},
    edits: {},
    cursor: 0,
    connected: false,
    authFailed: false,
  };
}

export function cardKey(patientId: string, admissionId: string): string {
  return `${patientId}|${admissionId}`;
}

export function mergePatients(
  state: AppState, entries: PatientListEntry[],
): AppState {
  const byKey = new Map<string, PatientListEntry>();
  for (const entry of [...state.patients, ...entries]) {
    byKey.set(cardKey(entry.patient_id, entry.admission_id), entry);
  }
  const patients = [...byKey.values()].sort((a, b) =>
    a.scored_at === b.scored_at
      ? a.admission_id.localeCompare(b.admission_id)
      : a.scored_at < b.scored_at ? 1 : -1,
  );
  return { ...state, patients };
}

export function applyUpdateEvents(
  state: AppState, events: UpdateEvent[], nextCursor: number,
): AppState {
  const merged = mergePatients(state, events.map((e) => ({
    patient_id: e.patient_id,
    admission_id: e.admission_id,
    scored_at: e.scored_at,
    high_risk_count: 0, // placeholder until the card is fetched
  })));
  return { ...merged, cursor: nextCursor };
}

export function setCard(state: AppState, card: RiskResponse): AppState {
  const key = cardKey(card.patient_id, card.admission_id);
  const cards = { ...state.cards, [key]: card };
  const patients = state.patients.map((p) =>
    cardKey(p.patient_id, p.admission_id) === key
      ? { ...p, high_risk_count: card.complications.filter((c) => c.risk_class === "High").length }
      : p,
  );
  return { ...state, cards, patients };
}

// -- optimistic feedback editing ---------------------------------------------

export function beginEdit(state: AppState, key: string, code: string,
                          value: number): AppState {
  const previous = state.edits[key] ?? { adjusted: {}, inFlight: false, error: null };
  return {
    ...state,
    edits: {
      ...state.edits,
      [key]: {
        ...previous,
        adjusted: { ...previous.adjusted, [code]: value },
        error: null,
      },
    },
  };
}

export function markSubmitting(state: AppState, key: string): AppState {
  const edit = state.edits[key];
  if (!edit) return state;
  return { ...state, edits: { ...state.edits, [key]: { ...edit, inFlight: true } } };
}

/** 201 path: adopt the server-confirmed adjustment into the card. */
export function commitEdit(state: AppState, key: string, author: string,
                           submittedAt: string): AppState {
  const edit = state.edits[key];
  const card = state.cards[key];
  if (!edit || !card) return state;
  const withFeedback: RiskResponse = {
    ...card,
    feedback: {
      author,
      adjusted: { ...(card.feedback?.adjusted ?? {}), ...edit.adjusted },
      note: card.feedback?.note ?? "",
      submitted_at: submittedAt,
    },
  };
  const edits = { ...state.edits };
  delete edits[key];
  return setCard({ ...state, edits }, withFeedback);
}

/** 4xx path: drop the optimistic values and surface the server message. */
export function rollbackEdit(state: AppState, key: string,
                             message: string): AppState {
  const edit = state.edits[key];
  if (!edit) return state;
  return {
    ...state,
    edits: {
      ...state.edits,
      [key]: { adjusted: {}, inFlight: false, error: message },
    },
  };
}

/** The value a slice control should show: pending edit, then stored
 * feedback, then the machine score. */
export function displayedValue(state: AppState, key: string,
                               code: string): number | null {
  const edit = state.edits[key];
  if (edit && code in edit.adjusted) return edit.adjusted[code];
  const card = state.cards[key];
  if (!card) return null;
  const fromFeedback = card.feedback?.adjusted?.[code as never];
  if (typeof fromFeedback === "number") return fromFeedback;
  const complication = card.complications.find((c) => c.code === code);
  return complication ? complication.probability : null;
}
