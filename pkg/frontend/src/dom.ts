// DOM rendering. Everything here is rebuilt from state on each change;
// no view-only state survives a reload.

import { buildSlices } from "./pie.js";
import { AppState, cardKey, displayedValue } from "./state.js";
import type { DashboardController } from "./controller.js";
import type { RiskResponse } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderPie(card: RiskResponse): SVGSVGElement {
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", "0 0 200 200");
  svg.classList.add("risk-pie");
  const slices = buildSlices(card.complications);
  for (let i = 0; i < slices.length; i++) {
    const slice = slices[i];
    const complication = card.complications[i];
    const path = document.createElementNS(SVG_NS, "path");
    path.setAttribute("d", slice.path);
    path.setAttribute("class", `slice slice-${i}${slice.high ? " high" : ""}`);
    path.dataset.code = slice.code;
    const tooltip = document.createElementNS(SVG_NS, "title");
    const contributors = complication.contributors
      .map((c) => `${c.variable} ${c.contribution >= 0 ? "+" : ""}${c.contribution.toFixed(3)}`)
      .join("\n");
    tooltip.textContent =
      `${complication.display_name}\n` +
      `p=${complication.probability.toFixed(3)}` +
      (complication.cutoff != null ? ` (cutoff ${complication.cutoff})` : "") +
      `\n${contributors}`;
    path.appendChild(tooltip);
    svg.appendChild(path);
  }
  return svg;
}

function renderCard(
  state: AppState, card: RiskResponse, controller: DashboardController,
): HTMLElement {
  const key = cardKey(card.patient_id, card.admission_id);
  const edit = state.edits[key];
  const root = el("section", "card");
  root.dataset.key = key;

  const headline = el("header");
  headline.appendChild(el("h2", undefined,
    `${card.patient_id} / ${card.admission_id}`));
  headline.appendChild(el("span", "scored-at", `scored ${card.scored_at}`));
  root.appendChild(headline);

  root.appendChild(renderPie(card));

  const table = el("div", "complications");
  for (const complication of card.complications) {
    const row = el("div", `row${complication.risk_class === "High" ? " high" : ""}`);
    row.appendChild(el("span", "code", complication.code));
    row.appendChild(el("span", "prob",
      complication.probability.toFixed(3) +
      (complication.cutoff != null ? ` / ${complication.cutoff}` : "")));
    row.appendChild(el("span", "class", complication.risk_class));

    const slider = el("input") as HTMLInputElement;
    slider.type = "range";
    slider.min = "0";
    slider.max = "1";
    slider.step = "0.01";
    slider.value = String(
      displayedValue(state, key, complication.code) ?? complication.probability,
    );
    slider.disabled = Boolean(edit?.inFlight);
    slider.addEventListener("input", () => {
      controller.edit(card.patient_id, card.admission_id, complication.code,
                      Number(slider.value));
    });
    row.appendChild(slider);
    const adjusted = card.feedback?.adjusted?.[complication.code];
    if (adjusted !== undefined) {
      row.appendChild(el("span", "adjusted", `adjusted ${adjusted.toFixed(2)}`));
    }
    table.appendChild(row);
  }
  root.appendChild(table);

  const actions = el("footer");
  const submit = el("button", "submit", "Submit adjustments");
  submit.toggleAttribute("disabled",
    Boolean(edit?.inFlight) || !edit || Object.keys(edit.adjusted).length === 0);
  submit.addEventListener("click", () => {
    void controller.submitFeedback(card.patient_id, card.admission_id);
  });
  actions.appendChild(submit);
  if (edit?.error) actions.appendChild(el("span", "error", edit.error));
  if (card.feedback) {
    actions.appendChild(el("span", "author",
      `last adjusted by ${card.feedback.author} at ${card.feedback.submitted_at}`));
  }
  root.appendChild(actions);
  return root;
}

export function render(
  container: HTMLElement, state: AppState, controller: DashboardController,
): void {
  container.replaceChildren();
  if (state.authFailed) {
    const prompt = el("div", "login");
    prompt.appendChild(el("p", undefined, "Enter an access token to continue."));
    const input = el("input") as HTMLInputElement;
    input.type = "password";
    input.placeholder = "bearer token";
    const go = el("button", undefined, "Sign in");
    go.addEventListener("click", () => {
      sessionStorage.setItem("token", input.value.trim());
      location.reload();
    });
    prompt.appendChild(input);
    prompt.appendChild(go);
    container.appendChild(prompt);
    return;
  }
  if (!state.patients.length) {
    container.appendChild(el("p", "empty",
      state.connected ? "No scored admissions yet." : "Connecting..."));
    return;
  }
  for (const entry of state.patients) {
    const key = cardKey(entry.patient_id, entry.admission_id);
    const card = state.cards[key];
    if (card) {
      container.appendChild(renderCard(state, card, controller));
    } else {
      container.appendChild(
        el("p", "loading", `${entry.patient_id} / ${entry.admission_id} ...`));
    }
  }
}
