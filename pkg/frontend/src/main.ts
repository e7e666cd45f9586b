// Entry point: token from session storage (prompt if absent), then
// bootstrap + poll loop. The API base defaults to same-origin so the
// built assets can be served by the pipeline's API process directly.

import { ApiClient } from "./api.js";
import { DashboardController } from "./controller.js";
import { render } from "./dom.js";

function apiBase(): string {
  const meta = document.querySelector('meta[name="api-base"]');
  return (meta?.getAttribute("content") ?? "").replace(/\/$/, "");
}

function main(): void {
  const container = document.getElementById("app");
  if (!container) throw new Error("missing #app container");
  const token = sessionStorage.getItem("token") ?? "";
  const controller = new DashboardController(new ApiClient(apiBase(), token));
  controller.subscribe((state) => render(container, state, controller));
  if (!token) {
    render(container, { ...controller.state, authFailed: true }, controller);
    return;
  }
  void controller.bootstrap().then(() => controller.runPollLoop());
}

document.addEventListener("DOMContentLoaded", main);
