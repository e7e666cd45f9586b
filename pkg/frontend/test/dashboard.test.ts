// Secondary acceptance, run against a seeded fake pipeline implementing
// the documented v1 contract: a freshly scored admission appears within
// one poll cycle; High marking follows the probability >= cutoff rule;
// an adjusted value survives "reload" (a brand-new controller).

import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { DashboardController } from "../src/controller.js";
import { buildSlices } from "../src/pie.js";
import { cardKey, displayedValue } from "../src/state.js";
import { FakePipeline } from "./fake_api.js";

function client(pipeline: FakePipeline, token = "tok"): ApiClient {
  return new ApiClient("", token, pipeline.fetch);
}

describe("dashboard against a seeded pipeline", () => {
  it("shows a newly scored admission within one poll cycle", async () => {
    const pipeline = new FakePipeline();
    pipeline.score("P1", "A1", { AKI: 0.2 });
    const controller = new DashboardController(client(pipeline), 50);
    await controller.bootstrap();
    expect(controller.state.patients).toHaveLength(1);

    // new score lands mid-session, with a later timestamp
    pipeline.score("P2", "A2", { AKI: 0.8 }, "2024-01-01T02:00:00.000Z");
    const events = await controller.pollOnce();
    // cursor starts at 0, so the cycle replays P1's event too; the merge
    // dedupes and the new admission is what must appear
    expect(events).toBe(2);
    expect(controller.state.patients.map((p) => p.patient_id))
      .toEqual(["P2", "P1"]);
    expect(controller.state.cards[cardKey("P2", "A2")]).toBeDefined();
  });

  it("marks exactly the probability >= cutoff slices High", async () => {
    const pipeline = new FakePipeline();
    // AKI exactly at cutoff 0.35; MV just below its 0.13; SEP above 0.06
    pipeline.score("P1", "A1", { AKI: 0.35, MV: 0.129, SEP: 0.061 });
    const controller = new DashboardController(client(pipeline), 50);
    await controller.bootstrap();
    const card = controller.state.cards[cardKey("P1", "A1")];
    const slices = buildSlices(card.complications);
    const high = slices.filter((s) => s.high).map((s) => s.code);
    expect(high).toEqual(["AKI", "SEP"]);
  });

  it("adjusted value persists across a page reload", async () => {
    const pipeline = new FakePipeline();
    pipeline.score("P1", "A1", { AKI: 0.35 });

    const first = new DashboardController(client(pipeline), 50);
    await first.bootstrap();
    first.edit("P1", "A1", "AKI", 0.5);
    expect(await first.submitFeedback("P1", "A1")).toBe(true);
    expect(displayedValue(first.state, cardKey("P1", "A1"), "AKI")).toBe(0.5);

    // hard reload: a brand-new controller reconstructs state from the API
    const second = new DashboardController(client(pipeline), 50);
    await second.bootstrap();
    const card = second.state.cards[cardKey("P1", "A1")];
    expect(card.feedback?.adjusted.AKI).toBe(0.5);
    expect(displayedValue(second.state, cardKey("P1", "A1"), "AKI")).toBe(0.5);
  });

  it("server 400 rolls the edit back and surfaces the message", async () => {
    const pipeline = new FakePipeline();
    pipeline.score("P1", "A1", { AKI: 0.35 });
    const controller = new DashboardController(client(pipeline), 50);
    await controller.bootstrap();

    // bypass the UI clamp to simulate a rejected write
    controller.state = {
      ...controller.state,
      edits: { [cardKey("P1", "A1")]: { adjusted: { AKI: 1.5 },
                                        inFlight: false, error: null } },
    };
    expect(await controller.submitFeedback("P1", "A1")).toBe(false);
    const edit = controller.state.edits[cardKey("P1", "A1")];
    expect(edit.error).toBe("AKI out of [0,1]");
    expect(displayedValue(controller.state, cardKey("P1", "A1"), "AKI"))
      .toBe(0.35); // reverted to the machine value
  });

  it("401 clears data and demands a token", async () => {
    const pipeline = new FakePipeline();
    pipeline.score("P1", "A1", { AKI: 0.2 });
    const controller = new DashboardController(client(pipeline, "wrong"), 50);
    await controller.bootstrap();
    expect(controller.state.authFailed).toBe(true);
    expect(controller.state.patients).toHaveLength(0); // no stale data
  });

  it("cursor chain never skips or duplicates updates", async () => {
    const pipeline = new FakePipeline();
    const controller = new DashboardController(client(pipeline), 50);
    await controller.bootstrap();
    for (let i = 0; i < 7; i++) pipeline.score(`P${i}`, `A${i}`, {});
    await controller.pollOnce();
    for (let i = 7; i < 12; i++) pipeline.score(`P${i}`, `A${i}`, {});
    await controller.pollOnce();
    const ids = controller.state.patients.map((p) => p.patient_id).sort();
    expect(ids).toEqual([...Array(12).keys()].map((i) => `P${i}`).sort());
    expect(controller.state.cursor).toBe(12);
  });
});

describe("api client", () => {
  it("propagates error details from JSON bodies", async () => {
    const failing = async () =>
      new Response(JSON.stringify({ detail: "boom" }), { status: 400 });
    const api = new ApiClient("", "tok", failing);
    await expect(api.listPatients()).rejects.toThrowError(ApiError);
    await expect(api.listPatients()).rejects.toMatchObject({
      status: 400, detail: "boom",
    });
  });
});
