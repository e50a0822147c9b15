import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionStore, movementBetween } from "../src/state.js";
import { FakeService, makeLocations } from "./fake_service.js";

const VALUES: Record<number, number> = { 1: 50, 2: 40, 3: 60, 4: 30, 5: 20 };
const PROFILE = { age: 33, education: "college" };

function makeStore(service: FakeService, z = 3) {
  const client = new ApiClient("http://svc", service.fetch);
  return new SessionStore(client, makeLocations([1, 2, 3, 4, 5]), z, 0);
}

describe("SessionStore", () => {
  it("excluding the current top-1 promotes the former #2", async () => {
    const service = new FakeService({ values: VALUES, locations: makeLocations([1, 2, 3, 4, 5]) });
    const store = makeStore(service);
    await store.submitProfile(PROFILE);
    let order = store.snapshot().response!.recommendations.map((r) => r.location_id);
    expect(order).toEqual([3, 1, 2]); // values 60, 50, 40 with no ties
    await store.toggle(3);
    order = store.snapshot().response!.recommendations.map((r) => r.location_id);
    expect(order[0]).toBe(1); // former #2 now leads
    expect(order).toEqual([1, 2, 4]);
    expect(store.snapshot().movement[1]).toBe("up");
  });

  it("excluding a location outside the top-z leaves the list unchanged", async () => {
    const service = new FakeService({ values: VALUES, locations: makeLocations([1, 2, 3, 4, 5]) });
    const store = makeStore(service);
    await store.submitProfile(PROFILE);
    const before = store.snapshot().response!.recommendations;
    await store.toggle(5); // value 20, never in the top 3
    const after = store.snapshot().response!.recommendations;
    expect(after).toEqual(before);
    expect(Object.values(store.snapshot().movement).every((m) => m === "same")).toBe(true);
  });

  it("re-including everything restores the original list and hash", async () => {
    const service = new FakeService({ values: VALUES, locations: makeLocations([1, 2, 3, 4, 5]) });
    const store = makeStore(service);
    await store.submitProfile(PROFILE);
    const original = store.snapshot().response!;
    await store.toggle(3);
    await store.toggle(3);
    const restored = store.snapshot().response!;
    expect(restored.recommendations).toEqual(original.recommendations);
    expect(restored.model_hash).toBe(original.model_hash);
  });

  it("stale responses never overwrite newer ones (sequence numbers)", async () => {
    // first recommend call resolves slowly, second quickly: the slow one
    // arrives last and must be discarded
    const service = new FakeService({
      values: VALUES,
      locations: makeLocations([1, 2, 3, 4, 5]),
      delays: [40, 0],
    });
    const store = makeStore(service);
    const first = store.submitProfile(PROFILE); // slow request, excludes nothing
    await new Promise((r) => setTimeout(r, 5));
    const second = store.toggle(3); // fast request, excludes 3
    await Promise.all([first, second]);
    const order = store.snapshot().response!.recommendations.map((r) => r.location_id);
    expect(order).toEqual([1, 2, 4]); // newer result (without 3) wins
    expect(service.recommendCalls).toBe(2);
  });

  it("never allows the unacceptable set to cover every location", async () => {
    const service = new FakeService({ values: VALUES, locations: makeLocations([1, 2, 3, 4, 5]) });
    const store = makeStore(service);
    await store.submitProfile(PROFILE);
    for (const id of [1, 2, 3, 4]) await store.toggle(id);
    expect(store.canExclude(5)).toBe(false);
    await store.toggle(5); // ignored
    expect(store.snapshot().unacceptable).toEqual([1, 2, 3, 4]);
    expect(store.snapshot().response).not.toBeNull();
  });

  it("keeps the last result with a stale badge on network failure", async () => {
    const service = new FakeService({ values: VALUES, locations: makeLocations([1, 2, 3, 4, 5]) });
    const store = makeStore(service);
    await store.submitProfile(PROFILE);
    const before = store.snapshot().response!;
    (service as unknown as { opts: { failWith: string } }).opts =
      Object.assign({}, (service as never)["opts"], { failWith: "network" });
    await store.toggle(3);
    const snap = store.snapshot();
    expect(snap.stale).toBe(true);
    expect(snap.offline).toBe(true);
    expect(snap.response).toEqual(before); // stale result retained
  });

  it("surfaces 422 field names without dropping the last result", async () => {
    const service = new FakeService({ values: VALUES, locations: makeLocations([1, 2, 3, 4, 5]) });
    const store = makeStore(service);
    await store.submitProfile(PROFILE);
    (service as unknown as { opts: { failWith: unknown } }).opts = Object.assign(
      {},
      (service as never)["opts"],
      { failWith: { status: 422, detail: { invalid_fields: ["age"] } } },
    );
    await store.toggle(2);
    const snap = store.snapshot();
    expect(snap.fieldErrors).toEqual(["age"]);
    expect(snap.response).not.toBeNull();
  });

  it("debounces rapid toggles into one request", async () => {
    const service = new FakeService({ values: VALUES, locations: makeLocations([1, 2, 3, 4, 5]) });
    const client = new ApiClient("http://svc", service.fetch);
    const store = new SessionStore(client, makeLocations([1, 2, 3, 4, 5]), 3, 20);
    await store.refresh(); // no profile yet: no-op
    await store.submitProfile(PROFILE);
    const calls = service.recommendCalls;
    const a = store.toggle(4);
    const b = store.toggle(5);
    await Promise.all([a, b]);
    await new Promise((r) => setTimeout(r, 60));
    expect(service.recommendCalls).toBe(calls + 1); // coalesced
    const order = store.snapshot().response!.recommendations.map((r) => r.location_id);
    expect(order).toEqual([3, 1, 2]);
  });
});

describe("movementBetween", () => {
  it("labels promotions, demotions, entrants and holds", () => {
    expect(movementBetween([3, 1, 2], [1, 2, 4])).toEqual({
      1: "up",
      2: "up",
      4: "new",
    });
    expect(movementBetween([1, 2], [2, 1])).toEqual({ 2: "up", 1: "down" });
    expect(movementBetween(null, [7])).toEqual({ 7: "same" });
  });
});
