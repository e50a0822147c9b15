/** In-memory stand-in for the HTTP service used by the UI tests.
 *
 * Implements the same contract: recommendations are the acceptable
 * locations sorted by fixed per-location values (ties toward the lower
 * id), truncated to z. Responses can be delayed per-request to exercise
 * out-of-order delivery.
 */

import { FetchLike, LocationInfo, ValueItem } from "../src/api.js";

export interface FakeOptions {
  values: Record<number, number>;
  locations: LocationInfo[];
  note?: string;
  modelHash?: string;
  delays?: number[]; // ms per successive recommend call
  failWith?: { status: number; detail: unknown } | "network";
}

export function makeLocations(ids: number[]): LocationInfo[] {
  return ids.map((id) => ({
    id,
    name: `region-${id}`,
    population: 100000 * id,
    unemployment_rate: 0.05,
    annual_rent: 12000,
    growth_rate: 0.01,
    modeled: true,
  }));
}

export class FakeService {
  recommendCalls = 0;
  note: string;
  private readonly modelHash: string;

  constructor(private readonly opts: FakeOptions) {
    this.note =
      opts.note ??
      "These recommendations rank locations by predicted income only; " +
        "they are estimates, not guarantees.";
    this.modelHash = opts.modelHash ?? "cafebabe00000000";
  }

  private rank(unacceptable: number[], z: number): ValueItem[] {
    const banned = new Set(unacceptable);
    return this.opts.locations
      .filter((l) => l.modeled && !banned.has(l.id))
      .map((l) => ({ location_id: l.id, predicted_value: this.opts.values[l.id] ?? 0 }))
      .sort(
        (a, b) =>
          b.predicted_value - a.predicted_value || a.location_id - b.location_id,
      )
      .slice(0, z);
  }

  fetch: FetchLike = async (url, init) => {
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const respond = (status: number, body: unknown) =>
      new Response(JSON.stringify(body), {
        status,
        headers: { "content-type": "application/json" },
      });

    if (this.opts.failWith === "network") throw new TypeError("fetch failed");
    if (this.opts.failWith) {
      return respond(this.opts.failWith.status, { detail: this.opts.failWith.detail });
    }

    if (path === "/locations") {
      return respond(200, { locations: this.opts.locations, model_hash: this.modelHash });
    }
    if (path === "/schema") {
      return respond(200, {
        features: {
          age: { kind: "numeric", units: "years" },
          education: { kind: "categorical", levels: ["college", "missing"] },
        },
        model_hash: this.modelHash,
      });
    }
    if (path === "/predict") {
      const all = this.rank([], this.opts.locations.length);
      return respond(200, {
        predictions: all,
        outcome_mode: "income",
        model_hash: this.modelHash,
      });
    }
    if (path === "/recommend") {
      const body = JSON.parse(String(init?.body ?? "{}")) as {
        unacceptable: number[];
        z: number;
      };
      const call = this.recommendCalls++;
      const delay = this.opts.delays?.[call] ?? 0;
      if (delay > 0) await new Promise((r) => setTimeout(r, delay));
      const recs = this.rank(body.unacceptable ?? [], body.z ?? 3);
      return respond(200, {
        recommendations: recs,
        t: this.opts.locations.length - (body.unacceptable?.length ?? 0),
        z: body.z ?? 3,
        outcome_mode: "income",
        note: this.note,
        model_hash: this.modelHash,
      });
    }
    return respond(404, { detail: "no such endpoint" });
  };
}
