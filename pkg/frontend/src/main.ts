/** DOM wiring: schema-driven profile form, exclusion toggles, live
 * recommendation view with movement markers, and the full prediction
 * bar list. */

import { ApiClient, LocationInfo, SchemaMap } from "./api.js";
import {
  renderLocationToggles,
  renderPredictionBars,
  renderProfileForm,
  renderRecommendations,
} from "./render.js";
import { SessionSnapshot, SessionStore } from "./state.js";
import { readProfile } from "./validate.js";

const BASE_URL = (window as { GEOMATCH_URL?: string }).GEOMATCH_URL ?? "";

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function boot(): Promise<void> {
  const client = new ApiClient(BASE_URL);
  let schema: SchemaMap;
  let locations: LocationInfo[];
  try {
    [schema, locations] = await Promise.all([client.schema(), client.locations()]);
  } catch {
    el("banner").textContent = "service unreachable - start it and retry";
    el("banner").classList.add("visible");
    el("retry").onclick = () => void boot();
    return;
  }
  el("banner").classList.remove("visible");
  const names = new Map(locations.map((l) => [l.id, l.name]));

  const store = new SessionStore(client, locations, 3, 150, (snap) => render(snap));
  el("profile-form").innerHTML = renderProfileForm(schema);

  function render(snap: SessionSnapshot): void {
    el("toggles").innerHTML = renderLocationToggles(
      locations,
      new Set(snap.unacceptable),
      (id) => store.canExclude(id),
    );
    for (const box of el("toggles").querySelectorAll<HTMLInputElement>("input[data-toggle]")) {
      box.onchange = () => void store.toggle(Number(box.dataset.toggle));
    }
    if (snap.response) {
      el("results").innerHTML = renderRecommendations(
        snap.response,
        names,
        snap.movement,
        snap.stale,
      );
    }
    if (snap.predictions) {
      el("bars").innerHTML = renderPredictionBars(snap.predictions, names);
    }
    for (const span of document.querySelectorAll<HTMLElement>("[data-error-for]")) {
      const field = span.dataset.errorFor ?? "";
      span.textContent = snap.fieldErrors.includes(field) ? "rejected by service" : "";
    }
    el("busy").style.visibility = snap.inFlight ? "visible" : "hidden";
  }

  el("submit").onclick = () => {
    const raw: Record<string, string> = {};
    for (const input of el("profile-form").querySelectorAll<HTMLInputElement>(
      "input[name], select[name]",
    )) {
      raw[input.name] = input.value;
    }
    const { profile, errors } = readProfile(schema, raw);
    for (const span of document.querySelectorAll<HTMLElement>("[data-error-for]")) {
      const field = span.dataset.errorFor ?? "";
      span.textContent = errors[field] ?? "";
    }
    (el("submit") as HTMLButtonElement).disabled = Object.keys(errors).length > 0;
    if (Object.keys(errors).length === 0) void store.submitProfile(profile);
  };

  render(store.snapshot());
}

void boot();
