/** Pure HTML builders. Rendering never reorders or filters server
 * results: the list order is exactly the payload order, the transparency
 * note is included unabridged, and every value view carries units and
 * the model hash. */

import { LocationInfo, PredictResponse, RecommendResponse, SchemaMap } from "./api.js";
import { Movement } from "./state.js";

export const CURRENCY_UNIT = "CAD/year";

const MOVEMENT_MARK: Record<Movement, string> = {
  new: "&#8599; new",
  up: "&#8593; up",
  down: "&#8595; down",
  same: "&#8212;",
};

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function formatValue(value: number): string {
  return `${Math.round(value).toLocaleString("en-CA")} ${CURRENCY_UNIT}`;
}

export function renderProfileForm(schema: SchemaMap): string {
  const rows = Object.entries(schema).map(([name, spec]) => {
    const label = `<label for="f-${esc(name)}">${esc(name)}</label>`;
    if (spec.kind === "categorical") {
      const options = (spec.levels ?? [])
        .map((lv) => `<option value="${esc(lv)}">${esc(lv)}</option>`)
        .join("");
      return `<div class="field">${label}<select id="f-${esc(name)}" name="${esc(name)}">
        <option value="">(blank = missing)</option>${options}</select>
        <span class="error" data-error-for="${esc(name)}"></span></div>`;
    }
    const units = spec.units ? ` <small>(${esc(spec.units)})</small>` : "";
    return `<div class="field">${label}${units}
      <input id="f-${esc(name)}" name="${esc(name)}" inputmode="decimal" />
      <span class="error" data-error-for="${esc(name)}"></span></div>`;
  });
  return rows.join("\n");
}

export function renderRecommendations(
  response: RecommendResponse,
  names: Map<number, string>,
  movement: Record<number, Movement>,
  stale: boolean,
): string {
  const items = response.recommendations
    .map((rec, index) => {
      const name = names.get(rec.location_id) ?? `location ${rec.location_id}`;
      const move = MOVEMENT_MARK[movement[rec.location_id] ?? "same"];
      return `<li data-location="${rec.location_id}">
        <span class="rank">${index + 1}.</span>
        <span class="name">${esc(name)}</span>
        <span class="value">${formatValue(rec.predicted_value)}</span>
        <span class="movement">${move}</span>
      </li>`;
    })
    .join("\n");
  const badge = stale ? `<p class="stale-badge">showing last result (update failed)</p>` : "";
  return `${badge}
<ol class="recommendations">${items}</ol>
<p class="note">${esc(response.note)}</p>
<p class="footer">values in ${CURRENCY_UNIT} &middot; model ${esc(response.model_hash)}</p>`;
}

export function renderPredictionBars(
  response: PredictResponse,
  names: Map<number, string>,
): string {
  const max = Math.max(...response.predictions.map((p) => p.predicted_value), 1);
  const rows = response.predictions
    .map((p) => {
      const name = names.get(p.location_id) ?? `location ${p.location_id}`;
      const width = Math.max(1, Math.round((100 * p.predicted_value) / max));
      return `<div class="bar-row" data-location="${p.location_id}">
        <span class="bar-name">${esc(name)}</span>
        <span class="bar" style="width:${width}%"></span>
        <span class="bar-value">${formatValue(p.predicted_value)}</span>
      </div>`;
    })
    .join("\n");
  return `${rows}
<p class="footer">values in ${CURRENCY_UNIT} &middot; model ${esc(response.model_hash)}</p>`;
}

export function renderLocationToggles(
  locations: LocationInfo[],
  excluded: Set<number>,
  canExclude: (id: number) => boolean,
): string {
  return locations
    .filter((loc) => loc.modeled)
    .map((loc) => {
      const checked = excluded.has(loc.id) ? "" : "checked";
      const disabled = !excluded.has(loc.id) && !canExclude(loc.id) ? "disabled" : "";
      return `<label class="toggle" data-location="${loc.id}">
        <input type="checkbox" data-toggle="${loc.id}" ${checked} ${disabled} />
        ${esc(loc.name)} <small>(pop ${Math.round(loc.population).toLocaleString("en-CA")})</small>
      </label>`;
    })
    .join("\n");
}

export function extractOrder(html: string): number[] {
  // test hook: the data-location attributes in document order
  const out: number[] = [];
  const re = /<li data-location="(\d+)"/g;
  let m: RegExpExecArray | null;
  while ((m = re.exec(html)) !== null) out.push(Number(m[1]));
  return out;
}
