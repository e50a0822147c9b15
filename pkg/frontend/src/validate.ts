/** Client-side profile validation mirroring the service's rules:
 * numeric fields must parse to a finite number; blank categoricals are
 * sent as the explicit "missing" level. */

import { ProfileValues, SchemaMap } from "./api.js";

export interface FormReading {
  profile: ProfileValues;
  errors: Record<string, string>;
}

export function readProfile(schema: SchemaMap, raw: Record<string, string>): FormReading {
  const profile: ProfileValues = {};
  const errors: Record<string, string> = {};
  for (const [name, spec] of Object.entries(schema)) {
    const token = (raw[name] ?? "").trim();
    if (spec.kind === "numeric") {
      const value = Number(token);
      if (token === "" || !Number.isFinite(value)) {
        errors[name] = "enter a number";
      } else {
        profile[name] = value;
      }
    } else {
      profile[name] = token === "" ? "missing" : token;
    }
  }
  return { profile, errors };
}
