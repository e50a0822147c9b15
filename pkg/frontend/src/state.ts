/** Session state: profile, exclusion set, and live recommendation results.
 *
 * One request in flight at a time, rapid toggles debounced, and every
 * request tagged with a sequence number so a response that arrives after
 * a newer one has been applied is discarded instead of clobbering it.
 * The rendered ordering always comes straight from the last applied
 * response; the store never reorders or filters it.
 */

import {
  ApiClient,
  ApiError,
  LocationInfo,
  PredictResponse,
  ProfileValues,
  RecommendResponse,
} from "./api.js";

export type Movement = "new" | "up" | "down" | "same";

export interface SessionSnapshot {
  profile: ProfileValues | null;
  unacceptable: number[];
  response: RecommendResponse | null;
  predictions: PredictResponse | null;
  movement: Record<number, Movement>;
  inFlight: boolean;
  stale: boolean;
  fieldErrors: string[];
  offline: boolean;
}

export function movementBetween(
  previous: number[] | null,
  current: number[],
): Record<number, Movement> {
  const out: Record<number, Movement> = {};
  current.forEach((id, pos) => {
    if (!previous) {
      out[id] = "same";
      return;
    }
    const before = previous.indexOf(id);
    if (before === -1) out[id] = "new";
    else if (before > pos) out[id] = "up";
    else if (before < pos) out[id] = "down";
    else out[id] = "same";
  });
  return out;
}

export class SessionStore {
  private profile: ProfileValues | null = null;
  private readonly unacceptable = new Set<number>();
  private response: RecommendResponse | null = null;
  private predictions: PredictResponse | null = null;
  private previousOrder: number[] | null = null;
  private movement: Record<number, Movement> = {};
  private fieldErrors: string[] = [];
  private stale = false;
  private offline = false;

  private nextSeq = 0;
  private appliedSeq = 0;
  private pending = 0;
  private debounceTimer: ReturnType<typeof setTimeout> | null = null;
  private debounceWaiters: Array<() => void> = [];

  constructor(
    private readonly client: ApiClient,
    readonly locations: LocationInfo[],
    readonly z: number = 3,
    private readonly debounceMs: number = 150,
    private readonly onChange: (snap: SessionSnapshot) => void = () => {},
  ) {}

  snapshot(): SessionSnapshot {
    return {
      profile: this.profile,
      unacceptable: [...this.unacceptable].sort((a, b) => a - b),
      response: this.response,
      predictions: this.predictions,
      movement: { ...this.movement },
      inFlight: this.pending > 0,
      stale: this.stale,
      fieldErrors: [...this.fieldErrors],
      offline: this.offline,
    };
  }

  isExcluded(id: number): boolean {
    return this.unacceptable.has(id);
  }

  /** The last acceptable location can never be toggled out. */
  canExclude(id: number): boolean {
    if (this.unacceptable.has(id)) return true;
    const modeled = this.locations.filter((l) => l.modeled).length;
    return this.unacceptable.size + 1 < modeled;
  }

  async submitProfile(profile: ProfileValues): Promise<void> {
    this.profile = profile;
    await this.refresh();
  }

  /** Flip a location's acceptability and re-request recommendations. */
  toggle(id: number): Promise<void> {
    if (this.unacceptable.has(id)) {
      this.unacceptable.delete(id);
    } else {
      if (!this.canExclude(id)) return Promise.resolve();
      this.unacceptable.add(id);
    }
    if (this.profile === null) {
      this.onChange(this.snapshot());
      return Promise.resolve();
    }
    return this.refreshDebounced();
  }

  private refreshDebounced(): Promise<void> {
    if (this.debounceMs <= 0) return this.refresh();
    // coalesced toggles all settle when the trailing refresh completes
    return new Promise((resolve) => {
      this.debounceWaiters.push(resolve);
      if (this.debounceTimer !== null) clearTimeout(this.debounceTimer);
      this.debounceTimer = setTimeout(() => {
        this.debounceTimer = null;
        const waiters = this.debounceWaiters.splice(0);
        void this.refresh().then(() => waiters.forEach((w) => w()));
      }, this.debounceMs);
    });
  }

  async refresh(): Promise<void> {
    if (this.profile === null) return;
    const seq = ++this.nextSeq;
    this.pending += 1;
    this.onChange(this.snapshot());
    try {
      const [rec, pred] = await Promise.all([
        this.client.recommend(this.profile, [...this.unacceptable], this.z),
        this.client.predict(this.profile),
      ]);
      if (seq <= this.appliedSeq) return; // stale: a newer response already applied
      this.appliedSeq = seq;
      const order = rec.recommendations.map((r) => r.location_id);
      this.movement = movementBetween(this.previousOrder, order);
      this.previousOrder = order;
      this.response = rec;
      this.predictions = pred;
      this.stale = false;
      this.offline = false;
      this.fieldErrors = [];
    } catch (err) {
      if (err instanceof ApiError) {
        if (seq <= this.appliedSeq) return;
        this.appliedSeq = seq;
        this.fieldErrors = err.invalidFields();
        this.stale = this.response !== null; // keep showing the old result
      } else {
        // network failure: keep the last result, badge it as stale
        this.stale = this.response !== null;
        this.offline = true;
      }
    } finally {
      this.pending -= 1;
      this.onChange(this.snapshot());
    }
  }
}
