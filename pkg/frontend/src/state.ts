/** Client-side round state: payload validation and the ranking board. */

export interface RoundItem {
  id: string;
  label: string;
  thumbnail?: string;
}

export interface RoundPayload {
  round_id: string;
  n: number;
  reference: RoundItem[];
  queries: RoundItem[];
}

export type FetchRoundResult =
  | { kind: "round"; round: RoundPayload }
  | { kind: "complete" };

export const SLOT_COUNT = 5;

export const SLOT_LABELS = [
  "Least Similar",
  "Less Similar",
  "Neutral",
  "More Similar",
  "Most Similar",
];

/** Server-side fields that must never reach the browser. */
export const FORBIDDEN_FIELDS = [
  "ground_truth_order",
  "query_distances",
  "reference_vector",
  "is_vigilance",
  "planted_similar_id",
  "planted_dissimilar_id",
];

export class PayloadError extends Error {}

function scanForbidden(doc: unknown, path: string): void {
  if (Array.isArray(doc)) {
    doc.forEach((v, i) => scanForbidden(v, `${path}[${i}]`));
  } else if (doc !== null && typeof doc === "object") {
    for (const [key, value] of Object.entries(doc)) {
      if (FORBIDDEN_FIELDS.includes(key)) {
        throw new PayloadError(`server leaked field ${key} at ${path}`);
      }
      scanForbidden(value, `${path}.${key}`);
    }
  }
}

function parseItem(doc: unknown, what: string): RoundItem {
  const obj = doc as Record<string, unknown>;
  if (!obj || typeof obj.id !== "string" || typeof obj.label !== "string") {
    throw new PayloadError(`malformed ${what} item`);
  }
  const item: RoundItem = { id: obj.id, label: obj.label };
  if (typeof obj.thumbnail === "string") item.thumbnail = obj.thumbnail;
  return item;
}

export function parseRound(doc: unknown): FetchRoundResult {
  if (doc === null || typeof doc !== "object") {
    throw new PayloadError("round payload is not an object");
  }
  scanForbidden(doc, "$");
  const obj = doc as Record<string, unknown>;
  if (obj.status === "complete") return { kind: "complete" };
  if (obj.status !== "ok") throw new PayloadError(`unexpected status ${obj.status}`);
  if (typeof obj.round_id !== "string" || !obj.round_id) {
    throw new PayloadError("missing round_id");
  }
  if (!Array.isArray(obj.reference) || obj.reference.length < 1) {
    throw new PayloadError("missing reference items");
  }
  if (!Array.isArray(obj.queries) || obj.queries.length !== SLOT_COUNT) {
    throw new PayloadError(`expected ${SLOT_COUNT} queries`);
  }
  const queries = obj.queries.map((q) => parseItem(q, "query"));
  if (new Set(queries.map((q) => q.id)).size !== SLOT_COUNT) {
    throw new PayloadError("duplicate query ids");
  }
  return {
    kind: "round",
    round: {
      round_id: obj.round_id,
      n: typeof obj.n === "number" ? obj.n : obj.reference.length,
      reference: obj.reference.map((r) => parseItem(r, "reference")),
      queries,
    },
  };
}

export type Phase = "ranking" | "submitting" | "submitted";

/**
 * One round's board. `order[slot]` is the served-query index occupying the
 * slot, slot 0 = Least Similar up to slot 4 = Most Similar. Submission is
 * blocked until the user has reordered at least once, and while a
 * submission is in flight.
 */
export class Board {
  readonly round: RoundPayload;
  order: number[];
  touched = false;
  phase: Phase = "ranking";

  constructor(round: RoundPayload) {
    this.round = round;
    this.order = [0, 1, 2, 3, 4];
  }

  /** Move the item at `from` to `to`, shifting the items in between. */
  move(from: number, to: number): void {
    if (this.phase !== "ranking") return;
    if (from < 0 || from >= SLOT_COUNT || to < 0 || to >= SLOT_COUNT) {
      throw new RangeError(`slot out of range: ${from} -> ${to}`);
    }
    if (from === to) return;
    const [item] = this.order.splice(from, 1);
    this.order.splice(to, 0, item);
    this.touched = true;
  }

  slotItems(): RoundItem[] {
    return this.order.map((i) => this.round.queries[i]);
  }

  canSubmit(): boolean {
    return this.touched && this.phase === "ranking";
  }

  /** Claim the single in-flight submission; false if not allowed. */
  beginSubmit(): boolean {
    if (!this.canSubmit()) return false;
    this.phase = "submitting";
    return true;
  }

  /** Network failure: allow a retry with the same round_id. */
  failSubmit(): void {
    if (this.phase === "submitting") this.phase = "ranking";
  }

  completeSubmit(): void {
    this.phase = "submitted";
  }
}
