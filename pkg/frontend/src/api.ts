/** Typed client for the ranking service HTTP API. */

import { FetchRoundResult, parseRound } from "./state";

export interface SubmitResult {
  accepted: boolean;
  vigilance: boolean | null;
}

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class Api {
  constructor(
    private readonly fetchImpl: FetchLike,
    private readonly base = "",
  ) {}

  async fetchRound(session: string): Promise<FetchRoundResult> {
    const url = `${this.base}/api/round?session=${encodeURIComponent(session)}`;
    const resp = await this.fetchImpl(url);
    if (!resp.ok) throw new ApiError(`round fetch failed`, resp.status);
    return parseRound(await resp.json());
  }

  async submitResponse(
    session: string,
    roundId: string,
    order: number[],
  ): Promise<SubmitResult> {
    const resp = await this.fetchImpl(`${this.base}/api/response`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session, round_id: roundId, order }),
    });
    if (resp.status === 409) {
      // The server already holds this round; treat as accepted.
      return { accepted: true, vigilance: null };
    }
    if (!resp.ok) throw new ApiError("submission failed", resp.status);
    const doc = (await resp.json()) as Record<string, unknown>;
    return {
      accepted: doc.accepted === true,
      vigilance: typeof doc.vigilance === "boolean" ? doc.vigilance : null,
    };
  }
}
