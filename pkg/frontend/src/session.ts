/** Session loop: fetch rounds, submit boards, track the end-of-run summary.
 *
 * Vigilance verdicts are collected silently and surfaced only in the final
 * summary, never during play.
 */

import { Api } from "./api";
import { Board, parseRound } from "./state";

export interface SessionSummary {
  completedRounds: number;
  vigilanceFailures: number;
}

export type SessionState =
  | { kind: "round"; board: Board }
  | { kind: "complete"; summary: SessionSummary }
  | { kind: "error"; message: string };

export class Session {
  private completedRounds = 0;
  private vigilanceFailures = 0;
  private inFlight = false;

  constructor(
    readonly token: string,
    private readonly api: Api,
  ) {}

  async nextRound(): Promise<SessionState> {
    try {
      const result = await this.api.fetchRound(this.token);
      if (result.kind === "complete") {
        return { kind: "complete", summary: this.summary() };
      }
      return { kind: "round", board: new Board(result.round) };
    } catch (err) {
      return { kind: "error", message: String(err) };
    }
  }

  /** Submit the board once; concurrent calls are dropped. */
  async submit(board: Board): Promise<SessionState> {
    if (this.inFlight || !board.beginSubmit()) {
      return { kind: "round", board };
    }
    this.inFlight = true;
    try {
      const result = await this.api.submitResponse(
        this.token,
        board.round.round_id,
        board.order,
      );
      board.completeSubmit();
      this.completedRounds += 1;
      if (result.vigilance === false) this.vigilanceFailures += 1;
      return this.nextRound();
    } catch (err) {
      board.failSubmit();
      return { kind: "round", board };
    } finally {
      this.inFlight = false;
    }
  }

  summary(): SessionSummary {
    return {
      completedRounds: this.completedRounds,
      vigilanceFailures: this.vigilanceFailures,
    };
  }
}

export { parseRound };
