/** Entry point: wires the session loop to the document. */

import { Api } from "./api";
import { Session, SessionState } from "./session";
import { renderBoard, renderComplete, renderError } from "./view";

function sessionToken(): string {
  const existing = window.localStorage.getItem("relsets-session");
  if (existing) return existing;
  const token = Math.random().toString(36).slice(2, 12);
  window.localStorage.setItem("relsets-session", token);
  return token;
}

async function run(): Promise<void> {
  const container = document.querySelector<HTMLElement>("#app");
  if (!container) throw new Error("missing #app container");
  const session = new Session(sessionToken(), new Api(fetch.bind(window)));

  const show = (state: SessionState): void => {
    if (state.kind === "round") {
      const board = state.board;
      renderBoard(board, container, {
        onSubmit: () => {
          void session.submit(board).then(show);
        },
      });
    } else if (state.kind === "complete") {
      renderComplete(
        container,
        state.summary.completedRounds,
        state.summary.vigilanceFailures,
      );
    } else {
      renderError(container, state.message);
    }
  };

  show(await session.nextRound());
}

void run();
