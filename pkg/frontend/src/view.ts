/** DOM rendering for one board: reference strip, five ranked slots with
 * drag-and-drop plus arrow-key reordering, and a guarded submit button. */

import { Board, RoundItem, SLOT_COUNT, SLOT_LABELS } from "./state";

export interface ViewCallbacks {
  onSubmit(): void;
}

function itemNode(item: RoundItem): HTMLElement {
  const div = document.createElement("div");
  div.className = "item";
  if (item.thumbnail) {
    const img = document.createElement("img");
    img.src = item.thumbnail;
    img.alt = item.label;
    div.appendChild(img);
  }
  const label = document.createElement("span");
  label.textContent = item.label;
  div.appendChild(label);
  return div;
}

export function renderBoard(
  board: Board,
  container: HTMLElement,
  callbacks: ViewCallbacks,
): void {
  container.textContent = "";

  const reference = document.createElement("div");
  reference.className = "reference";
  const heading = document.createElement("h2");
  heading.textContent = "Reference";
  reference.appendChild(heading);
  for (const item of board.round.reference) {
    reference.appendChild(itemNode(item));
  }
  container.appendChild(reference);

  const slots = document.createElement("ol");
  slots.className = "slots";
  container.appendChild(slots);

  const submit = document.createElement("button");
  submit.className = "submit";
  submit.textContent = "Submit ranking";

  const rerender = () => renderBoard(board, container, callbacks);

  board.slotItems().forEach((item, slot) => {
    const li = document.createElement("li");
    li.className = "slot";
    li.dataset.queryId = item.id;

    const tag = document.createElement("span");
    tag.className = "slot-label";
    tag.textContent = SLOT_LABELS[slot];
    li.appendChild(tag);

    const node = itemNode(item);
    node.draggable = true;
    node.tabIndex = 0;
    node.addEventListener("dragstart", (ev) => {
      ev.dataTransfer?.setData("text/plain", String(slot));
    });
    node.addEventListener("keydown", (ev) => {
      if (ev.key !== "ArrowUp" && ev.key !== "ArrowDown") return;
      ev.preventDefault();
      const to = ev.key === "ArrowUp" ? slot - 1 : slot + 1;
      if (to < 0 || to >= SLOT_COUNT) return;
      board.move(slot, to);
      rerender();
      const moved = container.querySelectorAll<HTMLElement>(".slot .item")[to];
      moved?.focus();
    });
    li.appendChild(node);

    li.addEventListener("dragover", (ev) => ev.preventDefault());
    li.addEventListener("drop", (ev) => {
      ev.preventDefault();
      const from = Number(ev.dataTransfer?.getData("text/plain"));
      if (Number.isInteger(from)) {
        board.move(from, slot);
        rerender();
      }
    });
    slots.appendChild(li);
  });

  submit.disabled = !board.canSubmit();
  submit.addEventListener("click", () => callbacks.onSubmit());
  container.appendChild(submit);
}

export function renderComplete(
  container: HTMLElement,
  completedRounds: number,
  vigilanceFailures: number,
): void {
  container.textContent = "";
  const done = document.createElement("p");
  done.className = "complete";
  done.textContent =
    `All done: ${completedRounds} rounds submitted. ` +
    (vigilanceFailures > 0
      ? `${vigilanceFailures} attention check(s) missed.`
      : "All attention checks passed.");
  container.appendChild(done);
}

export function renderError(container: HTMLElement, message: string): void {
  container.textContent = "";
  const p = document.createElement("p");
  p.className = "error";
  p.textContent = `Something went wrong: ${message}`;
  container.appendChild(p);
}
