/** DOM rendering for the listening test: one item per screen, scenario and
 * overview always visible, neutral sample labels, and rating controls that
 * stay disabled until every sample has started playing. */

import { RatingValue } from "./api.js";
import { SessionFlow } from "./controller.js";

const MOS_LABELS: ReadonlyArray<[number, string]> = [
  [1, "1 - Bad"],
  [2, "2 - Poor"],
  [3, "3 - Fair"],
  [4, "4 - Good"],
  [5, "5 - Excellent"],
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ListenView {
  constructor(
    private readonly root: HTMLElement,
    private readonly onFinished?: () => void,
  ) {}

  renderError(message: string, retry: () => void): void {
    this.root.replaceChildren();
    const box = el("div", "error-box");
    box.appendChild(el("p", "error-text", message));
    const button = el("button", "retry-button", "Try again");
    button.addEventListener("click", retry);
    box.appendChild(button);
    this.root.appendChild(box);
  }

  renderDone(total: number): void {
    this.root.replaceChildren();
    const done = el("div", "done-screen");
    done.appendChild(el("h2", "done-title", "All done"));
    done.appendChild(
      el("p", "done-text", `You rated all ${total} items. Thank you for listening!`),
    );
    this.root.appendChild(done);
    this.onFinished?.();
  }

  renderItem(flow: SessionFlow): void {
    const item = flow.item;
    if (!item || item.complete) {
      this.renderDone(item?.total ?? flow.session.total);
      return;
    }
    this.root.replaceChildren();
    const screen = el("div", "item-screen");

    const progress = el(
      "p",
      "progress",
      `Item ${(item.position ?? 0) + 1} of ${flow.session.total}`,
    );
    screen.appendChild(progress);

    // scenario context is the point of the test design: always visible
    const scenario = el("section", "scenario-card");
    scenario.appendChild(el("h2", "scenario-name", item.scenario ?? ""));
    scenario.appendChild(el("p", "scenario-overview", item.overview ?? ""));
    screen.appendChild(scenario);
    screen.appendChild(el("p", "prompt-text", item.text ?? ""));

    const submit = el("button", "submit-button", "Submit rating") as HTMLButtonElement;
    submit.disabled = true;
    const hint = el("p", "submit-hint", "");
    const refresh = () => {
      submit.disabled = !flow.canSubmit();
      hint.textContent = flow.blockedReason() ?? "";
    };

    const players = el("div", "players");
    const isAb = item.kind === "ab";
    flow.audioRefs.forEach((ref, index) => {
      const card = el("div", "player-card");
      card.appendChild(
        el("h3", "player-label", isAb ? `Sample ${index + 1}` : "Sample"),
      );
      const audio = el("audio", "player-audio") as HTMLAudioElement;
      audio.controls = true;
      audio.preload = "auto";
      audio.src = flow.audioUrl(ref);
      audio.addEventListener("play", () => {
        flow.markPlaybackStarted(index);
        refresh();
      });
      audio.addEventListener("error", () => {
        // no silent skip: surface the failure and offer a reload
        if (card.querySelector(".audio-retry")) return;
        const retry = el("button", "audio-retry", "Audio failed to load - retry");
        retry.addEventListener("click", () => {
          retry.remove();
          audio.src = flow.audioUrl(ref);
          audio.load();
        });
        card.appendChild(retry);
      });
      card.appendChild(audio);
      players.appendChild(card);
    });
    screen.appendChild(players);

    const controls = el("div", "controls");
    const choices: ReadonlyArray<[RatingValue, string]> = isAb
      ? [
          ["A", "Prefer Sample 1"],
          ["B", "Prefer Sample 2"],
          ["Same", "No preference"],
        ]
      : MOS_LABELS;
    for (const [value, label] of choices) {
      const button = el("button", "choice-button", label);
      button.dataset.value = String(value);
      button.addEventListener("click", () => {
        flow.select(value);
        controls
          .querySelectorAll(".choice-button")
          .forEach((b) => b.classList.remove("selected"));
        button.classList.add("selected");
        refresh();
      });
      controls.appendChild(button);
    }
    screen.appendChild(controls);

    submit.addEventListener("click", async () => {
      if (!flow.canSubmit()) return;
      submit.disabled = true; // double-click guard on top of the flow's own
      hint.textContent = "Submitting...";
      try {
        await flow.submitAndAdvance();
        this.renderItem(flow);
      } catch (error) {
        hint.textContent = `Submit failed: ${(error as Error).message}. Your choice is kept - try again.`;
        refresh();
      }
    });
    screen.appendChild(submit);
    screen.appendChild(hint);

    this.root.appendChild(screen);
    refresh();
  }
}
