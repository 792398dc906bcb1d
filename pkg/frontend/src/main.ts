import { ListenApi } from "./api.js";
import { SessionFlow } from "./controller.js";
import { ListenView } from "./view.js";

async function beginSession(root: HTMLElement, listenerId: string): Promise<void> {
  const api = new ListenApi("");
  const view = new ListenView(root);
  try {
    const flow = await SessionFlow.start(api, listenerId, window.localStorage);
    await flow.loadCurrent();
    view.renderItem(flow);
  } catch (error) {
    view.renderError(`Could not start the session: ${(error as Error).message}`, () => {
      void beginSession(root, listenerId);
    });
  }
}

function renderJoinScreen(root: HTMLElement): void {
  root.replaceChildren();
  const box = document.createElement("div");
  box.className = "join-screen";
  const title = document.createElement("h1");
  title.textContent = "Listening test";
  const label = document.createElement("label");
  label.textContent = "Listener name";
  const input = document.createElement("input");
  input.type = "text";
  input.placeholder = "e.g. listener-07";
  const start = document.createElement("button");
  start.textContent = "Start";
  start.addEventListener("click", () => {
    const listenerId = input.value.trim();
    if (listenerId) void beginSession(root, listenerId);
  });
  label.appendChild(input);
  box.append(title, label, start);
  root.appendChild(box);
}

const root = document.getElementById("app");
if (root) {
  if (window.localStorage.getItem("listen.session")) {
    void beginSession(root, "resumed");
  } else {
    renderJoinScreen(root);
  }
}
