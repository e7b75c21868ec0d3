// Page wiring: DOM events in, rendered panels out. All state transitions
// happen through state.ts on completed HTTP round-trips.

import { ApiClient, ServiceError, SessionGoneError } from "./api.js";
import {
  applyFailure,
  applyReply,
  beginSend,
  canSend,
  initialState,
  withSession,
  type ViewState,
} from "./state.js";
import {
  renderError,
  renderMemoPanel,
  renderMessages,
  renderTracePanel,
} from "./render.js";

const api = new ApiClient("");
let state: ViewState = initialState();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const transcript = el<HTMLDivElement>("transcript");
const memoPanel = el<HTMLDivElement>("memo-panel");
const tracePanel = el<HTMLDivElement>("trace-panel");
const errorSlot = el<HTMLDivElement>("error-slot");
const input = el<HTMLTextAreaElement>("input");
const sendButton = el<HTMLButtonElement>("send");
const sessionLabel = el<HTMLSpanElement>("session-label");

function render(): void {
  transcript.innerHTML = renderMessages(state.messages);
  memoPanel.innerHTML = renderMemoPanel(state.memo);
  tracePanel.innerHTML = renderTracePanel(state.trace);
  errorSlot.innerHTML = renderError(state.error);
  sendButton.disabled = state.pending || input.value.trim().length === 0;
  sessionLabel.textContent = state.sessionId ?? "connecting...";
  transcript.scrollTop = transcript.scrollHeight;
  for (const row of memoPanel.querySelectorAll<HTMLTableRowElement>(".memo-record")) {
    row.addEventListener("click", () => {
      const start = row.dataset.start;
      document.getElementById(`line-${start}`)?.scrollIntoView({ behavior: "smooth" });
    });
  }
}

async function resetSession(): Promise<void> {
  state = withSession(initialState(), await api.createSession());
  render();
}

async function send(): Promise<void> {
  const text = input.value.trim();
  if (!canSend(state, text)) {
    return;
  }
  const sessionId = state.sessionId as string;
  state = beginSend(state, text);
  input.value = "";
  render();
  try {
    const response = await api.sendMessage(sessionId, text);
    const memo = await api.fetchMemo(sessionId);
    state = applyReply(state, response, memo);
  } catch (error) {
    if (error instanceof SessionGoneError) {
      await resetSession();
      state = applyFailure(state, null, "session expired; started a fresh one");
      input.value = text;
      render();
      return;
    }
    if (error instanceof ServiceError) {
      state = applyFailure(state, error.stage, error.message);
    } else {
      state = applyFailure(state, null, String(error));
    }
    input.value = state.draft; // keep the text for retry
  }
  render();
}

sendButton.addEventListener("click", () => {
  void send();
});
input.addEventListener("keydown", (event) => {
  if (event.key === "Enter" && !event.shiftKey) {
    event.preventDefault();
    void send();
  }
});
input.addEventListener("input", () => {
  sendButton.disabled = state.pending || input.value.trim().length === 0;
});

void resetSession();
