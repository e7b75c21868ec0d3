// View state and its transitions. Pure functions: the DOM layer renders
// whatever is here, and everything here came verbatim from service payloads.

import type { MemoRecordView, MessageResponse, TraceView } from "./api.js";

export interface ChatMessage {
  role: "user" | "bot";
  text: string;
}

export interface ErrorBanner {
  stage: string | null;
  message: string;
}

export interface ViewState {
  sessionId: string | null;
  messages: ChatMessage[];
  memo: MemoRecordView[];
  trace: TraceView | null;
  pending: boolean;
  draft: string;
  error: ErrorBanner | null;
}

export function initialState(): ViewState {
  return {
    sessionId: null,
    messages: [],
    memo: [],
    trace: null,
    pending: false,
    draft: "",
    error: null,
  };
}

export function withSession(state: ViewState, sessionId: string): ViewState {
  return { ...state, sessionId };
}

// One in-flight message per session: sending is disabled while pending,
// mirroring the service's 409 contract.
export function canSend(state: ViewState, text: string): boolean {
  return !state.pending && state.sessionId !== null && text.trim().length > 0;
}

export function beginSend(state: ViewState, text: string): ViewState {
  if (!canSend(state, text)) {
    throw new Error("cannot send: empty text, no session, or a message is in flight");
  }
  return {
    ...state,
    messages: [...state.messages, { role: "user", text }],
    pending: true,
    draft: text,
    error: null,
  };
}

export function applyReply(
  state: ViewState,
  response: MessageResponse,
  memo: MemoRecordView[],
): ViewState {
  return {
    ...state,
    messages: [...state.messages, { role: "bot", text: response.reply }],
    memo,
    trace: response.trace,
    pending: false,
    draft: "",
    error: null,
  };
}

// The optimistic user bubble stays (the service kept the line too) and the
// draft is preserved so the user can retry.
export function applyFailure(
  state: ViewState,
  stage: string | null,
  message: string,
): ViewState {
  return {
    ...state,
    pending: false,
    error: { stage, message },
  };
}
