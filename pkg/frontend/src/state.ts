// Chat view state. Every image here came from a server response; the
// client never synthesizes or mutates scene content locally.

import type { ChatResponse, HistoryResponse } from "./api.js";

export interface TurnView {
  instruction: string;
  answerType: string;
  answerText: string;
  /** re-created image for accepted turns, null for rejections */
  image: string | null;
  /** working image before this turn was sent (for the before/after toggle) */
  before: string;
  showBefore: boolean;
  latencyMs: number;
}

export interface ChatViewState {
  sessionId: string | null;
  currentImage: string | null;
  turns: TurnView[];
  pending: boolean;
  error: string | null;
  /** instruction to retry after a transport failure */
  retryInstruction: string | null;
}

export function initialState(): ChatViewState {
  return {
    sessionId: null,
    currentImage: null,
    turns: [],
    pending: false,
    error: null,
    retryInstruction: null,
  };
}

export function sessionStarted(
  state: ChatViewState,
  sessionId: string,
  image: string,
): ChatViewState {
  return {
    ...initialState(),
    sessionId,
    currentImage: image,
  };
}

export function sendStarted(state: ChatViewState): ChatViewState {
  return { ...state, pending: true, error: null, retryInstruction: null };
}

export function chatArrived(
  state: ChatViewState,
  instruction: string,
  resp: ChatResponse,
): ChatViewState {
  const before = state.currentImage ?? "";
  const turn: TurnView = {
    instruction,
    answerType: resp.answer_type,
    answerText: resp.answer_text,
    image: resp.image_png_base64,
    before,
    showBefore: false,
    latencyMs: resp.latency_ms,
  };
  return {
    ...state,
    pending: false,
    turns: [...state.turns, turn],
    // an accepted turn advances the working image; rejections leave it alone
    currentImage: resp.image_png_base64 ?? state.currentImage,
  };
}

export function chatFailed(
  state: ChatViewState,
  message: string,
  retryInstruction: string | null,
): ChatViewState {
  return { ...state, pending: false, error: message, retryInstruction };
}

export function toggleBefore(state: ChatViewState, index: number): ChatViewState {
  const turns = state.turns.map((t, i) =>
    i === index ? { ...t, showBefore: !t.showBefore } : t,
  );
  return { ...state, turns };
}

/** Rebuild the whole view from the server's history (refresh path). */
export function fromHistory(
  sessionId: string,
  history: HistoryResponse,
): ChatViewState {
  let working = history.original_image_png_base64;
  const turns: TurnView[] = history.turns.map((t) => {
    const turn: TurnView = {
      instruction: t.instruction,
      answerType: t.answer_type,
      answerText: t.answer_text,
      image: t.image_png_base64,
      before: working,
      showBefore: false,
      latencyMs: t.latency_ms,
    };
    if (t.image_png_base64) working = t.image_png_base64;
    return turn;
  });
  return {
    sessionId,
    currentImage: history.current_image_png_base64,
    turns,
    pending: false,
    error: null,
    retryInstruction: null,
  };
}

export function isPng(file: { name: string; type: string }): boolean {
  return file.type === "image/png" || file.name.toLowerCase().endsWith(".png");
}
