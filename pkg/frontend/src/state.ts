/** Transcript state machine. One ask in flight at a time; a failed request
 * appends an error turn but never discards earlier turns. */

import type { Source } from './api.js';

export type TurnStatus = 'ok' | 'no_context' | 'error';

export interface ChatTurn {
  question: string;
  answer: string;
  expandedQuestion: string;
  sources: Source[];
  status: TurnStatus;
  latencyMs: number | null;
  errorMessage?: string;
}

export interface UiState {
  transcript: ChatTurn[];
  pending: boolean;
  banner: string | null;
}

export function initialState(): UiState {
  return { transcript: [], pending: false, banner: null };
}

export function canSubmit(state: UiState, draft: string): boolean {
  return !state.pending && draft.trim().length > 0;
}

export function startAsk(state: UiState): UiState {
  return { ...state, pending: true, banner: null };
}

export function finishAsk(state: UiState, turn: ChatTurn): UiState {
  return {
    transcript: [...state.transcript, turn],
    pending: false,
    banner: null,
  };
}

export function failAsk(
  state: UiState,
  question: string,
  status: number | null,
  message: string,
): UiState {
  const turn: ChatTurn = {
    question,
    answer: '',
    expandedQuestion: question,
    sources: [],
    status: 'error',
    latencyMs: null,
    errorMessage: message,
  };
  return {
    transcript: [...state.transcript, turn],
    pending: false,
    banner: status === 503 ? 'Service is still loading - retry in a moment.' : null,
  };
}
