/** Pure HTML renderers for chat turns and the block viewer. Keeping these
 * as string builders makes them testable without a browser. */

import type { BlockPayload } from './api.js';
import { escapeAttr, escapeHtml } from './charts.js';
import type { ChatTurn } from './state.js';

export function renderTurn(turn: ChatTurn, index: number): string {
  const parts: string[] = [`<article class="turn" data-turn="${index}">`];
  parts.push(`<div class="question">${escapeHtml(turn.question)}</div>`);
  if (turn.status === 'ok') {
    parts.push(`<div class="answer">${escapeHtml(turn.answer)}</div>`);
    if (turn.expandedQuestion && turn.expandedQuestion !== turn.question) {
      parts.push(
        `<details class="expanded"><summary>expanded question</summary>` +
          `<p>${escapeHtml(turn.expandedQuestion)}</p></details>`,
      );
    }
    const chips = turn.sources
      .map(
        (s) =>
          `<button class="chip" data-block-id="${escapeAttr(s.block_id)}" ` +
          `title="score ${s.score.toFixed(4)}">${escapeHtml(s.header || s.block_id)}</button>`,
      )
      .join('');
    parts.push(`<div class="sources">${chips}</div>`);
    if (turn.latencyMs !== null) {
      parts.push(`<div class="latency">${turn.latencyMs.toFixed(0)} ms</div>`);
    }
  } else if (turn.status === 'no_context') {
    parts.push(
      `<div class="answer empty-state">No relevant block found for this question.</div>`,
    );
  } else {
    parts.push(
      `<div class="answer error-state">Request failed: ${escapeHtml(turn.errorMessage ?? 'unknown error')}</div>`,
    );
  }
  parts.push('</article>');
  return parts.join('');
}

export function renderTranscript(turns: ChatTurn[]): string {
  return turns.map(renderTurn).join('');
}

export function renderBlockModal(block: BlockPayload): string {
  const keywords = block.metadata.keywords
    .map((k) => `<span class="kw">${escapeHtml(k)}</span>`)
    .join(' ');
  return (
    `<h2>${escapeHtml(block.header)}</h2>` +
    `<p class="block-text">${escapeHtml(block.text)}</p>` +
    `<div class="keywords">${keywords}</div>` +
    `<dl class="provenance">` +
    `<dt>block</dt><dd>${escapeHtml(block.block_id)}</dd>` +
    `<dt>document</dt><dd>${escapeHtml(block.doc_id)} (#${block.seq})</dd>` +
    `<dt>byte span</dt><dd>${block.byte_span[0]}-${block.byte_span[1]}</dd>` +
    `<dt>characters</dt><dd>${block.metadata.char_count}</dd>` +
    `<dt>created</dt><dd>${escapeHtml(block.metadata.created_at)}</dd>` +
    `</dl>`
  );
}

export function renderBlockNotFound(blockId: string): string {
  return `<h2>Block not found</h2><p class="block-text">No block with id ${escapeHtml(blockId)} exists.</p>`;
}
