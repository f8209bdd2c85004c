/** DOM wiring for the Ask window, block viewer, and metrics dashboard. */

import { ApiClient, ApiError, MetricsRow } from './api.js';
import { METRICS, MetricName, buildSeries, clientIds, renderLineChart } from './charts.js';
import { renderBlockModal, renderBlockNotFound, renderTranscript } from './render.js';
import { canSubmit, failAsk, finishAsk, initialState, startAsk, UiState } from './state.js';

export interface App {
  submitQuestion(): Promise<void>;
  openBlock(blockId: string): Promise<void>;
  pollMetrics(): Promise<void>;
  loadContexts(): Promise<void>;
  readonly state: UiState;
}

export function createApp(api: ApiClient, doc: Document = document): App {
  let state: UiState = initialState();
  let metricsRows: MetricsRow[] = [];
  const selectedClients = new Set<string>(['global']);

  const byId = (id: string): HTMLElement => {
    const node = doc.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node;
  };

  const el = {
    transcript: byId('transcript'),
    form: byId('ask-form') as HTMLFormElement,
    input: byId('question') as HTMLInputElement,
    submit: byId('submit') as HTMLButtonElement,
    context: byId('context') as HTMLSelectElement,
    banner: byId('banner'),
    charts: byId('charts'),
    clientToggles: byId('client-toggles'),
    modal: byId('modal') as HTMLDialogElement,
    modalBody: byId('modal-body'),
  };

  function setState(next: UiState): void {
    state = next;
    el.transcript.innerHTML = renderTranscript(state.transcript);
    el.transcript.scrollTop = el.transcript.scrollHeight;
    el.banner.textContent = state.banner ?? '';
    el.banner.hidden = !state.banner;
    syncSubmit();
  }

  function syncSubmit(): void {
    el.submit.disabled = !canSubmit(state, el.input.value);
  }

  async function submitQuestion(): Promise<void> {
    const question = el.input.value.trim();
    if (!canSubmit(state, question)) return;
    const context = el.context.value || undefined;
    setState(startAsk(state));
    try {
      const resp = await api.ask(question, context);
      setState(
        finishAsk(state, {
          question,
          answer: resp.answer,
          expandedQuestion: resp.expanded_question,
          sources: resp.sources,
          status: resp.status,
          latencyMs: resp.latency_ms,
        }),
      );
      el.input.value = '';
    } catch (err) {
      const status = err instanceof ApiError ? err.status : null;
      const message = err instanceof Error ? err.message : String(err);
      setState(failAsk(state, question, status, message));
    }
    syncSubmit();
  }

  async function openBlock(blockId: string): Promise<void> {
    try {
      const block = await api.block(blockId);
      el.modalBody.innerHTML = renderBlockModal(block);
    } catch {
      el.modalBody.innerHTML = renderBlockNotFound(blockId);
    }
    if (typeof el.modal.showModal === 'function') el.modal.showModal();
    else el.modal.setAttribute('open', '');
  }

  function redrawCharts(): void {
    if (metricsRows.length === 0) {
      el.charts.innerHTML = '<p class="placeholder">No training history yet.</p>';
      el.clientToggles.innerHTML = '';
      return;
    }
    const ids = clientIds(metricsRows);
    el.clientToggles.innerHTML = ids
      .map((id) => {
        const checked = selectedClients.has(id) ? 'checked' : '';
        return (
          `<label class="toggle"><input type="checkbox" data-client="${id}" ${checked}/>` +
          `${id === 'global' ? 'global' : `client ${id}`}</label>`
        );
      })
      .join('');
    const selected = ids.filter((id) => selectedClients.has(id));
    el.charts.innerHTML = METRICS.map((metric: MetricName) =>
      renderLineChart(buildSeries(metricsRows, metric, selected), metric),
    ).join('');
  }

  async function pollMetrics(): Promise<void> {
    try {
      const { rows } = await api.metrics();
      const changed = JSON.stringify(rows) !== JSON.stringify(metricsRows);
      metricsRows = rows;
      if (changed || !el.charts.innerHTML) redrawCharts();
    } catch {
      /* metrics polling is best-effort; keep the last chart */
    }
  }

  async function loadContexts(): Promise<void> {
    try {
      const { contexts } = await api.contexts();
      el.context.innerHTML =
        '<option value="">all contexts</option>' +
        contexts.map((c) => `<option value="${c.name}">${c.name}</option>`).join('');
    } catch {
      el.context.innerHTML = '<option value="">all contexts</option>';
    }
  }

  el.form.addEventListener('submit', (ev) => {
    ev.preventDefault();
    void submitQuestion();
  });
  el.input.addEventListener('input', syncSubmit);
  el.transcript.addEventListener('click', (ev) => {
    const chip = (ev.target as HTMLElement).closest?.('.chip') as HTMLElement | null;
    if (chip?.dataset.blockId) void openBlock(chip.dataset.blockId);
  });
  el.clientToggles.addEventListener('change', (ev) => {
    const box = ev.target as HTMLInputElement;
    const id = box.dataset.client;
    if (!id) return;
    if (box.checked) selectedClients.add(id);
    else selectedClients.delete(id);
    redrawCharts();
  });
  el.modal.addEventListener('click', (ev) => {
    if (ev.target === el.modal) el.modal.close();
  });
  setState(state);

  return {
    submitQuestion,
    openBlock,
    pollMetrics,
    loadContexts,
    get state() {
      return state;
    },
  };
}

export function bootstrap(): void {
  const app = createApp(new ApiClient(''));
  void app.loadContexts();
  void app.pollMetrics();
  window.setInterval(() => void app.pollMetrics(), 5000);
}

if (typeof document !== 'undefined' && document.getElementById('ask-form')) {
  bootstrap();
}
