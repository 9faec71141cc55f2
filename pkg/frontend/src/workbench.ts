/**
 * Workbench controller: owns the state, talks to the service, re-renders.
 *
 * All interaction flows through two delegated listeners on the root
 * element (click for buttons, change for inputs), dispatched on
 * `data-action` attributes — panels are re-rendered wholesale after
 * every action, so no per-element listeners need rebinding.
 *
 * Concurrency: `state.version` is the params-version token of the last
 * committed read. Previews are posted against it; commits are posted
 * against the `preview_version` the service returned. A 409 from either
 * means another session moved the model — we surface a reload prompt
 * instead of retrying.
 */

import { ApiError, StaleVersionError, WorkbenchClient } from './api.js';
import { initialState, resetSelections } from './state.js';
import type { BitChoice, Notice, WorkbenchState } from './state.js';
import type { EditRequestBody, PredictRequestBody } from './types.js';
import { renderPage } from './views.js';

function noticeFrom(err: unknown): Notice {
  if (err instanceof StaleVersionError) {
    return { kind: 'stale', text: err.detail };
  }
  if (err instanceof ApiError) {
    return { kind: 'error', text: `${err.detail} (HTTP ${err.status})` };
  }
  return { kind: 'error', text: String(err) };
}

export class Workbench {
  readonly state: WorkbenchState;

  /** Settles when the most recent click-initiated action finishes. */
  lastAction: Promise<void> = Promise.resolve();

  constructor(
    private readonly api: WorkbenchClient,
    private readonly root: HTMLElement,
  ) {
    this.state = initialState();
  }

  async start(): Promise<void> {
    this.root.addEventListener('click', (ev) => {
      this.lastAction = this.onClick(ev);
    });
    this.root.addEventListener('change', (ev) => {
      this.onChange(ev);
    });
    await this.guard(async () => {
      await this.refreshModelList();
      const rows = this.state.models;
      if (rows.length > 0) {
        await this.open(rows[rows.length - 1].hash);
      }
    });
  }

  render(): void {
    this.root.innerHTML = renderPage(this.state);
  }

  /** Run one user action: clear the old notice, render busy, report errors. */
  private async guard(fn: () => Promise<void>): Promise<void> {
    this.state.busy = true;
    this.state.notice = null;
    this.render();
    try {
      await fn();
    } catch (err) {
      this.state.notice = noticeFrom(err);
    } finally {
      this.state.busy = false;
      this.render();
    }
  }

  private async refreshModelList(): Promise<void> {
    const list = await this.api.listModels();
    this.state.models = list.models;
  }

  /** Load a model's card, AMEs, and edit log; reset per-model selections. */
  async open(ref: string): Promise<void> {
    const [cardRes, amesRes, editsRes] = await Promise.all([
      this.api.getCard(ref),
      this.api.getAmes(ref),
      this.api.getEdits(ref),
    ]);
    const state = this.state;
    state.selected = cardRes.model;
    state.version = cardRes.version;
    state.card = cardRes.card;
    state.ames = amesRes.ames;
    state.edits = editsRes.edits;
    resetSelections(state, cardRes.card.n);
  }

  private input(id: string): HTMLInputElement | HTMLSelectElement | null {
    return this.root.querySelector(`#${id}`);
  }

  private onChange(ev: Event): void {
    const el = ev.target as HTMLInputElement | HTMLSelectElement | null;
    if (!el || !el.id) {
      return;
    }
    const state = this.state;
    switch (el.id) {
      case 'whatif-t':
        state.whatIf.t = Math.max(1, Number(el.value) || 1);
        break;
      case 'composer-kind':
        state.composer.kind = el.value === 'ratio' ? 'ratio' : 'exclude';
        state.composer.preview = null;
        this.render();
        break;
      case 'composer-factor':
        state.composer.factor = Number(el.value);
        break;
      case 'composer-anchor':
        state.composer.anchor = Number(el.value);
        break;
      case 'composer-target':
        state.composer.target = Number(el.value);
        break;
      case 'composer-rho':
        state.composer.rho = Number(el.value);
        break;
      default:
        break;
    }
  }

  private async onClick(ev: Event): Promise<void> {
    const el = (ev.target as HTMLElement | null)?.closest<HTMLElement>('[data-action]');
    if (!el) {
      return;
    }
    const action = el.dataset.action;
    switch (action) {
      case 'open-model':
        await this.guard(() => this.open(el.dataset.hash ?? ''));
        break;
      case 'set-bit':
        this.setBit(Number(el.dataset.factor), el.dataset.bit ?? '1');
        break;
      case 'predict':
        await this.guard(() => this.evaluateWhatIf());
        break;
      case 'preview':
        await this.guard(() => this.previewEdit());
        break;
      case 'commit':
        await this.guard(() => this.commitEdit());
        break;
      case 'revert':
        await this.guard(() => this.revertEdit(el.dataset.editId ?? ''));
        break;
      case 'reload':
        await this.guard(async () => {
          if (this.state.selected) {
            await this.refreshModelList();
            await this.open(this.state.selected);
          }
        });
        break;
      default:
        break;
    }
  }

  private setBit(factor: number, raw: string): void {
    const bit: BitChoice = raw === 'u' ? 'u' : ((Number(raw) ? 1 : 0) as BitChoice);
    if (factor >= 0 && factor < this.state.whatIf.bits.length) {
      this.state.whatIf.bits[factor] = bit;
      this.render();
    }
  }

  private async evaluateWhatIf(): Promise<void> {
    const state = this.state;
    if (!state.selected) {
      return;
    }
    const tInput = this.input('whatif-t');
    if (tInput) {
      state.whatIf.t = Math.max(1, Number(tInput.value) || 1);
    }
    const bits = state.whatIf.bits;
    let body: PredictRequestBody;
    if (bits.every((b) => b !== 'u')) {
      body = { config: bits.map((b) => (b === 1 ? 1 : 0)) };
    } else {
      const partial: Record<number, number> = {};
      bits.forEach((b, id) => {
        if (b !== 'u') {
          partial[id] = b;
        }
      });
      body = { partial, t: state.whatIf.t };
    }
    state.whatIf.result = await this.api.predict(state.selected, body);
  }

  private async previewEdit(): Promise<void> {
    const state = this.state;
    if (!state.selected || !state.version) {
      return;
    }
    const c = state.composer;
    const body: EditRequestBody =
      c.kind === 'exclude'
        ? { kind: 'exclude', version: state.version, factor: c.factor }
        : {
            kind: 'ratio',
            version: state.version,
            anchor: c.anchor,
            target: c.target,
            rho: c.rho,
          };
    c.preview = await this.api.previewEdit(state.selected, body);
  }

  private async commitEdit(): Promise<void> {
    const state = this.state;
    const preview = state.composer.preview;
    if (!state.selected || !preview) {
      return;
    }
    const res = await this.api.commitEdit(state.selected, preview.preview_version);
    await this.refreshModelList();
    await this.open(res.model);
  }

  private async revertEdit(editId: string): Promise<void> {
    const state = this.state;
    if (!state.selected || !state.version || !editId) {
      return;
    }
    const res = await this.api.revertEdit(state.selected, editId, state.version);
    await this.refreshModelList();
    await this.open(res.model);
  }
}
