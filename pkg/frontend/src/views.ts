/**
 * HTML renderers for the workbench panels.
 *
 * Each function maps state -> markup string; no DOM access and no model
 * math happens here. Every displayed number carries a `data-field`
 * attribute naming the payload field it came from, which is what the
 * end-to-end test walks when diffing the page against the API.
 * Interactive elements carry `data-action` for the event delegation in
 * workbench.ts.
 */

import type { WorkbenchState } from './state.js';
import type { FactorAme, ModelCard, PreviewResponse } from './types.js';
import {
  escapeHtml,
  fmtCoef,
  fmtDiag,
  fmtHash,
  fmtMapValue,
  fmtProb,
  fmtResidual,
} from './format.js';

function panel(title: string, body: string, extra = ''): string {
  return `<section class="panel"${extra}>
    <h2>${escapeHtml(title)}</h2>
    ${body}
  </section>`;
}

export function renderNotice(state: WorkbenchState): string {
  const notice = state.notice;
  if (!notice) {
    return '';
  }
  const reload =
    notice.kind === 'stale'
      ? ' <button data-action="reload">Reload model</button>'
      : '';
  return `<div class="notice notice-${notice.kind}" data-field="notice">${escapeHtml(
    notice.text,
  )}${reload}</div>`;
}

export function renderModelBrowser(state: WorkbenchState): string {
  if (state.models.length === 0) {
    return panel('Models', '<p class="empty">no models in the store</p>');
  }
  const rows = state.models
    .map((m) => {
      const active = m.hash === state.selected ? ' class="active"' : '';
      return `<tr${active}>
        <td><button data-action="open-model" data-hash="${m.hash}">${fmtHash(m.hash)}</button></td>
        <td data-field="model-n-${m.hash}">${m.n}</td>
        <td class="scenario">${escapeHtml(m.scenario)}</td>
        <td data-field="model-edits-${m.hash}">${m.edits}</td>
      </tr>`;
    })
    .join('\n');
  return panel(
    'Models',
    `<table class="models">
      <thead><tr><th>model</th><th>N</th><th>scenario</th><th>edits</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`,
  );
}

function ameBar(f: FactorAme, maxAbs: number): string {
  const width = maxAbs > 0 ? (Math.abs(f.ame) / maxAbs) * 100 : 0;
  const side = f.ame >= 0 ? 'pos' : 'neg';
  return `<div class="bar-track"><div class="bar bar-${side}" style="width:${width.toFixed(1)}%"></div></div>`;
}

export function renderInspector(state: WorkbenchState): string {
  const card = state.card;
  if (!card) {
    return panel('Coefficients & AMEs', '<p class="empty">open a model to inspect it</p>');
  }
  const maxAbs = Math.max(...state.ames.map((f) => Math.abs(f.ame)), 0);
  const rows = state.ames
    .map(
      (f) => `<tr>
        <td class="name">${escapeHtml(f.name)}</td>
        <td class="num" data-field="beta-${f.id}">${fmtCoef(f.beta)}</td>
        <td class="num" data-field="ame-${f.id}">${fmtCoef(f.ame)}</td>
        <td class="bar-cell">${ameBar(f, maxAbs)}</td>
      </tr>`,
    )
    .join('\n');
  const gamma =
    card.gamma.length === 0
      ? '<span class="empty">none</span>'
      : card.gamma
          .map(
            (g) =>
              `<span class="chip" data-field="gamma-${g.pair[0]}-${g.pair[1]}">(${g.pair[0]},${g.pair[1]}) ${fmtCoef(g.value)}</span>`,
          )
          .join(' ');
  const map = Object.entries(card.map)
    .map(
      ([label, value]) =>
        `<span class="chip"><em>${escapeHtml(label)}</em> <span data-field="map-${label}">${fmtMapValue(value)}</span></span>`,
    )
    .join(' ');
  const diag = card.diagnostics;
  const mll =
    typeof diag.marginal_log_likelihood === 'number'
      ? fmtDiag(diag.marginal_log_likelihood)
      : 'n/a';
  return panel(
    'Coefficients & AMEs',
    `<p class="meta">
      <span class="scenario">${escapeHtml(card.scenario)}</span> —
      <span data-field="outcome-positive">${escapeHtml(card.outcomes.positive)}</span> vs
      <span data-field="outcome-negative">${escapeHtml(card.outcomes.negative)}</span>
    </p>
    <p class="meta">intercept α = <span class="num" data-field="alpha">${fmtCoef(card.alpha)}</span>
      · fit ${diag.converged ? 'converged' : 'did not converge'}
      in <span data-field="iterations">${diag.iterations ?? '?'}</span> iteration(s)
      · log-likelihood <span data-field="mll">${mll}</span></p>
    <table class="ames">
      <thead><tr><th>factor</th><th>β</th><th>AME</th><th></th></tr></thead>
      <tbody>${rows}</tbody>
    </table>
    <p class="meta">interactions: ${gamma}</p>
    <p class="meta">verbal map: ${map}</p>`,
    ' id="inspector"',
  );
}

export function renderWhatIf(state: WorkbenchState): string {
  const card = state.card;
  if (!card) {
    return panel('What-if', '<p class="empty">open a model first</p>');
  }
  const toggles = card.factors
    .map((f) => {
      const bit = state.whatIf.bits[f.id];
      const seg = ([label, value]: [string, 0 | 1 | 'u']) =>
        `<button data-action="set-bit" data-factor="${f.id}" data-bit="${value}"
          class="seg${bit === value ? ' on' : ''}">${label}</button>`;
      return `<div class="toggle-row">
        <span class="name">${escapeHtml(f.name)}</span>
        <span class="segs">${seg(['1', 1])}${seg(['0', 0])}${seg(['?', 'u'])}</span>
      </div>`;
    })
    .join('\n');
  const result = state.whatIf.result;
  const uncertain = state.whatIf.bits.some((b) => b === 'u');
  let verdict = '<p class="empty">set a condition and evaluate</p>';
  if (result) {
    const names = (id: number) => escapeHtml(card.factors[id]?.name ?? String(id));
    const observed = Object.entries(result.partition.observed)
      .map(([fid, bit]) => `${names(Number(fid))}=${bit}`)
      .join(', ');
    const open = result.partition.uncertain.map(names).join(', ');
    const se =
      result.standard_error === null
        ? '<span class="se">(exact)</span>'
        : `<span class="se">± <span data-field="standard-error">${fmtProb(result.standard_error)}</span></span>`;
    verdict = `<div class="verdict">
      <div class="prob">P(${escapeHtml(card.outcomes.positive)}) =
        <span data-field="probability">${fmtProb(result.probability)}</span>
        ${se}
      </div>
      <p class="meta"><span data-field="samples-used">${result.samples_used}</span> sample(s)
        · params <span data-field="predict-version">${fmtHash(result.version)}</span>
        · observed: ${observed || 'none'}
        · uncertain: ${open || 'none'}</p>
    </div>`;
  }
  return panel(
    'What-if',
    `${toggles}
    <div class="controls">
      <label>T <input id="whatif-t" type="number" min="1" value="${state.whatIf.t}"></label>
      <button class="primary" data-action="predict">Evaluate</button>
      ${uncertain ? '<span class="hint">uncertain factors are marginalized</span>' : ''}
      ${state.composer.preview ? '<span class="hint">preview pending — evaluates the previewed params</span>' : ''}
    </div>
    ${verdict}`,
    ' id="whatif"',
  );
}

function previewPane(card: ModelCard, preview: PreviewResponse): string {
  const residuals = Object.entries(preview.edit.constraint_residuals)
    .map(
      ([key, value]) =>
        `<li>${escapeHtml(key)} = <span class="num" data-field="residual-${key}">${fmtResidual(value)}</span></li>`,
    )
    .join('\n');
  const after = new Map(preview.ames_after.map((f) => [f.id, f]));
  const rows = preview.ames_before
    .map((b) => {
      const a = after.get(b.id);
      return `<tr>
        <td class="name">${escapeHtml(card.factors[b.id]?.name ?? String(b.id))}</td>
        <td class="num" data-field="preview-before-${b.id}">${fmtCoef(b.ame)}</td>
        <td class="num" data-field="preview-after-${b.id}">${a ? fmtCoef(a.ame) : '?'}</td>
      </tr>`;
    })
    .join('\n');
  return `<div class="preview">
    <p class="meta">previewing <strong data-field="preview-kind">${escapeHtml(preview.edit.kind)}</strong>
      edit <span data-field="preview-edit-id">${fmtHash(preview.edit.edit_id)}</span>
      · side effect <span class="num" data-field="side-effect">${fmtResidual(preview.edit.side_effect)}</span></p>
    <ul class="residuals">${residuals}</ul>
    <table class="ames">
      <thead><tr><th>factor</th><th>AME before</th><th>AME after</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>
    <div class="controls">
      <button class="primary" data-action="commit">Commit</button>
      <span class="hint">recompose to replace this preview</span>
    </div>
  </div>`;
}

export function renderComposer(state: WorkbenchState): string {
  const card = state.card;
  if (!card) {
    return panel('Edit composer', '<p class="empty">open a model first</p>');
  }
  const options = (selected: number) =>
    card.factors
      .map(
        (f) =>
          `<option value="${f.id}"${f.id === selected ? ' selected' : ''}>${f.id}: ${escapeHtml(f.name)}</option>`,
      )
      .join('');
  const c = state.composer;
  const fields =
    c.kind === 'exclude'
      ? `<label>factor <select id="composer-factor">${options(c.factor)}</select></label>`
      : `<label>anchor i <select id="composer-anchor">${options(c.anchor)}</select></label>
         <label>target j <select id="composer-target">${options(c.target)}</select></label>
         <label>ρ <input id="composer-rho" type="number" step="0.1" value="${c.rho}"></label>
         <span class="hint">constrain AME(j) = ρ · AME(i)</span>`;
  return panel(
    'Edit composer',
    `<div class="controls">
      <label>kind
        <select id="composer-kind" data-action="composer-kind">
          <option value="exclude"${c.kind === 'exclude' ? ' selected' : ''}>exclude factor</option>
          <option value="ratio"${c.kind === 'ratio' ? ' selected' : ''}>ratio constraint</option>
        </select>
      </label>
      ${fields}
      <button class="primary" data-action="preview">Preview</button>
    </div>
    ${c.preview ? previewPane(card, c.preview) : '<p class="empty">no pending preview</p>'}`,
    ' id="composer"',
  );
}

export function renderHistory(state: WorkbenchState): string {
  if (!state.card) {
    return panel('Edit history', '<p class="empty">open a model first</p>');
  }
  if (state.edits.length === 0) {
    return panel('Edit history', '<p class="empty">no edits recorded</p>', ' id="history"');
  }
  const rows = state.edits
    .map((e, idx) => {
      const residuals = Object.entries(e.constraint_residuals)
        .map(
          ([key, value]) =>
            `${escapeHtml(key)}=<span data-field="history-${idx}-residual-${key}">${fmtResidual(value)}</span>`,
        )
        .join(' ');
      return `<tr>
        <td>${idx + 1}</td>
        <td data-field="history-${idx}-kind">${escapeHtml(e.kind)}</td>
        <td data-field="history-${idx}-edit-id">${fmtHash(e.edit_id)}</td>
        <td>${escapeHtml(e.author)}</td>
        <td class="num">${residuals}</td>
        <td class="num" data-field="history-${idx}-side-effect">${fmtResidual(e.side_effect)}</td>
        <td><button data-action="revert" data-edit-id="${e.edit_id}">Revert</button></td>
      </tr>`;
    })
    .join('\n');
  return panel(
    'Edit history',
    `<table class="history">
      <thead><tr><th>#</th><th>kind</th><th>edit</th><th>author</th><th>residuals</th><th>side effect</th><th></th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`,
    ' id="history"',
  );
}

export function renderPage(state: WorkbenchState): string {
  const head = state.selected
    ? `<span class="meta">model <span data-field="selected">${fmtHash(state.selected)}</span>
       · params <span data-field="version">${state.version ? fmtHash(state.version) : '?'}</span></span>`
    : '<span class="meta">no model open</span>';
  return `<header>
    <h1>factorlens workbench</h1>
    ${head}
  </header>
  ${renderNotice(state)}
  <main class="${state.busy ? 'busy' : ''}">
    <div class="col side">${renderModelBrowser(state)}${renderHistory(state)}</div>
    <div class="col main">${renderInspector(state)}${renderWhatIf(state)}${renderComposer(state)}</div>
  </main>`;
}
