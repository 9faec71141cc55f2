/** Canned service payloads for unit tests — shapes match the live API. */

import type {
  AmesResponse,
  CardResponse,
  EditLogResponse,
  EditRecord,
  ModelList,
  PredictResponse,
  PreviewResponse,
} from '../src/types.js';

export const MODEL = 'a'.repeat(64);
export const VERSION = 'b'.repeat(64);
export const PREVIEW_VERSION = 'c'.repeat(64);

export function modelList(): ModelList {
  return {
    models: [
      { hash: MODEL, n: 3, scenario: 'a loan officer reviews an application', edits: 0 },
    ],
  };
}

export function cardResponse(): CardResponse {
  return {
    model: MODEL,
    version: VERSION,
    card: {
      version: MODEL,
      n: 3,
      scenario: 'a loan officer reviews an application',
      outcomes: { positive: 'approve', negative: 'deny' },
      alpha: -0.1234,
      factors: [
        { id: 0, name: 'stable income', beta: 1.2345, ame: 0.2213 },
        { id: 1, name: 'clean history', beta: -0.8123, ame: -0.1579 },
        { id: 2, name: 'low ratio', beta: 0.5012, ame: 0.0941 },
      ],
      gamma: [{ pair: [0, 1], value: 0.6021 }],
      map: {
        'very unlikely': 0.031,
        unlikely: 0.12,
        'somewhat unlikely': 0.317,
        neutral: 0.502,
        'somewhat likely': 0.683,
        likely: 0.874,
        'very likely': 0.969,
      },
      diagnostics: {
        converged: true,
        iterations: 23,
        marginal_log_likelihood: -41.0913,
        ablation: 'none',
      },
      edits: 0,
    },
  };
}

export function amesResponse(): AmesResponse {
  const card = cardResponse().card;
  return { model: MODEL, version: VERSION, ames: card.factors };
}

export function editLog(edits: EditRecord[] = []): EditLogResponse {
  return { model: MODEL, version: VERSION, edits };
}

export function predictResponse(): PredictResponse {
  return {
    model: MODEL,
    version: VERSION,
    probability: 0.7312,
    standard_error: null,
    samples_used: 1,
    partition: {
      n: 3,
      observed: { '0': 1, '1': 0, '2': 1 },
      uncertain: [],
      condition_text: 'what-if',
    },
  };
}

export function excludeRecord(): EditRecord {
  return {
    edit_id: 'e'.repeat(64),
    kind: 'exclude',
    pre_params: { alpha: -0.1234, beta: [1.2345, -0.8123, 0.5012], gamma: { '0,1': 0.6021 } },
    post_params: { alpha: -0.1234, beta: [1.2345, 0.0, 0.5012], gamma: {} },
    constraint_residuals: { ame_excluded: 0.0 },
    side_effect: 0.0412,
    timestamp: '2026-08-15T10:00:00+00:00',
    author: 'expert',
    details: { factor: 1 },
  };
}

export function previewResponse(): PreviewResponse {
  const before = amesResponse().ames;
  const after = before.map((f) => (f.id === 1 ? { ...f, beta: 0.0, ame: 0.0 } : f));
  return {
    model: MODEL,
    version: VERSION,
    preview_version: PREVIEW_VERSION,
    edit: excludeRecord(),
    ames_before: before,
    ames_after: after,
  };
}
